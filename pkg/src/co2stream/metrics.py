"""Detection-evaluation suite: IoU matching, PR/F1 curves, AP, mAP, confusion.

Average precision uses all-point interpolation (area under the precision
envelope as a function of recall). Matching is the usual protocol: predictions
in descending confidence order each claim the unmatched same-class ground
truth with the highest IoU at or above the threshold, one-to-one per image.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np
from shapely.geometry import Polygon as _ShapelyPolygon

from . import ingest
from .ingest import BoundingBox, PolygonMask, SchemaViolation
from .tracker import box_iou


class DegeneratePolygon(Exception):
    """Polygon has zero area; IoU is undefined."""


class MissingImageSize(Exception):
    """Normalization was requested but a sample carries no image dimensions."""


class IoUKind(Enum):
    BOX = "box"
    MASK = "mask"


@dataclass(frozen=True)
class GTObject:
    cls: str
    box: BoundingBox
    mask: PolygonMask | None = None


@dataclass(frozen=True)
class GroundTruthSample:
    image_id: str
    objects: tuple[GTObject, ...]
    image_size: tuple[int, int] | None = None


@dataclass(frozen=True)
class Prediction:
    image_id: str
    cls: str
    confidence: float
    box: BoundingBox
    mask: PolygonMask | None = None


def shoelace_area(vertices: Sequence[tuple[float, float]]) -> float:
    """Absolute polygon area via the shoelace formula."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return abs(total) / 2.0


def polygon_iou(a: PolygonMask, b: PolygonMask) -> float:
    """Exact mask IoU via polygon clipping; areas from the shoelace formula."""
    area_a = shoelace_area(a.vertices)
    area_b = shoelace_area(b.vertices)
    if area_a == 0.0 or area_b == 0.0:
        raise DegeneratePolygon("zero-area polygon")
    inter = _ShapelyPolygon(a.vertices).intersection(_ShapelyPolygon(b.vertices)).area
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def rasterized_polygon_iou(a: PolygonMask, b: PolygonMask, resolution: int = 256) -> float:
    """Approximate mask IoU by sampling a grid; cross-check for polygon_iou."""

    def contains(vertices, xs, ys):
        # Even-odd crossing test, vectorized over sample points.
        inside = np.zeros(xs.shape, dtype=bool)
        n = len(vertices)
        for i in range(n):
            x0, y0 = vertices[i]
            x1, y1 = vertices[(i + 1) % n]
            crosses = (y0 > ys) != (y1 > ys)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (xs < x_at)
        return inside

    all_pts = list(a.vertices) + list(b.vertices)
    min_x = min(p[0] for p in all_pts)
    max_x = max(p[0] for p in all_pts)
    min_y = min(p[1] for p in all_pts)
    max_y = max(p[1] for p in all_pts)
    if max_x == min_x or max_y == min_y:
        raise DegeneratePolygon("zero-extent sample region")
    xs = np.linspace(min_x, max_x, resolution)
    ys = np.linspace(min_y, max_y, resolution)
    gx, gy = np.meshgrid(xs, ys)
    in_a = contains(a.vertices, gx, gy)
    in_b = contains(b.vertices, gx, gy)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def _pair_iou(pred: Prediction, gt: GTObject, kind: IoUKind) -> float:
    if kind == IoUKind.BOX:
        return box_iou(pred.box, gt.box)
    if pred.mask is None or gt.mask is None:
        return 0.0
    return polygon_iou(pred.mask, gt.mask)


@dataclass
class MatchResult:
    """TP flags aligned with the input predictions; matched flags with the GTs."""

    pred_is_tp: list[bool]
    gt_matched: list[bool]


def _flatten_gt(gts: Iterable[GroundTruthSample]) -> list[tuple[str, GTObject]]:
    return [(s.image_id, obj) for s in gts for obj in s.objects]


def match_predictions(
    preds: Sequence[Prediction],
    gts: Iterable[GroundTruthSample],
    iou_thresh: float,
    kind: IoUKind = IoUKind.BOX,
) -> MatchResult:
    """One-to-one greedy matching by descending confidence within each image."""
    gt_list = _flatten_gt(gts)
    gt_matched = [False] * len(gt_list)
    pred_is_tp = [False] * len(preds)
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    for pi in order:
        pred = preds[pi]
        best_iou = 0.0
        best_gi = -1
        for gi, (image_id, obj) in enumerate(gt_list):
            if gt_matched[gi] or image_id != pred.image_id or obj.cls != pred.cls:
                continue
            iou = _pair_iou(pred, obj, kind)
            if iou >= iou_thresh and iou > best_iou:
                best_iou = iou
                best_gi = gi
        if best_gi >= 0:
            gt_matched[best_gi] = True
            pred_is_tp[pi] = True
    return MatchResult(pred_is_tp, gt_matched)


def average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP from TP flags in descending-confidence order.

    Returns 0 when predictions exist but there is no ground truth, and NaN
    (meaning undefined, to be excluded from means) when both are empty.
    """
    if n_gt == 0:
        return 0.0 if len(flags) else float("nan")
    if not len(flags):
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=float))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


@dataclass
class MapResult:
    per_class: dict[str, float]
    mean_ap: float


def _gt_count_by_class(gts: Iterable[GroundTruthSample]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for _, obj in _flatten_gt(gts):
        counts[obj.cls] = counts.get(obj.cls, 0) + 1
    return counts


def map_at(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruthSample],
    iou_thresh: float,
    kind: IoUKind = IoUKind.BOX,
) -> MapResult:
    """Per-class AP at one IoU threshold; mean over classes with ground truth."""
    gt_counts = _gt_count_by_class(gts)
    per_class: dict[str, float] = {}
    for cls in sorted(gt_counts):
        cls_preds = sorted(
            (p for p in preds if p.cls == cls), key=lambda p: -p.confidence
        )
        result = match_predictions(cls_preds, gts, iou_thresh, kind)
        per_class[cls] = average_precision(result.pred_is_tp, gt_counts[cls])
    mean_ap = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return MapResult(per_class, mean_ap)


COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def map_50_95(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruthSample],
    kind: IoUKind = IoUKind.BOX,
) -> float:
    """Mean of map_at over IoU thresholds 0.50, 0.55, ..., 0.95."""
    values = [map_at(preds, gts, t, kind).mean_ap for t in COCO_THRESHOLDS]
    return float(np.mean(values))


@dataclass(frozen=True)
class CurvePoint:
    confidence: float
    precision: float
    recall: float
    f1: float


@dataclass
class PRCurve:
    points: list[CurvePoint]
    per_class_points: dict[str, list[CurvePoint]]
    ap_per_class: dict[str, float]
    map_value: float
    best_confidence: float
    best_f1: float


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


def _sweep(preds: Sequence[Prediction], flags: Sequence[bool], n_gt: int) -> list[CurvePoint]:
    """Precision/recall/F1 at every distinct confidence threshold (ascending)."""
    if not preds:
        return []
    conf = np.array([p.confidence for p in preds])
    order = np.argsort(-conf, kind="stable")
    conf_desc = conf[order]
    flag_desc = np.asarray(flags, dtype=float)[order]
    tp_cum = np.cumsum(flag_desc)
    points = []
    for t in sorted(set(conf.tolist())):
        kept = int(np.searchsorted(-conf_desc, -t, side="right"))
        tp = tp_cum[kept - 1] if kept > 0 else 0.0
        precision = tp / kept if kept > 0 else 0.0
        recall = tp / n_gt if n_gt > 0 else 0.0
        points.append(CurvePoint(t, float(precision), float(recall), _f1(precision, recall)))
    return points


def f1_confidence_curve(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruthSample],
    iou_thresh: float,
    kind: IoUKind = IoUKind.BOX,
) -> PRCurve:
    """Threshold sweep over all distinct confidences, plus per-class curves.

    The all-class sweep is global; per-class curves sweep their own
    confidences. best_confidence is the lowest threshold attaining the
    maximum all-class F1.
    """
    gt_counts = _gt_count_by_class(gts)
    n_gt_total = sum(gt_counts.values())
    global_match = match_predictions(preds, gts, iou_thresh, kind)
    points = _sweep(preds, global_match.pred_is_tp, n_gt_total)

    per_class_points: dict[str, list[CurvePoint]] = {}
    classes = sorted(set(gt_counts) | {p.cls for p in preds})
    for cls in classes:
        cls_idx = [i for i, p in enumerate(preds) if p.cls == cls]
        cls_preds = [preds[i] for i in cls_idx]
        cls_flags = [global_match.pred_is_tp[i] for i in cls_idx]
        per_class_points[cls] = _sweep(cls_preds, cls_flags, gt_counts.get(cls, 0))

    map_result = map_at(preds, gts, iou_thresh, kind)
    best_conf, best_f1 = 0.0, 0.0
    for pt in points:  # ascending confidence; strict > keeps the lowest tie
        if pt.f1 > best_f1:
            best_conf, best_f1 = pt.confidence, pt.f1
    return PRCurve(
        points=points,
        per_class_points=per_class_points,
        ap_per_class=map_result.per_class,
        map_value=map_result.mean_ap,
        best_confidence=best_conf,
        best_f1=best_f1,
    )


class MatrixMode(Enum):
    RAW = "raw"
    ROW_NORMALIZED = "row_normalized"


@dataclass
class ConfusionMatrix:
    """Square tally over classes plus a trailing background row/column."""

    classes: list[str]
    matrix: np.ndarray
    mode: MatrixMode

    @property
    def background_index(self) -> int:
        return len(self.classes)

    def normalized(self) -> "ConfusionMatrix":
        out = self.matrix.astype(float).copy()
        sums = out.sum(axis=1, keepdims=True)
        nonzero = sums[:, 0] > 0
        out[nonzero] = out[nonzero] / sums[nonzero]
        return ConfusionMatrix(list(self.classes), out, MatrixMode.ROW_NORMALIZED)


def confusion_matrix(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruthSample],
    conf_thresh: float = 0.25,
    iou_thresh: float = 0.45,
    mode: MatrixMode = MatrixMode.RAW,
    classes: Sequence[str] | None = None,
    kind: IoUKind = IoUKind.BOX,
) -> ConfusionMatrix:
    """Rows are actual classes, columns predicted; matching is class-agnostic.

    Unmatched ground truths land in (class, background); unmatched surviving
    predictions in (background, class).
    """
    kept = [p for p in preds if p.confidence >= conf_thresh]
    gt_list = _flatten_gt(gts)
    if classes is None:
        classes = sorted({o.cls for _, o in gt_list} | {p.cls for p in kept})
    class_index = {c: i for i, c in enumerate(classes)}
    unknown = ({o.cls for _, o in gt_list} | {p.cls for p in kept}) - set(classes)
    if unknown:
        raise ValueError(f"classes not in the provided class list: {sorted(unknown)}")
    n = len(classes)
    matrix = np.zeros((n + 1, n + 1), dtype=int)

    candidates = []
    for pi, pred in enumerate(kept):
        for gi, (image_id, obj) in enumerate(gt_list):
            if image_id != pred.image_id:
                continue
            iou = _pair_iou(pred, obj, kind)
            if iou >= iou_thresh:
                candidates.append((-iou, pi, gi))
    candidates.sort()
    pred_used = [False] * len(kept)
    gt_used = [False] * len(gt_list)
    for _, pi, gi in candidates:
        if pred_used[pi] or gt_used[gi]:
            continue
        pred_used[pi] = True
        gt_used[gi] = True
        matrix[class_index[gt_list[gi][1].cls], class_index[kept[pi].cls]] += 1
    for gi, used in enumerate(gt_used):
        if not used:
            matrix[class_index[gt_list[gi][1].cls], n] += 1
    for pi, used in enumerate(pred_used):
        if not used:
            matrix[n, class_index[kept[pi].cls]] += 1

    cm = ConfusionMatrix(list(classes), matrix, MatrixMode.RAW)
    return cm.normalized() if mode == MatrixMode.ROW_NORMALIZED else cm


@dataclass
class LabelStats:
    class_counts: dict[str, int]
    normalized_boxes: list[tuple[float, float, float, float]]
    histograms: dict[str, tuple[np.ndarray, np.ndarray]]


def label_stats(gts: Sequence[GroundTruthSample], bins: int = 10) -> LabelStats:
    """Instance counts plus normalized centroid/size histograms over the GT set."""
    counts: dict[str, int] = {}
    normalized: list[tuple[float, float, float, float]] = []
    for sample in gts:
        if sample.image_size is None:
            raise MissingImageSize(f"sample {sample.image_id} has no image_size")
        iw, ih = sample.image_size
        for obj in sample.objects:
            counts[obj.cls] = counts.get(obj.cls, 0) + 1
            cx, cy = obj.box.center
            normalized.append((cx / iw, cy / ih, obj.box.w / iw, obj.box.h / ih))
    arrays = {
        name: np.array([nb[i] for nb in normalized])
        for i, name in enumerate(("x", "y", "w", "h"))
    }
    histograms = {
        name: np.histogram(values, bins=bins, range=(0.0, 1.0))
        for name, values in arrays.items()
    }
    return LabelStats(counts, normalized, histograms)


# --- JSONL dialect: evaluation files reuse the stream format with image_id ---


def _parse_eval_line(line: str, line_number: int, require_conf: bool):
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ingest.MalformedRecord(f"not valid JSON: {exc}", line_number) from None
    if not isinstance(raw, dict):
        raise ingest.MalformedRecord("top-level value must be an object", line_number)
    if "image_id" not in raw:
        raise SchemaViolation("missing required key 'image_id'", line_number, "image_id")
    image_id = str(raw["image_id"])
    dets_raw = raw.get("dets")
    if not isinstance(dets_raw, list):
        raise SchemaViolation("dets must be an array", line_number, "dets")
    dets = []
    for i, d in enumerate(dets_raw):
        if not require_conf and isinstance(d, dict) and "conf" not in d:
            d = {**d, "conf": 1.0}
        dets.append(ingest._parse_detection(d, line_number, f"dets[{i}]"))
    image_size = None
    if raw.get("image_size") is not None:
        size_raw = raw["image_size"]
        if (
            not isinstance(size_raw, (list, tuple))
            or len(size_raw) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0 for v in size_raw)
        ):
            raise SchemaViolation("image_size must be [width, height]", line_number, "image_size")
        image_size = (int(size_raw[0]), int(size_raw[1]))
    return image_id, dets, image_size


def load_ground_truth(fp: IO[str]) -> list[GroundTruthSample]:
    samples = []
    for i, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        image_id, dets, image_size = _parse_eval_line(line, i, require_conf=False)
        objects = tuple(GTObject(d.label, d.box, d.mask) for d in dets)
        samples.append(GroundTruthSample(image_id, objects, image_size))
    return samples


def load_predictions(fp: IO[str]) -> list[Prediction]:
    preds = []
    for i, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        image_id, dets, _ = _parse_eval_line(line, i, require_conf=True)
        preds.extend(
            Prediction(image_id, d.label, d.confidence, d.box, d.mask) for d in dets
        )
    return preds


def curve_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["confidence", "precision", "recall", "f1"])
    for pt in points:
        writer.writerow([pt.confidence, pt.precision, pt.recall, pt.f1])
    return buf.getvalue()


def confusion_csv(cm: ConfusionMatrix) -> str:
    labels = cm.classes + ["background"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["actual\\predicted"] + labels)
    for label, row in zip(labels, cm.matrix):
        writer.writerow([label] + list(row))
    return buf.getvalue()
