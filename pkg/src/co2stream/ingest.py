"""Detection-stream wire format: line-delimited JSON, one frame per line.

The stream decouples the engine from whatever detector produced it. Required
keys per line: ``frame`` (int), ``ts_ms`` (int), ``dets`` (array). Each
detection carries ``box`` ``[x, y, w, h]``, ``label``, ``conf`` and optional
``mask`` (flat ``[x1, y1, x2, y2, ...]``) and ``plates``
(``[{"text": ..., "conf": ...}]``). Unknown keys are ignored so newer
exporters stay compatible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from shapely.geometry import LinearRing


class IngestError(Exception):
    """Base class for stream parsing failures."""

    def __init__(self, message: str, line_number: int | None = None, path: str = ""):
        self.line_number = line_number
        self.path = path
        where = f"line {line_number}" if line_number is not None else "line ?"
        at = f" at {path}" if path else ""
        super().__init__(f"{where}{at}: {message}")


class MalformedRecord(IngestError):
    """The line is not a JSON object at all."""


class SchemaViolation(IngestError):
    """The line is JSON but a required field is missing or out of range."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        # comparisons written so NaN fails them too
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")
        if not (self.x >= 0 and self.y >= 0):
            raise ValueError(f"box origin must be nonnegative, got x={self.x} y={self.y}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class PolygonMask:
    """Simple (non-self-intersecting) polygon in image coordinates.

    The ring is implicitly closed: the last vertex connects to the first.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError(f"mask needs >= 3 vertices, got {len(self.vertices)}")
        if not LinearRing(self.vertices).is_simple:
            raise ValueError("mask polygon is self-intersecting")

    def as_flat(self) -> list[float]:
        return [c for xy in self.vertices for c in xy]


@dataclass(frozen=True)
class PlateCandidate:
    """One raw OCR read attached to a detection."""

    text: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"plate confidence out of [0,1]: {self.confidence}")


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: str
    confidence: float
    mask: PolygonMask | None = None
    plate_candidates: tuple[PlateCandidate, ...] = ()

    def __post_init__(self):
        if not self.label:
            raise ValueError("detection label must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"detection confidence out of [0,1]: {self.confidence}")


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    timestamp_ms: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be nonnegative: {self.frame_index}")
        if self.timestamp_ms < 0:
            raise ValueError(f"timestamp_ms must be nonnegative: {self.timestamp_ms}")


@dataclass(frozen=True)
class StreamViolation:
    record_index: int
    reason: str


@dataclass
class StreamSummary:
    frame_count: int = 0
    detection_count: int = 0
    first_violation: StreamViolation | None = None

    @property
    def clean(self) -> bool:
        return self.first_violation is None


def _require(obj: dict, key: str, line_number: int | None, path: str):
    if key not in obj:
        raise SchemaViolation(f"missing required key '{key}'", line_number, path)
    return obj[key]


def _as_int(value, line_number, path) -> int:
    # bool is an int subclass; reject it explicitly.
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"expected integer, got {value!r}", line_number, path)
    return value


def _as_number(value, line_number, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"expected number, got {value!r}", line_number, path)
    if not math.isfinite(value):
        raise SchemaViolation(f"expected finite number, got {value!r}", line_number, path)
    return float(value)


def _as_str(value, line_number, path) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(f"expected string, got {value!r}", line_number, path)
    return value


def _parse_box(raw, line_number, path) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaViolation("box must be [x, y, w, h]", line_number, path)
    x, y, w, h = (_as_number(v, line_number, f"{path}[{i}]") for i, v in enumerate(raw))
    names = ("x", "y", "w", "h")
    try:
        return BoundingBox(x, y, w, h)
    except ValueError:
        # Re-check fields one by one so the error names the offending one.
        for name, value, floor in zip(names, (x, y, w, h), (0, 0, None, None)):
            bad = value < 0 if floor is not None else value <= 0
            if bad:
                raise SchemaViolation(
                    f"box.{name} out of range: {value}", line_number, f"{path}.{name}"
                ) from None
        raise


def _parse_mask(raw, line_number, path) -> PolygonMask:
    if not isinstance(raw, (list, tuple)) or len(raw) % 2 != 0:
        raise SchemaViolation("mask must be a flat [x1,y1,x2,y2,...] array", line_number, path)
    coords = [_as_number(v, line_number, f"{path}[{i}]") for i, v in enumerate(raw)]
    vertices = tuple(zip(coords[0::2], coords[1::2]))
    try:
        return PolygonMask(vertices)
    except Exception as exc:  # shapely raises its own types on bad rings
        raise SchemaViolation(f"invalid mask polygon: {exc}", line_number, path) from None


def _parse_plate(raw, line_number, path) -> PlateCandidate:
    if not isinstance(raw, dict):
        raise SchemaViolation("plate entry must be an object", line_number, path)
    text = _as_str(_require(raw, "text", line_number, path), line_number, f"{path}.text")
    conf = _as_number(_require(raw, "conf", line_number, path), line_number, f"{path}.conf")
    if not 0.0 <= conf <= 1.0:
        raise SchemaViolation(f"plate conf out of [0,1]: {conf}", line_number, f"{path}.conf")
    return PlateCandidate(text, conf)


_NUM_TYPES = (int, float)


def _fast_detection(raw: dict) -> Detection | None:
    """Zero-diagnostics parse of a well-formed detection; None means fall back.

    Accepts only inputs the validating path would accept and builds the same
    values; anything unusual defers to the slow path for a precise error.
    """
    box = raw.get("box")
    label = raw.get("label")
    conf = raw.get("conf")
    if (
        type(box) is not list or len(box) != 4
        or type(label) is not str or not label
        or type(conf) not in _NUM_TYPES or not 0.0 <= conf <= 1.0
        or raw.get("mask") is not None
    ):
        return None
    x, y, w, h = box
    for v in box:
        if type(v) not in _NUM_TYPES or not math.isfinite(v):
            return None
    if w <= 0 or h <= 0 or x < 0 or y < 0:
        return None
    plates: tuple[PlateCandidate, ...] = ()
    raw_plates = raw.get("plates")
    if raw_plates is not None:
        if type(raw_plates) is not list:
            return None
        out = []
        for p in raw_plates:
            if type(p) is not dict:
                return None
            text = p.get("text")
            pconf = p.get("conf")
            if type(text) is not str or type(pconf) not in _NUM_TYPES or not 0.0 <= pconf <= 1.0:
                return None
            out.append(PlateCandidate(text, float(pconf)))
        plates = tuple(out)
    return Detection(
        box=BoundingBox(float(x), float(y), float(w), float(h)),
        label=label,
        confidence=float(conf),
        plate_candidates=plates,
    )


def _parse_detection(raw, line_number, path) -> Detection:
    if not isinstance(raw, dict):
        raise SchemaViolation("detection must be an object", line_number, path)
    box = _parse_box(_require(raw, "box", line_number, path), line_number, f"{path}.box")
    label = _as_str(_require(raw, "label", line_number, path), line_number, f"{path}.label")
    if not label:
        raise SchemaViolation("label must be non-empty", line_number, f"{path}.label")
    conf = _as_number(_require(raw, "conf", line_number, path), line_number, f"{path}.conf")
    if not 0.0 <= conf <= 1.0:
        raise SchemaViolation(f"conf out of [0,1]: {conf}", line_number, f"{path}.conf")
    mask = None
    if raw.get("mask") is not None:
        mask = _parse_mask(raw["mask"], line_number, f"{path}.mask")
    plates: tuple[PlateCandidate, ...] = ()
    if raw.get("plates") is not None:
        if not isinstance(raw["plates"], list):
            raise SchemaViolation("plates must be an array", line_number, f"{path}.plates")
        plates = tuple(
            _parse_plate(p, line_number, f"{path}.plates[{i}]")
            for i, p in enumerate(raw["plates"])
        )
    return Detection(box=box, label=label, confidence=conf, mask=mask, plate_candidates=plates)


def parse_frame_line(line: str, line_number: int | None = None) -> FrameRecord:
    """Parse one JSONL line into a validated FrameRecord.

    Raises MalformedRecord for non-JSON input and SchemaViolation for missing
    or out-of-range fields; both carry the line number and field path.
    """
    try:
        raw = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedRecord(f"not valid JSON: {exc}", line_number) from None
    if not isinstance(raw, dict):
        raise MalformedRecord("top-level value must be an object", line_number)

    frame = _as_int(_require(raw, "frame", line_number, ""), line_number, "frame")
    if frame < 0:
        raise SchemaViolation(f"frame must be nonnegative: {frame}", line_number, "frame")
    ts = _as_int(_require(raw, "ts_ms", line_number, ""), line_number, "ts_ms")
    if ts < 0:
        raise SchemaViolation(f"ts_ms must be nonnegative: {ts}", line_number, "ts_ms")
    dets_raw = _require(raw, "dets", line_number, "")
    if not isinstance(dets_raw, list):
        raise SchemaViolation("dets must be an array", line_number, "dets")
    dets = []
    for i, d in enumerate(dets_raw):
        det = _fast_detection(d) if type(d) is dict else None
        if det is None:
            det = _parse_detection(d, line_number, f"dets[{i}]")
        dets.append(det)
    return FrameRecord(frame_index=frame, timestamp_ms=ts, detections=tuple(dets))


def serialize_frame(record: FrameRecord) -> str:
    """Inverse of parse_frame_line; emits one compact JSON line (no newline)."""
    dets = []
    for d in record.detections:
        obj: dict = {"box": d.box.as_xywh(), "label": d.label, "conf": d.confidence}
        if d.mask is not None:
            obj["mask"] = d.mask.as_flat()
        if d.plate_candidates:
            obj["plates"] = [{"text": p.text, "conf": p.confidence} for p in d.plate_candidates]
        dets.append(obj)
    return json.dumps(
        {"frame": record.frame_index, "ts_ms": record.timestamp_ms, "dets": dets},
        separators=(",", ":"),
    )


def read_stream(fp: IO[str]) -> Iterator[FrameRecord]:
    """Yield FrameRecords from a line-delimited stream, skipping blank lines."""
    for i, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        yield parse_frame_line(line, line_number=i)


def validate_stream(records: Iterable[FrameRecord]) -> StreamSummary:
    """Check stream ordering; violations are reported, not raised."""
    summary = StreamSummary()
    prev_frame = None
    prev_ts = None
    for idx, rec in enumerate(records):
        if summary.first_violation is None:
            if prev_frame is not None and rec.frame_index <= prev_frame:
                summary.first_violation = StreamViolation(
                    idx, f"frame_index {rec.frame_index} not greater than previous {prev_frame}"
                )
            elif prev_ts is not None and rec.timestamp_ms < prev_ts:
                summary.first_violation = StreamViolation(
                    idx, f"timestamp_ms {rec.timestamp_ms} decreased from {prev_ts}"
                )
        prev_frame = rec.frame_index
        prev_ts = rec.timestamp_ms
        summary.frame_count += 1
        summary.detection_count += len(rec.detections)
    return summary
