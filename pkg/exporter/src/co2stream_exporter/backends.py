"""Detector backends, all normalized to per-frame RawDetection lists.

The exporter does no tracking and no plate consensus; it emits raw per-frame
outputs only, so the downstream engine stays testable without any ML stack.

Backends:
  mog2    - OpenCV MOG2 background subtraction + contour segmentation.
            Hermetic: no model weights, works anywhere OpenCV does.
  *.pt    - YOLO-family segmentation checkpoints via the `ultralytics`
            package when it (and the weights file) are available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import cv2
import numpy as np


class ModelLoadError(Exception):
    pass


@dataclass
class RawDetection:
    box: tuple[float, float, float, float]  # x, y, w, h
    label: str
    confidence: float
    mask: list[float] | None = None  # flat [x1, y1, x2, y2, ...]


class DetectorBackend(Protocol):
    def detect(self, frame_bgr: np.ndarray) -> list[RawDetection]: ...


def _nms(dets: list[RawDetection], iou_thresh: float) -> list[RawDetection]:
    """Greedy IoU suppression, highest confidence first."""

    def iou(a, b):
        ax, ay, aw, ah = a.box
        bx, by, bw, bh = b.box
        iw = min(ax + aw, bx + bw) - max(ax, bx)
        ih = min(ay + ah, by + bh) - max(ay, by)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (aw * ah + bw * bh - inter)

    kept: list[RawDetection] = []
    for det in sorted(dets, key=lambda d: -d.confidence):
        if all(iou(det, k) < iou_thresh for k in kept):
            kept.append(det)
    return kept


class Mog2Backend:
    """Moving-blob segmentation from background subtraction.

    Labels are a size heuristic (bigger blobs read as trucks); confidence is
    the foreground fill ratio of the blob's box, capped below 1 so a
    max-confidence threshold always prunes everything.
    """

    MIN_AREA_PX = 60.0
    TRUCK_AREA_PX = 4000.0
    CONF_CAP = 0.97

    def __init__(self, conf_thresh: float, iou_thresh: float):
        self.conf_thresh = conf_thresh
        self.iou_thresh = iou_thresh
        self._subtractor = cv2.createBackgroundSubtractorMOG2(
            history=50, varThreshold=16, detectShadows=False
        )
        self._kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (3, 3))

    def detect(self, frame_bgr: np.ndarray) -> list[RawDetection]:
        fg = self._subtractor.apply(frame_bgr)
        fg = cv2.morphologyEx(fg, cv2.MORPH_OPEN, self._kernel)
        fg = cv2.morphologyEx(fg, cv2.MORPH_CLOSE, self._kernel)
        contours, _ = cv2.findContours(fg, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
        dets: list[RawDetection] = []
        for contour in contours:
            x, y, w, h = cv2.boundingRect(contour)
            if w <= 1 or h <= 1 or w * h < self.MIN_AREA_PX:
                continue
            patch = fg[y : y + h, x : x + w]
            fill = float(np.count_nonzero(patch)) / float(w * h)
            conf = min(fill, self.CONF_CAP)
            if conf < self.conf_thresh:
                continue
            hull = cv2.convexHull(contour).reshape(-1, 2)
            mask = None
            if len(hull) >= 3 and cv2.contourArea(hull) > 0:
                mask = [float(c) for point in hull for c in point]
            label = "truck" if w * h >= self.TRUCK_AREA_PX else "car"
            dets.append(
                RawDetection(
                    box=(float(x), float(y), float(w), float(h)),
                    label=label,
                    confidence=conf,
                    mask=mask,
                )
            )
        return _nms(dets, self.iou_thresh)


class UltralyticsBackend:
    """YOLO-family segmentation checkpoint, when the package is installed."""

    def __init__(self, model_id: str, conf_thresh: float, iou_thresh: float):
        try:
            from ultralytics import YOLO
        except ImportError as exc:
            raise ModelLoadError(
                f"model {model_id!r} needs the 'ultralytics' package: {exc}"
            ) from None
        try:
            self._model = YOLO(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load {model_id!r}: {exc}") from None
        self.conf_thresh = conf_thresh
        self.iou_thresh = iou_thresh

    def detect(self, frame_bgr: np.ndarray) -> list[RawDetection]:
        results = self._model.predict(
            frame_bgr, conf=self.conf_thresh, iou=self.iou_thresh, verbose=False
        )
        dets: list[RawDetection] = []
        for result in results:
            names = result.names
            polygons = result.masks.xy if result.masks is not None else None
            for i, box in enumerate(result.boxes):
                x1, y1, x2, y2 = (float(v) for v in box.xyxy[0])
                x1, y1 = max(x1, 0.0), max(y1, 0.0)
                if x2 - x1 <= 0 or y2 - y1 <= 0:
                    continue
                mask = None
                if polygons is not None and i < len(polygons) and len(polygons[i]) >= 3:
                    mask = [float(c) for point in polygons[i] for c in point]
                dets.append(
                    RawDetection(
                        box=(x1, y1, x2 - x1, y2 - y1),
                        label=str(names[int(box.cls[0])]),
                        confidence=float(box.conf[0]),
                        mask=mask,
                    )
                )
        return dets


def load_backend(model_id: str, conf_thresh: float, iou_thresh: float) -> DetectorBackend:
    if model_id == "mog2":
        return Mog2Backend(conf_thresh, iou_thresh)
    if model_id.endswith(".pt"):
        return UltralyticsBackend(model_id, conf_thresh, iou_thresh)
    raise ModelLoadError(f"unknown model identifier {model_id!r} (use 'mog2' or a .pt checkpoint)")
