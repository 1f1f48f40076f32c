"""Decode a video, run the detector (and optional per-crop OCR), write JSONL."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import cv2
import numpy as np

from .backends import ModelLoadError, RawDetection, load_backend

# crop (BGR ndarray) -> [(text, confidence), ...]
OcrReader = Callable[[np.ndarray], list[tuple[str, float]]]


class VideoOpenError(Exception):
    pass


@dataclass
class ExporterConfig:
    video: str
    model: str = "mog2"
    conf_threshold: float = 0.25
    iou_threshold: float = 0.45
    crop_for_ocr: bool = False
    output: str = "stream.jsonl"

    def __post_init__(self):
        for name in ("conf_threshold", "iou_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0,1), got {value}")


def load_easyocr_reader() -> OcrReader:
    """Default OCR engine; requires the optional easyocr dependency."""
    try:
        import easyocr
    except ImportError as exc:
        raise ModelLoadError(f"--crop-ocr needs the 'easyocr' package: {exc}") from None
    reader = easyocr.Reader(["en"], gpu=False, verbose=False)

    def read(crop: np.ndarray) -> list[tuple[str, float]]:
        return [(text, float(conf)) for _, text, conf in reader.readtext(crop)]

    return read


def _det_to_json(det: RawDetection, plates: list[tuple[str, float]] | None) -> dict:
    out: dict = {
        "box": list(det.box),
        "label": det.label,
        "conf": round(det.confidence, 4),
    }
    if det.mask is not None:
        out["mask"] = det.mask
    if plates is not None:
        out["plates"] = [{"text": t, "conf": round(min(max(c, 0.0), 1.0), 4)} for t, c in plates]
    return out


def export(cfg: ExporterConfig, ocr_reader: OcrReader | None = None) -> Path:
    """Write one frame record per decoded frame; returns the output path.

    With crop_for_ocr enabled, every detection's crop goes through the OCR
    reader and the reads are attached as plate candidates; disabled, no
    `plates` keys are emitted at all.
    """
    capture = cv2.VideoCapture(cfg.video)
    if not capture.isOpened():
        raise VideoOpenError(f"cannot open video: {cfg.video}")
    backend = load_backend(cfg.model, cfg.conf_threshold, cfg.iou_threshold)
    if cfg.crop_for_ocr and ocr_reader is None:
        ocr_reader = load_easyocr_reader()

    fps = capture.get(cv2.CAP_PROP_FPS)
    if not fps or fps <= 0:
        fps = 25.0

    out_path = Path(cfg.output)
    frame_index = 0
    try:
        with out_path.open("w", encoding="utf-8") as fp:
            while True:
                ok, frame = capture.read()
                if not ok:
                    break
                dets = []
                for det in backend.detect(frame):
                    plates = None
                    if cfg.crop_for_ocr:
                        x, y, w, h = (int(round(v)) for v in det.box)
                        crop = frame[
                            max(y, 0) : y + max(h, 1), max(x, 0) : x + max(w, 1)
                        ]
                        plates = ocr_reader(crop) if crop.size else []
                    dets.append(_det_to_json(det, plates))
                record = {
                    "frame": frame_index,
                    "ts_ms": round(frame_index * 1000.0 / fps),
                    "dets": dets,
                }
                fp.write(json.dumps(record, separators=(",", ":")))
                fp.write("\n")
                frame_index += 1
    finally:
        capture.release()
    return out_path
