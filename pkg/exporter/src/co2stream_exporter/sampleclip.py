"""Synthesize the bundled test clip: bright boxes drifting over a dark road.

Deterministic, so the committed sample/clip10.avi can always be regenerated
with `python -m co2stream_exporter.sampleclip <path>`.
"""

from __future__ import annotations

import sys
from pathlib import Path

import cv2
import numpy as np

WIDTH, HEIGHT = 320, 240
VEHICLES = [
    # (x0, y0, w, h, vx, brightness BGR)
    (10, 40, 60, 36, 16, (60, 200, 230)),
    (240, 120, 80, 44, -14, (220, 180, 70)),
    (90, 180, 48, 30, 12, (90, 220, 120)),
]


def make_sample_clip(path: str | Path, n_frames: int = 10, fps: float = 25.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (WIDTH, HEIGHT)
    )
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video writer for {path}")
    rng = np.random.default_rng(8)
    base = np.full((HEIGHT, WIDTH, 3), 28, dtype=np.uint8)
    base += rng.integers(0, 6, size=base.shape, dtype=np.uint8)  # static texture
    for k in range(n_frames):
        frame = base.copy()
        for x0, y0, w, h, vx, color in VEHICLES:
            x = int(x0 + vx * k)
            if x < 0 or x + w > WIDTH:
                continue
            cv2.rectangle(frame, (x, y0), (x + w, y0 + h), color, thickness=-1)
            cv2.rectangle(frame, (x + 8, y0 + h - 12), (x + w - 8, y0 + h - 4),
                          (235, 235, 235), thickness=-1)  # plate-ish strip
        writer.write(frame)
    writer.release()
    return path


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "sample/clip10.avi"
    print(make_sample_clip(target))
