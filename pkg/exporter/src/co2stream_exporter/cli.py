"""Command-line wrapper: video in, co2stream detection JSONL out."""

from __future__ import annotations

import argparse
import sys

from .backends import ModelLoadError
from .export import ExporterConfig, VideoOpenError, export


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="co2stream-export", description=__doc__)
    parser.add_argument("--video", required=True, help="input video file")
    parser.add_argument(
        "--model", default="mog2",
        help="'mog2' (background subtraction, no weights needed) or a YOLO-family .pt checkpoint",
    )
    parser.add_argument("--conf", type=float, default=0.25, help="detection confidence threshold")
    parser.add_argument("--iou", type=float, default=0.45, help="IoU threshold (NMS)")
    parser.add_argument("--crop-ocr", action="store_true",
                        help="run OCR on each detection crop and attach plate reads")
    parser.add_argument("--out", default="stream.jsonl", help="output JSONL path")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    try:
        cfg = ExporterConfig(
            video=args.video,
            model=args.model,
            conf_threshold=args.conf,
            iou_threshold=args.iou,
            crop_for_ocr=args.crop_ocr,
            output=args.out,
        )
        out_path = export(cfg)
    except (ValueError, VideoOpenError, ModelLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
