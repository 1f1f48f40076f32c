"""Single executable exposing each pipeline stage and the full pipeline.

Subcommands: validate, track, count, plates, estimate, eval, gen, serve-mock.
Diagnostics go to stderr; data goes to stdout or --out. Exit codes: 0 ok,
1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__, emission, metrics
from .classmap import UnknownLabel, VehicleCounter, map_label
from .config import (
    ConfigFileError,
    PipelineConfig,
    build_pipeline_config,
    parse_config_file,
)
from .emission import SegmentReport, aggregate, report_to_csv, report_to_json
from .ingest import IngestError, read_stream, validate_stream
from .plate import PlateConsensus, consensus
from .registry import (
    FixtureParseError,
    RegistryClient,
    RegistryError,
    serve_mock,
)
from .scenario import ConfigError, ScenarioConfig, write_scenario
from .tracker import OutOfOrderFrame, Track, Tracker

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


def _warn(message: str):
    print(f"warning: {message}", file=sys.stderr)


def _error(message: str):
    print(f"error: {message}", file=sys.stderr)


def _open_input(path: str):
    if path == "-":
        return sys.stdin
    return open(path, "r", encoding="utf-8")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text if text.endswith("\n") or not text else text + "\n",
                             encoding="utf-8")
    else:
        sys.stdout.write(text)
        if text and not text.endswith("\n"):
            sys.stdout.write("\n")


def _load_pipeline_config(args) -> PipelineConfig:
    entries = parse_config_file(args.config) if getattr(args, "config", None) else {}
    return build_pipeline_config(
        entries,
        registry_url=getattr(args, "registry_url", None),
        window_s=getattr(args, "window_s", None),
    )


@dataclass
class _FinishedVehicle:
    """Slim per-vehicle summary kept after the heavy Track is released."""

    track_id: int
    distance_km: float
    dwell_s: float
    last_timestamp_ms: int
    plate_consensus: PlateConsensus
    lookup: Future | None


class StreamProcessor:
    """Incremental pipeline: frames in, windowed emission reports out.

    Memory scales with live tracks plus one slim finished-vehicle summary per
    counted vehicle, never with stream length. Registry lookups for finished
    tracks run on a small worker pool concurrently with frame processing.
    """

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.tracker = Tracker(cfg.tracker)
        self.counter = VehicleCounter()
        self.client = RegistryClient(cfg.registry) if cfg.registry else None
        self._executor = (
            ThreadPoolExecutor(max_workers=cfg.max_inflight_lookups) if self.client else None
        )
        self._finished: list[_FinishedVehicle] = []
        self.first_ts: int | None = None
        self.last_ts: int | None = None
        self.frames = 0
        self.detections = 0

    def process_frame(self, frame) -> None:
        self.frames += 1
        self.detections += len(frame.detections)
        if self.first_ts is None:
            self.first_ts = frame.timestamp_ms
        self.last_ts = frame.timestamp_ms
        for track_id, det in self.tracker.step(frame):
            self.counter.record(track_id, map_label(det.label, self.cfg.category_map))
        for track in self.tracker.pop_finished():
            self._queue_finished(track)

    def _queue_finished(self, track: Track) -> None:
        if not track.ever_activated:
            return
        cons = consensus(track.plate_reads, self.cfg.plate_min_support)
        future = None
        if self.client is not None and cons.plate is not None:
            future = self._executor.submit(self.client.lookup, cons.plate)
        self._finished.append(
            _FinishedVehicle(
                track_id=track.id,
                distance_km=emission.distance_from_track(track, self.cfg.calibration),
                dwell_s=emission.dwell_seconds(track.centroid_path),
                last_timestamp_ms=track.last_timestamp_ms,
                plate_consensus=cons,
                lookup=future,
            )
        )

    def finish(self) -> list[SegmentReport]:
        for track in self.tracker.finish():
            self._queue_finished(track)
        resolved = []
        for vehicle in sorted(self._finished, key=lambda v: v.track_id):
            cons = vehicle.plate_consensus
            record = None
            if vehicle.lookup is not None:
                try:
                    record = vehicle.lookup.result()
                except RegistryError as exc:
                    plate_text = cons.plate.text if cons.plate else "?"
                    _warn(
                        f"registry lookup failed for track {vehicle.track_id} "
                        f"({plate_text}): {exc}"
                    )
            category = (
                self.counter.category_of(vehicle.track_id)
                or self.cfg.category_map.default_category
            )
            resolved.append(
                (
                    vehicle,
                    emission.build_estimate(
                        vehicle.track_id,
                        vehicle.distance_km,
                        vehicle.dwell_s,
                        record,
                        category,
                        self.cfg.factor_table,
                        self.cfg.category_factors,
                        plate=cons.plate.text if cons.plate else None,
                    ),
                )
            )
        if self._executor is not None:
            self._executor.shutdown(wait=False)
        return self._window_reports(resolved)

    def _window_reports(self, resolved) -> list[SegmentReport]:
        if self.first_ts is None:
            return []
        start, end = self.first_ts, self.last_ts or self.first_ts
        window_ms = int(self.cfg.window_s * 1000)
        if window_ms <= 0:
            windows = [(start, end)]
            keyed = {0: [est for _, est in resolved]}
        else:
            n_windows = max(1, -(-(end - start + 1) // window_ms))
            windows = [
                (start + k * window_ms, min(start + (k + 1) * window_ms, end))
                for k in range(n_windows)
            ]
            keyed = {}
            for vehicle, est in resolved:
                k = min((vehicle.last_timestamp_ms - start) // window_ms, n_windows - 1)
                keyed.setdefault(k, []).append(est)
        reports = []
        for k, window in enumerate(windows):
            ests = keyed.get(k, [])
            counts: dict[str, int] = {}
            for est in ests:
                counts[est.category] = counts.get(est.category, 0) + 1
            reports.append(aggregate(ests, counts, window))
        return reports


def cmd_validate(args) -> int:
    try:
        with _open_input(args.input) as fp:
            summary = validate_stream(read_stream(fp))
    except IngestError as exc:
        _error(str(exc))
        return EXIT_DATA
    if summary.first_violation is not None:
        v = summary.first_violation
        _error(f"stream ordering violation at record {v.record_index}: {v.reason}")
        return EXIT_DATA
    _emit(
        json.dumps(
            {"frames": summary.frame_count, "detections": summary.detection_count, "ok": True}
        ),
        args.out,
    )
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _load_pipeline_config(args)
    tracker = Tracker(cfg.tracker)
    lines = []
    try:
        with _open_input(args.input) as fp:
            for frame in read_stream(fp):
                for track_id, det in tracker.step(frame):
                    lines.append(
                        json.dumps(
                            {
                                "frame": frame.frame_index,
                                "track": track_id,
                                "label": det.label,
                                "box": det.box.as_xywh(),
                                "plates": [
                                    {"text": p.text, "conf": p.confidence}
                                    for p in det.plate_candidates
                                ],
                            },
                            separators=(",", ":"),
                        )
                    )
    except (IngestError, OutOfOrderFrame) as exc:
        _error(str(exc))
        return EXIT_DATA
    _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    return EXIT_OK


def _run_counting(args):
    cfg = _load_pipeline_config(args)
    tracker = Tracker(cfg.tracker)
    counter = VehicleCounter()
    with _open_input(args.input) as fp:
        for frame in read_stream(fp):
            for track_id, det in tracker.step(frame):
                counter.record(track_id, map_label(det.label, cfg.category_map))
    return cfg, tracker, counter


def cmd_count(args) -> int:
    try:
        _, _, counter = _run_counting(args)
    except (IngestError, OutOfOrderFrame, UnknownLabel) as exc:
        _error(str(exc))
        return EXIT_DATA
    _emit(json.dumps({"counts": counter.counts(), "total": counter.total()}, indent=2), args.out)
    return EXIT_OK


def cmd_plates(args) -> int:
    cfg = _load_pipeline_config(args)
    tracker = Tracker(cfg.tracker)
    try:
        with _open_input(args.input) as fp:
            for frame in read_stream(fp):
                tracker.step(frame)
    except (IngestError, OutOfOrderFrame) as exc:
        _error(str(exc))
        return EXIT_DATA
    rows = []
    finished = tracker.pop_finished() + tracker.finish()
    for track in sorted(finished, key=lambda t: t.id):
        if not track.ever_activated:
            continue
        cons = consensus(track.plate_reads, cfg.plate_min_support)
        rows.append(
            {
                "track": track.id,
                "plate": cons.plate.text if cons.plate else None,
                "status": cons.status.value,
                "support": cons.support,
                "score": cons.score,
            }
        )
    _emit(json.dumps(rows, indent=2), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        cfg = _load_pipeline_config(args)
        processor = StreamProcessor(cfg)
        with _open_input(args.input) as fp:
            for frame in read_stream(fp):
                processor.process_frame(frame)
        reports = processor.finish()
    except (IngestError, OutOfOrderFrame, UnknownLabel, ConfigFileError) as exc:
        _error(str(exc))
        return EXIT_DATA
    text = report_to_csv(reports) if args.format == "csv" else report_to_json(reports)
    _emit(text, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    kind = metrics.IoUKind.MASK if args.kind == "mask" else metrics.IoUKind.BOX
    try:
        with open(args.gt, "r", encoding="utf-8") as fp:
            gts = metrics.load_ground_truth(fp)
        with open(args.preds, "r", encoding="utf-8") as fp:
            preds = metrics.load_predictions(fp)
    except (IngestError, OSError) as exc:
        _error(str(exc))
        return EXIT_DATA

    curve = metrics.f1_confidence_curve(preds, gts, args.iou_thresh, kind)
    map5095 = metrics.map_50_95(preds, gts, kind)
    cm = metrics.confusion_matrix(
        preds, gts, conf_thresh=args.conf_thresh, iou_thresh=args.iou_thresh, kind=kind
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "curve_all_classes.csv").write_text(metrics.curve_csv(curve.points))
    for cls, points in curve.per_class_points.items():
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in cls)
        (out_dir / f"curve_class_{safe}.csv").write_text(metrics.curve_csv(points))
    (out_dir / "confusion_raw.csv").write_text(metrics.confusion_csv(cm))
    (out_dir / "confusion_normalized.csv").write_text(metrics.confusion_csv(cm.normalized()))

    summary = {
        "iou_thresh": args.iou_thresh,
        "conf_thresh": args.conf_thresh,
        "kind": kind.value,
        "ap_per_class": curve.ap_per_class,
        "map": curve.map_value,
        "map_50_95": map5095,
        "best_confidence": curve.best_confidence,
        "best_f1": curve.best_f1,
    }
    if args.label_stats:
        try:
            stats = metrics.label_stats(gts)
        except metrics.MissingImageSize as exc:
            _error(str(exc))
            return EXIT_DATA
        summary["label_stats"] = {
            "class_counts": stats.class_counts,
            "histograms": {
                name: {"counts": counts.tolist(), "edges": edges.tolist()}
                for name, (counts, edges) in stats.histograms.items()
            },
        }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit(json.dumps(summary, indent=2), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    entries = parse_config_file(args.config) if args.config else {}

    def pick(flag_value, key, default, cast):
        if flag_value is not None:
            return flag_value
        if key in entries:
            return cast(entries[key])
        return default

    try:
        cfg = ScenarioConfig(
            seed=pick(args.seed, "scenario.seed", 0, int),
            n_vehicles=pick(args.vehicles, "scenario.n_vehicles", 10, int),
            frame_rate_hz=pick(args.fps, "scenario.frame_rate_hz", 25.0, float),
            duration_s=pick(args.duration_s, "scenario.duration_s", 30.0, float),
            dropout_prob=pick(args.dropout, "scenario.dropout_prob", 0.0, float),
            box_jitter_px=pick(args.jitter, "scenario.box_jitter_px", 0.0, float),
            ocr_corrupt_prob=pick(args.ocr_corrupt, "scenario.ocr_corrupt_prob", 0.0, float),
            meters_per_pixel=pick(args.m_per_px, "scenario.meters_per_pixel", 0.05, float),
        )
        paths = write_scenario(cfg, args.out_dir)
    except (ConfigError, ValueError) as exc:
        _error(str(exc))
        return EXIT_DATA
    _emit(json.dumps({"stream": str(paths[0]), "truth": str(paths[1]),
                      "fixtures": str(paths[2])}), None)
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    try:
        server = serve_mock(args.fixtures, host=args.host, port=args.port)
    except (FixtureParseError, RegistryError) as exc:
        _error(str(exc))
        return EXIT_DATA
    print(f"mock registry listening on {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co2stream", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, registry=False):
        p.add_argument("--input", required=True, help="detection stream JSONL ('-' for stdin)")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--config", default=None, help="config file (key=value lines)")
        if registry:
            p.add_argument("--registry-url", default=None,
                           help="vehicle enquiry base URL (env CO2STREAM_REGISTRY_URL)")

    p = sub.add_parser("validate", help="schema and ordering check of a stream")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("track", help="emit per-frame track events as JSONL")
    add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("count", help="unique vehicle counts per category")
    add_common(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("plates", help="per-track consensus plates")
    add_common(p)
    p.set_defaults(func=cmd_plates)

    p = sub.add_parser("estimate", help="full pipeline: per-vehicle CO2 report")
    add_common(p, registry=True)
    p.add_argument("--window-s", type=float, default=None, help="report window length in seconds")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="detection metrics from GT + prediction files")
    p.add_argument("--gt", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--conf-thresh", type=float, default=0.25)
    p.add_argument("--kind", choices=("box", "mask"), default="box")
    p.add_argument("--label-stats", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", help="generate a synthetic scenario")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="config file with scenario.* keys")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--vehicles", type=int, default=None)
    p.add_argument("--duration-s", type=float, default=None)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--ocr-corrupt", type=float, default=None)
    p.add_argument("--m-per-px", type=float, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("serve-mock", help="run the mock vehicle enquiry server")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.set_defaults(func=cmd_serve_mock)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError, FixtureParseError, OSError) as exc:
        _error(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
