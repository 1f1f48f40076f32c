"""Deterministic synthetic traffic scenarios with exact ground truth.

Vehicles traverse straight, lane-separated paths at constant per-lane pixel
speeds, so the true path length, category counts, plates, and emissions are
known in closed form. Optional per-frame noise (detection dropout, box
jitter, OCR character corruption) exercises the pipeline's robustness while
keeping everything reproducible from one seed.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

from .emission import EmissionFactorTable, factor_for
from .registry import VehicleRecord

_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_DIGITS = "0123456789"
_ALNUM = _ALPHABET + _DIGITS

# (raw detector label, category, registry class, fuel, box w, box h)
_PROFILES = [
    ("suv", "car", "SUV", "Diesel", 96, 60),
    ("taxi", "car", "Midsize", "Gasoline", 88, 56),
    ("private-car", "car", "Compact", "Gasoline", 84, 52),
    ("van", "truck", "Full-size", "Diesel", 120, 72),
    ("pickup", "truck", "Pickup", "Diesel", 110, 66),
    ("truck", "truck", "Pickup", "Diesel", 140, 78),
    ("bus", "bus", "Full-size", "Diesel", 160, 84),
    ("minibus", "bus", "Full-size", "Diesel", 130, 76),
    ("motorbike", "motorcycle", "Subcompact", "Gasoline", 48, 40),
    ("private-car", "car", "Electric", "Electric", 84, 52),
    ("taxi", "car", "Hybrid", "Hybrid", 88, 56),
]

_LANE_HEIGHT = 90
_MIN_VISIBLE_FRAMES = 30


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    plate: str
    raw_label: str
    category: str
    vehicle_class: str
    fuel_type: str
    entry_frame: int
    speed_px: float
    width: float
    height: float
    lane_y: float


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_vehicles: int = 10
    frame_rate_hz: float = 25.0
    duration_s: float = 30.0
    image_size: tuple[int, int] = (1920, 1080)
    dropout_prob: float = 0.0
    box_jitter_px: float = 0.0
    ocr_corrupt_prob: float = 0.0
    det_conf_range: tuple[float, float] = (0.6, 0.95)
    plate_conf_range: tuple[float, float] = (0.5, 0.95)
    meters_per_pixel: float = 0.05
    vehicles: list[VehicleSpec] | None = None

    def __post_init__(self):
        for name in ("dropout_prob", "ocr_corrupt_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {value}")
        if self.box_jitter_px < 0:
            raise ConfigError("box_jitter_px must be nonnegative")
        if self.n_vehicles < 0:
            raise ConfigError("n_vehicles must be nonnegative")
        if self.frame_rate_hz <= 0 or self.duration_s <= 0:
            raise ConfigError("frame_rate_hz and duration_s must be positive")
        if self.meters_per_pixel <= 0:
            raise ConfigError("meters_per_pixel must be positive")
        if self.image_size[0] < 400 or self.image_size[1] < _LANE_HEIGHT + 10:
            raise ConfigError(f"image_size too small: {self.image_size}")

    @property
    def n_frames(self) -> int:
        return math.ceil(self.duration_s * self.frame_rate_hz)


@dataclass(frozen=True)
class VehicleTruth:
    plate: str
    category: str
    raw_label: str
    vehicle_class: str
    fuel_type: str
    frames_visible: int
    distance_km: float
    co2_grams: float


@dataclass
class GroundTruth:
    meters_per_pixel: float
    counts: dict[str, int]
    vehicles: list[VehicleTruth]
    total_co2_grams: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "meters_per_pixel": self.meters_per_pixel,
                "counts": self.counts,
                "vehicles": [asdict(v) for v in self.vehicles],
                "total_co2_grams": self.total_co2_grams,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        raw = json.loads(text)
        return cls(
            meters_per_pixel=raw["meters_per_pixel"],
            counts=raw["counts"],
            vehicles=[VehicleTruth(**v) for v in raw["vehicles"]],
            total_co2_grams=raw["total_co2_grams"],
        )


def _random_plate(rng: random.Random, taken: set[str]) -> str:
    while True:
        text = (
            rng.choice(_ALPHABET) + rng.choice(_ALPHABET)
            + rng.choice(_DIGITS) + rng.choice(_DIGITS)
            + rng.choice(_ALPHABET) + rng.choice(_ALPHABET) + rng.choice(_ALPHABET)
        )
        if text not in taken:
            taken.add(text)
            return text


def _plan_vehicles(cfg: ScenarioConfig, rng: random.Random) -> list[VehicleSpec]:
    width, height = cfg.image_size
    n_lanes = height // _LANE_HEIGHT
    lane_speeds = [float(rng.randint(3, 8)) for _ in range(n_lanes)]
    per_lane = math.ceil(cfg.n_vehicles / n_lanes) if cfg.n_vehicles else 1
    taken: set[str] = set()
    specs = []
    next_entry = [0] * n_lanes
    for i in range(cfg.n_vehicles):
        raw_label, category, klass, fuel, w, h = _PROFILES[i % len(_PROFILES)]
        lane = i % n_lanes
        speed = lane_speeds[lane]
        span = math.floor((width - w) / speed)  # frames from entry to exit
        # Same-lane vehicles are spaced so the previous one has fully left,
        # spread across the stream when there is room to spare.
        spacing = max(span + 40, (cfg.n_frames - _MIN_VISIBLE_FRAMES) // per_lane)
        entry = next_entry[lane] + (rng.randint(0, 30) if next_entry[lane] else rng.randint(0, 20))
        next_entry[lane] = entry + spacing
        if entry > cfg.n_frames - _MIN_VISIBLE_FRAMES:
            raise ConfigError(
                f"vehicle {i} cannot enter before frame {cfg.n_frames - _MIN_VISIBLE_FRAMES}; "
                "reduce n_vehicles or increase duration_s"
            )
        specs.append(
            VehicleSpec(
                plate=_random_plate(rng, taken),
                raw_label=raw_label,
                category=category,
                vehicle_class=klass,
                fuel_type=fuel,
                entry_frame=entry,
                speed_px=speed,
                width=float(w),
                height=float(h),
                lane_y=float(lane * _LANE_HEIGHT + 3),
            )
        )
    return specs


def _visible_frames(spec: VehicleSpec, cfg: ScenarioConfig) -> tuple[int, int]:
    """Inclusive [first, last] frame range where the vehicle's box fits on-screen."""
    width = cfg.image_size[0]
    span = math.floor((width - spec.width) / spec.speed_px)
    last = min(spec.entry_frame + span, cfg.n_frames - 1)
    return spec.entry_frame, last


def compute_ground_truth(cfg: ScenarioConfig, specs: list[VehicleSpec]) -> GroundTruth:
    table = EmissionFactorTable.default()
    vehicles = []
    counts: dict[str, int] = {}
    total = 0.0
    for spec in specs:
        first, last = _visible_frames(spec, cfg)
        n_vis = max(0, last - first + 1)
        distance_px = spec.speed_px * max(0, n_vis - 1)
        distance_km = distance_px * cfg.meters_per_pixel / 1000.0
        factor = factor_for(spec.vehicle_class, spec.fuel_type, table)
        co2 = factor * distance_km
        vehicles.append(
            VehicleTruth(
                plate=spec.plate,
                category=spec.category,
                raw_label=spec.raw_label,
                vehicle_class=spec.vehicle_class,
                fuel_type=spec.fuel_type,
                frames_visible=n_vis,
                distance_km=distance_km,
                co2_grams=co2,
            )
        )
        counts[spec.category] = counts.get(spec.category, 0) + 1
        total += co2
    return GroundTruth(cfg.meters_per_pixel, counts, vehicles, total)


def registry_fixtures(specs: list[VehicleSpec]) -> list[VehicleRecord]:
    return [
        VehicleRecord(
            registration=s.plate,
            make="SIMMAKE",
            model=f"MODEL-{i}",
            fuel_type=s.fuel_type,
            vehicle_class=s.vehicle_class,
        )
        for i, s in enumerate(specs)
    ]


def _corrupt(plate: str, rng: random.Random) -> str:
    pos = rng.randrange(len(plate))
    return plate[:pos] + rng.choice(_ALNUM) + plate[pos + 1:]


def stream_lines(cfg: ScenarioConfig, specs: list[VehicleSpec], rng: random.Random) -> Iterator[str]:
    """Yield one JSONL line per frame, in frame order."""
    width, height = cfg.image_size
    ranges = [_visible_frames(s, cfg) for s in specs]
    clo, chi = cfg.det_conf_range
    plo, phi = cfg.plate_conf_range
    for frame in range(cfg.n_frames):
        ts_ms = round(frame * 1000.0 / cfg.frame_rate_hz)
        dets = []
        for spec, (first, last) in zip(specs, ranges):
            if not first <= frame <= last:
                continue
            if cfg.dropout_prob > 0 and rng.random() < cfg.dropout_prob:
                continue
            x = spec.speed_px * (frame - first)
            y = spec.lane_y
            if cfg.box_jitter_px > 0:
                x += rng.gauss(0.0, cfg.box_jitter_px)
                y += rng.gauss(0.0, cfg.box_jitter_px)
                x = min(max(x, 0.0), width - spec.width)
                y = min(max(y, 0.0), height - spec.height)
            text = spec.plate
            if cfg.ocr_corrupt_prob > 0 and rng.random() < cfg.ocr_corrupt_prob:
                text = _corrupt(text, rng)
            dets.append(
                {
                    "box": [x, y, spec.width, spec.height],
                    "label": spec.raw_label,
                    "conf": round(rng.uniform(clo, chi), 4),
                    "plates": [{"text": text, "conf": round(rng.uniform(plo, phi), 4)}],
                }
            )
        yield json.dumps({"frame": frame, "ts_ms": ts_ms, "dets": dets}, separators=(",", ":"))


@dataclass
class GeneratedScenario:
    stream: list[str]
    truth: GroundTruth
    fixtures: list[VehicleRecord]
    specs: list[VehicleSpec]


def generate(cfg: ScenarioConfig) -> GeneratedScenario:
    """Produce the full scenario in memory; deterministic for a fixed seed."""
    rng = random.Random(cfg.seed)
    specs = cfg.vehicles if cfg.vehicles is not None else _plan_vehicles(cfg, rng)
    truth = compute_ground_truth(cfg, specs)
    fixtures = registry_fixtures(specs)
    lines = list(stream_lines(cfg, specs, rng))
    return GeneratedScenario(lines, truth, fixtures, specs)


def write_scenario(
    cfg: ScenarioConfig, out_dir: str | Path
) -> tuple[Path, Path, Path]:
    """Write stream.jsonl, truth.json, and fixtures.json under out_dir.

    The stream is written incrementally so arbitrarily long scenarios do not
    hold every line in memory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(cfg.seed)
    specs = cfg.vehicles if cfg.vehicles is not None else _plan_vehicles(cfg, rng)
    stream_path = out / "stream.jsonl"
    truth_path = out / "truth.json"
    fixtures_path = out / "fixtures.json"
    with stream_path.open("w", encoding="utf-8") as fp:
        for line in stream_lines(cfg, specs, rng):
            fp.write(line)
            fp.write("\n")
    truth_path.write_text(compute_ground_truth(cfg, specs).to_json(), encoding="utf-8")
    fixtures_path.write_text(
        json.dumps([r.to_json_dict() for r in registry_fixtures(specs)], indent=2),
        encoding="utf-8",
    )
    return stream_path, truth_path, fixtures_path
