"""Per-vehicle CO2 accounting from emission factors and tracked path length."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum

from .tracker import Track

# Average tailpipe CO2 in grams per kilometer by vehicle class and fuel.
# Classes fueled "Gas/Diesel" in the source statistics carry one factor for
# both fuel strings; battery-electric vehicles have no tailpipe CO2.
_TABLE_ROWS: list[tuple[str, tuple[str, ...], float]] = [
    ("Subcompact", ("Gasoline",), 115.0),
    ("Compact", ("Gasoline", "Diesel"), 125.0),
    ("Midsize", ("Gasoline", "Diesel"), 140.0),
    ("Full-size", ("Gasoline", "Diesel"), 160.0),
    ("SUV", ("Gasoline", "Diesel"), 180.0),
    ("Pickup", ("Gasoline", "Diesel"), 200.0),
    ("Luxury", ("Gasoline",), 170.0),
    ("Electric", ("Electric",), 0.0),
    ("Hybrid", ("Hybrid",), 90.0),
]

# Fallbacks (g/km) when the registry gives nothing usable; drawn from the
# nearest class rows above and overridable per category in config.
DEFAULT_CATEGORY_FACTORS: dict[str, float] = {
    "car": 140.0,
    "truck": 200.0,
    "bus": 200.0,
    "motorcycle": 115.0,
}
FALLBACK_FACTOR = 140.0


class UnknownClass(Exception):
    """No factor row for the (vehicle_class, fuel_type) pair."""


@dataclass(frozen=True)
class EmissionFactorTable:
    factors: dict[tuple[str, str], float]

    def __post_init__(self):
        normalized = {(c.lower(), f.lower()): v for (c, f), v in self.factors.items()}
        object.__setattr__(self, "factors", normalized)
        for (cls, fuel), value in self.factors.items():
            if value < 0:
                raise ValueError(f"negative factor for ({cls}, {fuel}): {value}")
            if fuel == "electric" and value != 0:
                raise ValueError(f"electric factor must be 0, got {value}")

    @classmethod
    def default(cls) -> EmissionFactorTable:
        factors = {}
        for klass, fuels, value in _TABLE_ROWS:
            for fuel in fuels:
                factors[(klass.lower(), fuel.lower())] = value
        return cls(factors)

    def with_overrides(self, overrides: dict[tuple[str, str], float]) -> EmissionFactorTable:
        merged = dict(self.factors)
        merged.update({(c.lower(), f.lower()): v for (c, f), v in overrides.items()})
        return EmissionFactorTable(merged)


def factor_for(vehicle_class: str, fuel_type: str, table: EmissionFactorTable | None = None) -> float:
    """Exact (case-insensitive) table lookup in grams CO2 per km."""
    table = table or EmissionFactorTable.default()
    try:
        return table.factors[(vehicle_class.lower(), fuel_type.lower())]
    except KeyError:
        raise UnknownClass(f"({vehicle_class}, {fuel_type})") from None


@dataclass(frozen=True)
class Calibration:
    """Scalar ground-plane scale plus the assumed speed for degenerate paths."""

    meters_per_pixel: float = 0.05
    fallback_speed_kmh: float = 30.0

    def __post_init__(self):
        if self.meters_per_pixel <= 0 or self.fallback_speed_kmh <= 0:
            raise ValueError("calibration values must be positive")


class FactorSource(Enum):
    REGISTRY_NUMERIC = "registry_numeric"
    TABLE_LOOKUP = "table_lookup"
    CATEGORY_DEFAULT = "category_default"


@dataclass(frozen=True)
class VehicleEmissionEstimate:
    track_id: int
    category: str
    distance_km: float
    co2_grams: float
    factor_g_per_km: float
    factor_source: FactorSource
    plate: str | None = None
    vehicle_class: str | None = None
    fuel_type: str | None = None
    dwell_s: float = 0.0


@dataclass(frozen=True)
class SegmentReport:
    window: tuple[int, int]
    unique_counts: dict[str, int]
    estimates: tuple[VehicleEmissionEstimate, ...]
    total_co2_grams: float


def path_length_px(path: list[tuple[float, float, int]]) -> float:
    total = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(path, path[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total


def dwell_seconds(path: list[tuple[float, float, int]]) -> float:
    if len(path) < 2:
        return 0.0
    return (path[-1][2] - path[0][2]) / 1000.0


def distance_from_track(track: Track, cal: Calibration) -> float:
    """Kilometers traversed, from summed centroid displacements.

    A path with fewer than two points has no measurable displacement; the
    dwell-time fallback applies, which with a single timestamp is zero.
    """
    if len(track.centroid_path) < 2:
        dwell_h = dwell_seconds(track.centroid_path) / 3600.0
        return cal.fallback_speed_kmh * dwell_h
    return path_length_px(track.centroid_path) * cal.meters_per_pixel / 1000.0


def build_estimate(
    track_id: int,
    distance_km: float,
    dwell_s: float,
    record,
    category: str,
    table: EmissionFactorTable | None = None,
    category_factors: dict[str, float] | None = None,
    plate: str | None = None,
) -> VehicleEmissionEstimate:
    """Assemble one estimate from precomputed motion figures.

    Factor precedence: the registry's numeric g/km when present, else the
    factor table on the registry's class and fuel, else the per-category
    default. `record` is the registry response or None.
    """
    table = table or EmissionFactorTable.default()
    defaults = category_factors if category_factors is not None else DEFAULT_CATEGORY_FACTORS

    factor = None
    source = FactorSource.CATEGORY_DEFAULT
    vehicle_class = getattr(record, "vehicle_class", None)
    fuel_type = getattr(record, "fuel_type", None)
    if record is not None and record.co2_g_per_km is not None:
        factor = float(record.co2_g_per_km)
        source = FactorSource.REGISTRY_NUMERIC
    elif record is not None:
        try:
            factor = factor_for(record.vehicle_class, record.fuel_type, table)
            source = FactorSource.TABLE_LOOKUP
        except UnknownClass:
            factor = None
    if factor is None:
        factor = defaults.get(category, FALLBACK_FACTOR)
        source = FactorSource.CATEGORY_DEFAULT

    return VehicleEmissionEstimate(
        track_id=track_id,
        category=category,
        distance_km=distance_km,
        co2_grams=factor * distance_km,
        factor_g_per_km=factor,
        factor_source=source,
        plate=plate,
        vehicle_class=vehicle_class,
        fuel_type=fuel_type,
        dwell_s=dwell_s,
    )


def estimate(
    track: Track,
    record,
    category: str,
    table: EmissionFactorTable | None = None,
    cal: Calibration | None = None,
    category_factors: dict[str, float] | None = None,
    plate: str | None = None,
) -> VehicleEmissionEstimate:
    """Estimate one counted vehicle's CO2 from its track and registry record."""
    cal = cal or Calibration()
    return build_estimate(
        track.id,
        distance_from_track(track, cal),
        dwell_seconds(track.centroid_path),
        record,
        category,
        table,
        category_factors,
        plate,
    )


def aggregate(
    estimates: list[VehicleEmissionEstimate],
    counts: dict[str, int],
    window: tuple[int, int],
) -> SegmentReport:
    """Roll per-vehicle estimates into one windowed report; total is the plain
    left-to-right sum over the listed estimates."""
    total = 0.0
    for est in estimates:
        total += est.co2_grams
    return SegmentReport(
        window=window,
        unique_counts=dict(counts),
        estimates=tuple(estimates),
        total_co2_grams=total,
    )


def _estimate_to_dict(est: VehicleEmissionEstimate) -> dict:
    return {
        "track_id": est.track_id,
        "plate": est.plate,
        "category": est.category,
        "vehicle_class": est.vehicle_class,
        "fuel_type": est.fuel_type,
        "distance_km": est.distance_km,
        "dwell_s": est.dwell_s,
        "factor_g_per_km": est.factor_g_per_km,
        "factor_source": est.factor_source.value,
        "co2_grams": est.co2_grams,
    }


def report_to_json(reports: list[SegmentReport]) -> str:
    payload = [
        {
            "window": {"start_ts_ms": r.window[0], "end_ts_ms": r.window[1]},
            "unique_counts": r.unique_counts,
            "vehicles": [_estimate_to_dict(e) for e in r.estimates],
            "total_co2_grams": r.total_co2_grams,
        }
        for r in reports
    ]
    return json.dumps(payload, indent=2)


_CSV_FIELDS = [
    "window_start_ms", "window_end_ms", "track_id", "plate", "category",
    "vehicle_class", "fuel_type", "distance_km", "dwell_s",
    "factor_g_per_km", "factor_source", "co2_grams",
]


def report_to_csv(reports: list[SegmentReport]) -> str:
    """One row per vehicle estimate plus a totals row per window."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for r in reports:
        for e in r.estimates:
            writer.writerow([
                r.window[0], r.window[1], e.track_id, e.plate or "", e.category,
                e.vehicle_class or "", e.fuel_type or "", e.distance_km,
                e.dwell_s, e.factor_g_per_km, e.factor_source.value, e.co2_grams,
            ])
        writer.writerow([r.window[0], r.window[1], "TOTAL", "", "", "", "", "", "", "", "",
                         r.total_co2_grams])
    return buf.getvalue()
