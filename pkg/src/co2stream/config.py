"""Flat key=value config files with dotted section prefixes.

Example::

    # tracker knobs
    tracker.match_iou_thresh=0.45
    classmap.suv=car
    emission.category_default.car=140
    registry.base_url=http://localhost:8700

Every key can be overridden by the matching CLI flag.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .classmap import DEFAULT_CATEGORY_MAP, CategoryMap
from .emission import DEFAULT_CATEGORY_FACTORS, Calibration, EmissionFactorTable
from .registry import RegistryConfig
from .tracker import TrackerConfig

ENV_REGISTRY_URL = "CO2STREAM_REGISTRY_URL"


class ConfigFileError(Exception):
    pass


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read dotted key=value lines; '#' starts a comment, blanks are skipped."""
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(str(exc)) from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _get_float(entries: dict[str, str], key: str, default: float) -> float:
    if key not in entries:
        return default
    try:
        return float(entries[key])
    except ValueError:
        raise ConfigFileError(f"{key}: not a number: {entries[key]!r}") from None


def _get_int(entries: dict[str, str], key: str, default: int) -> int:
    if key not in entries:
        return default
    try:
        return int(entries[key])
    except ValueError:
        raise ConfigFileError(f"{key}: not an integer: {entries[key]!r}") from None


def _get_bool(entries: dict[str, str], key: str, default: bool) -> bool:
    if key not in entries:
        return default
    value = entries[key].lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigFileError(f"{key}: not a boolean: {entries[key]!r}")


@dataclass
class PipelineConfig:
    """Everything the full pipeline needs, assembled from config file + flags."""

    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    category_map: CategoryMap = field(default_factory=CategoryMap)
    plate_min_support: int = 2
    registry: RegistryConfig | None = None
    factor_table: EmissionFactorTable = field(default_factory=EmissionFactorTable.default)
    category_factors: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CATEGORY_FACTORS)
    )
    calibration: Calibration = field(default_factory=Calibration)
    window_s: float = 0.0
    max_inflight_lookups: int = 8


_CLASSMAP_META_KEYS = {"strict", "default_category"}


def build_pipeline_config(
    entries: dict[str, str] | None = None,
    registry_url: str | None = None,
    window_s: float | None = None,
) -> PipelineConfig:
    """Merge config-file entries, environment, and flag overrides.

    Precedence for the registry URL: explicit flag, then the
    CO2STREAM_REGISTRY_URL environment variable, then the config file. A
    missing URL disables registry lookups entirely.
    """
    entries = entries or {}
    tracker = TrackerConfig(
        det_conf_floor=_get_float(entries, "tracker.det_conf_floor", 0.25),
        high_score_thresh=_get_float(entries, "tracker.high_score_thresh", 0.5),
        match_iou_thresh=_get_float(entries, "tracker.match_iou_thresh", 0.45),
        low_match_iou_thresh=_get_float(entries, "tracker.low_match_iou_thresh", 0.3),
        track_buffer_frames=_get_int(entries, "tracker.track_buffer_frames", 30),
        min_hits_to_activate=_get_int(entries, "tracker.min_hits_to_activate", 2),
    )

    mapping = dict(DEFAULT_CATEGORY_MAP)
    for key, value in entries.items():
        if key.startswith("classmap."):
            name = key.split(".", 1)[1]
            if name not in _CLASSMAP_META_KEYS:
                mapping[name.lower()] = value
    category_map = CategoryMap(
        mapping=mapping,
        strict=_get_bool(entries, "classmap.strict", False),
        default_category=entries.get("classmap.default_category", "car"),
    )

    url = registry_url or os.environ.get(ENV_REGISTRY_URL) or entries.get("registry.base_url")
    registry = None
    if url:
        registry = RegistryConfig(
            base_url=url,
            timeout_ms=_get_int(entries, "registry.timeout_ms", 2000),
            max_retries=_get_int(entries, "registry.max_retries", 2),
            cache_capacity=_get_int(entries, "registry.cache_capacity", 1024),
            cache_ttl_s=_get_float(entries, "registry.cache_ttl_s", 300.0),
            backoff_base_ms=_get_int(entries, "registry.backoff_base_ms", 50),
        )

    overrides: dict[tuple[str, str], float] = {}
    category_factors = dict(DEFAULT_CATEGORY_FACTORS)
    for key, value in entries.items():
        if key.startswith("emission.factor."):
            parts = key.split(".")
            if len(parts) != 4:
                raise ConfigFileError(f"{key}: expected emission.factor.<class>.<fuel>")
            overrides[(parts[2], parts[3])] = _get_float(entries, key, 0.0)
        elif key.startswith("emission.category_default."):
            category_factors[key.split(".", 2)[2]] = _get_float(entries, key, 0.0)
    table = EmissionFactorTable.default().with_overrides(overrides)

    calibration = Calibration(
        meters_per_pixel=_get_float(entries, "calibration.meters_per_pixel", 0.05),
        fallback_speed_kmh=_get_float(entries, "calibration.fallback_speed_kmh", 30.0),
    )

    return PipelineConfig(
        tracker=tracker,
        category_map=category_map,
        plate_min_support=_get_int(entries, "plate.min_support", 2),
        registry=registry,
        factor_table=table,
        category_factors=category_factors,
        calibration=calibration,
        window_s=window_s if window_s is not None else _get_float(entries, "report.window_s", 0.0),
        max_inflight_lookups=_get_int(entries, "pipeline.max_inflight_lookups", 8),
    )
