"""Shared random-instance generators for metric and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from co2stream.ingest import BoundingBox, PolygonMask
from co2stream.metrics import GroundTruthSample, GTObject, Prediction


def random_instance(rng, max_preds=6, max_gts=4, n_classes=3):
    """One-image random matching instance in both package and oracle form.

    Returns (preds, gts, raw_preds, raw_gts) where the raw forms are plain
    tuples consumed by the brute-force oracles.
    """
    classes = [f"c{i}" for i in range(n_classes)]
    n_preds = int(rng.integers(0, max_preds + 1))
    n_gts = int(rng.integers(0, max_gts + 1))

    def random_box():
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(5, 40, 2)
        return (float(x), float(y), float(w), float(h))

    raw_gts = [(str(rng.choice(classes)), random_box()) for _ in range(n_gts)]
    raw_preds = []
    for _ in range(n_preds):
        if raw_gts and rng.random() < 0.7:
            # perturb a GT so near-matches are common
            cls, (x, y, w, h) = raw_gts[int(rng.integers(0, len(raw_gts)))]
            box = (
                max(0.0, x + float(rng.uniform(-5, 5))),
                max(0.0, y + float(rng.uniform(-5, 5))),
                w * float(rng.uniform(0.7, 1.3)),
                h * float(rng.uniform(0.7, 1.3)),
            )
            if rng.random() < 0.2:
                cls = str(rng.choice(classes))
        else:
            cls, box = str(rng.choice(classes)), random_box()
        raw_preds.append((float(rng.uniform(0.05, 1.0)), cls, box))
    preds = [Prediction("im0", cls, conf, BoundingBox(*box)) for conf, cls, box in raw_preds]
    gts = [GroundTruthSample("im0", tuple(GTObject(c, BoundingBox(*b)) for c, b in raw_gts))]
    return preds, gts, raw_preds, raw_gts


def random_convex_polygon(rng, center_range=10.0, radius_range=(1.0, 5.0), n_range=(3, 8)):
    """Convex (hence simple) polygon with vertices sorted by angle."""
    n = int(rng.integers(*n_range))
    cx, cy = rng.uniform(0, center_range, 2)
    radius = rng.uniform(*radius_range)
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    if len(np.unique(angles)) < 3:
        return random_convex_polygon(rng, center_range, radius_range, n_range)
    pts = tuple((cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles)
    try:
        return PolygonMask(pts)
    except ValueError:
        return random_convex_polygon(rng, center_range, radius_range, n_range)
