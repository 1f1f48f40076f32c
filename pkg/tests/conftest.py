from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from co2stream.ingest import BoundingBox, Detection, FrameRecord, PlateCandidate


def make_detection(x, y, w, h, label="car", conf=0.9, plates=()):
    return Detection(
        box=BoundingBox(x, y, w, h),
        label=label,
        confidence=conf,
        plate_candidates=tuple(PlateCandidate(t, c) for t, c in plates),
    )


def make_frame(index, dets, ts_ms=None):
    return FrameRecord(
        frame_index=index,
        timestamp_ms=index * 40 if ts_ms is None else ts_ms,
        detections=tuple(dets),
    )


@pytest.fixture
def mock_registry():
    """Factory for started mock servers; stops them all on teardown."""
    from co2stream.registry import MockRegistryServer

    servers = []

    def start(fixtures, **kwargs):
        server = MockRegistryServer(fixtures, **kwargs).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()
