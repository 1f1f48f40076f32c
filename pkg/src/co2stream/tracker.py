"""Two-stage IoU association tracker assigning persistent vehicle identities.

Association follows the ByteTrack scheme: high-confidence detections are
matched first against every live track by minimum-cost assignment on
cost = 1 - IoU, then the leftover low-confidence detections get a second
chance against still-unmatched active tracks at a looser IoU gate. Motion
is a constant-velocity Kalman prior; there is no appearance model.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ingest import BoundingBox, Detection, FrameRecord, PlateCandidate
from .kalman import KalmanFilter, state_to_xywh, states_to_xywh, xywh_to_measurement


class OutOfOrderFrame(Exception):
    """Raised when a frame index regresses within one stream."""


class TrackState(Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    det_conf_floor: float = 0.25
    high_score_thresh: float = 0.5
    match_iou_thresh: float = 0.45
    low_match_iou_thresh: float = 0.3
    track_buffer_frames: int = 30
    min_hits_to_activate: int = 2
    kalman_pos_weight: float = 1.0 / 20
    kalman_vel_weight: float = 1.0 / 160

    def __post_init__(self):
        for name in ("high_score_thresh", "match_iou_thresh", "low_match_iou_thresh"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0,1), got {value}")
        if not 0.0 <= self.det_conf_floor <= 1.0:
            raise ValueError(f"det_conf_floor must be in [0,1], got {self.det_conf_floor}")
        if self.low_match_iou_thresh > self.match_iou_thresh:
            raise ValueError("low_match_iou_thresh must not exceed match_iou_thresh")
        if self.track_buffer_frames < 1 or self.min_hits_to_activate < 1:
            raise ValueError("track_buffer_frames and min_hits_to_activate must be positive")


@dataclass
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def check(self, tol: float = 1e-9) -> None:
        """Covariance sanity: symmetric with nonnegative diagonal, within tol."""
        c = self.covariance
        if not np.allclose(c, c.T, atol=tol):
            raise ValueError("covariance is not symmetric")
        if np.any(np.diag(c) < -tol):
            raise ValueError("covariance has a negative variance")


@dataclass
class Track:
    id: int
    state: TrackState
    kalman: KalmanState
    last_box: BoundingBox
    label_votes: Counter = field(default_factory=Counter)
    frames_since_update: int = 0
    hits: int = 1
    ever_activated: bool = False
    centroid_path: list[tuple[float, float, int]] = field(default_factory=list)
    plate_reads: list[PlateCandidate] = field(default_factory=list)
    first_frame: int = 0
    last_frame: int = 0
    last_timestamp_ms: int = 0

    @property
    def predicted_box(self) -> np.ndarray:
        return state_to_xywh(self.kalman.mean)

    def majority_label(self) -> str:
        return max(self.label_votes.items(), key=lambda kv: kv[1])[0]


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (N,4) and (M,4) arrays of [x, y, w, h] boxes."""
    if boxes_a.size == 0 or boxes_b.size == 0:
        return np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
    ax1, ay1 = boxes_a[:, 0], boxes_a[:, 1]
    ax2, ay2 = ax1 + boxes_a[:, 2], ay1 + boxes_a[:, 3]
    bx1, by1 = boxes_b[:, 0], boxes_b[:, 1]
    bx2, by2 = bx1 + boxes_b[:, 2], by1 + boxes_b[:, 3]
    iw = np.clip(np.minimum(ax2[:, None], bx2) - np.maximum(ax1[:, None], bx1), 0, None)
    ih = np.clip(np.minimum(ay2[:, None], by2) - np.maximum(ay1[:, None], by1), 0, None)
    inter = iw * ih
    areas_a = (boxes_a[:, 2] * boxes_a[:, 3])[:, None]
    areas_b = boxes_b[:, 2] * boxes_b[:, 3]
    union = areas_a + areas_b - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


# Perturbation far below any meaningful IoU difference; on rectangular
# instances it steers WHICH rows/columns join the matching toward low indices
# (on square instances a linear bias is permutation-invariant, hence the
# explicit swap pass below for pairing order).
_TIE_EPS = 1e-12


def min_cost_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment, deterministic under cost ties.

    Ties resolve so that the lower row index takes the lower column index
    whenever swapping a pair of assignments leaves the total cost unchanged.
    """
    if cost.size == 0:
        return []
    n, m = cost.shape
    bias = np.arange(n * m, dtype=float).reshape(n, m) * _TIE_EPS
    rows, cols = linear_sum_assignment(cost + bias)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    changed = True
    while changed:
        changed = False
        for a in range(len(pairs)):
            i1, j1 = pairs[a]
            for b in range(a + 1, len(pairs)):
                i2, j2 = pairs[b]
                if j2 < j1 and cost[i1, j1] + cost[i2, j2] == cost[i1, j2] + cost[i2, j1]:
                    pairs[a], pairs[b] = (i1, j2), (i2, j1)
                    j1 = j2
                    changed = True
    return pairs


@dataclass
class Match:
    track: Track
    detection_index: int
    iou: float
    stage: int


@dataclass
class Assignment:
    matches: list[Match]
    unmatched_tracks: list[Track]
    unmatched_detections: list[int]


def associate(
    tracks: list[Track],
    detections: list[Detection],
    cfg: TrackerConfig,
    _predicted_boxes: np.ndarray | None = None,
) -> Assignment:
    """Two-stage matching of detections (pre-filtered at det_conf_floor) to tracks.

    Stage 1 pairs high-score detections with every non-removed track, then
    drops pairs under match_iou_thresh. Stage 2 pairs the remaining low-score
    detections with still-unmatched active tracks at low_match_iou_thresh.
    `_predicted_boxes`, aligned with `tracks`, skips recomputing predictions.
    """
    if _predicted_boxes is None and tracks:
        _predicted_boxes = states_to_xywh(np.stack([t.kalman.mean for t in tracks]))
    live = [i for i, t in enumerate(tracks) if t.state != TrackState.REMOVED]
    hi = [i for i, d in enumerate(detections) if d.confidence >= cfg.high_score_thresh]
    lo = [i for i, d in enumerate(detections) if d.confidence < cfg.high_score_thresh]

    matches: list[Match] = []
    matched_tracks: set[int] = set()
    matched_dets: set[int] = set()

    def run_stage(cand_track_idx: list[int], cand_dets: list[int], gate: float, stage: int):
        if not cand_track_idx or not cand_dets:
            return
        track_boxes = _predicted_boxes[cand_track_idx]
        det_boxes = np.array([detections[i].box.as_xywh() for i in cand_dets])
        ious = iou_matrix(track_boxes, det_boxes)
        for r, c in min_cost_assignment(1.0 - ious):
            if ious[r, c] < gate:
                continue
            track = tracks[cand_track_idx[r]]
            det_idx = cand_dets[c]
            matches.append(Match(track, det_idx, float(ious[r, c]), stage))
            matched_tracks.add(track.id)
            matched_dets.add(det_idx)

    run_stage(live, hi, cfg.match_iou_thresh, stage=1)
    remaining_active = [
        i for i in live
        if tracks[i].id not in matched_tracks and tracks[i].state == TrackState.ACTIVE
    ]
    run_stage(remaining_active, lo, cfg.low_match_iou_thresh, stage=2)

    unmatched_tracks = [tracks[i] for i in live if tracks[i].id not in matched_tracks]
    unmatched_dets = [i for i in range(len(detections)) if i not in matched_dets]
    return Assignment(matches, unmatched_tracks, unmatched_dets)


def predict(track: Track, kf: KalmanFilter) -> Track:
    """Advance one track's motion state a single frame in place."""
    track.kalman.mean, track.kalman.covariance = kf.predict(
        track.kalman.mean, track.kalman.covariance
    )
    return track


class Tracker:
    """Stateful per-stream tracker; feed frames in order via step()."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.kf = KalmanFilter(self.cfg.kalman_pos_weight, self.cfg.kalman_vel_weight)
        self._tracks: list[Track] = []
        self._finished: list[Track] = []
        self._next_id = 1
        self._last_frame_index: int | None = None
        self.peak_live_tracks = 0

    @property
    def live_tracks(self) -> list[Track]:
        return list(self._tracks)

    def _predict_all(self) -> np.ndarray | None:
        if not self._tracks:
            return None
        means = np.stack([t.kalman.mean for t in self._tracks])
        covs = np.stack([t.kalman.covariance for t in self._tracks])
        means, covs = self.kf.multi_predict(means, covs)
        for i, t in enumerate(self._tracks):
            t.kalman.mean = means[i]
            t.kalman.covariance = covs[i]
        return states_to_xywh(means)

    def _update_matched(self, matched: list[tuple[Track, Detection]]):
        if not matched:
            return
        means = np.stack([t.kalman.mean for t, _ in matched])
        covs = np.stack([t.kalman.covariance for t, _ in matched])
        z = np.stack([xywh_to_measurement(d.box.x, d.box.y, d.box.w, d.box.h) for _, d in matched])
        means, covs = self.kf.multi_update(means, covs, z)
        for i, (t, _) in enumerate(matched):
            t.kalman.mean = means[i]
            t.kalman.covariance = covs[i]

    def _spawn(self, det: Detection, frame: FrameRecord) -> Track:
        z = xywh_to_measurement(det.box.x, det.box.y, det.box.w, det.box.h)
        mean, cov = self.kf.initiate(z)
        state = (
            TrackState.ACTIVE if self.cfg.min_hits_to_activate <= 1 else TrackState.TENTATIVE
        )
        track = Track(
            id=self._next_id,
            state=state,
            kalman=KalmanState(mean, cov),
            last_box=det.box,
            first_frame=frame.frame_index,
            last_frame=frame.frame_index,
            last_timestamp_ms=frame.timestamp_ms,
        )
        self._next_id += 1
        track.ever_activated = state == TrackState.ACTIVE
        track.label_votes[det.label] += 1
        cx, cy = det.box.center
        track.centroid_path.append((cx, cy, frame.timestamp_ms))
        track.plate_reads.extend(det.plate_candidates)
        return track

    def step(self, frame: FrameRecord) -> list[tuple[int, Detection]]:
        """Process one frame; returns (track_id, detection) pairs for active tracks."""
        if self._last_frame_index is not None and frame.frame_index <= self._last_frame_index:
            raise OutOfOrderFrame(
                f"frame {frame.frame_index} after frame {self._last_frame_index}"
            )
        self._last_frame_index = frame.frame_index

        dets = [d for d in frame.detections if d.confidence >= self.cfg.det_conf_floor]
        predicted_boxes = self._predict_all()
        assignment = associate(self._tracks, dets, self.cfg, _predicted_boxes=predicted_boxes)

        emitted: list[tuple[int, Detection]] = []
        self._update_matched([(m.track, dets[m.detection_index]) for m in assignment.matches])
        for m in assignment.matches:
            det = dets[m.detection_index]
            track = m.track
            track.hits += 1
            track.frames_since_update = 0
            track.last_box = det.box
            track.last_frame = frame.frame_index
            track.label_votes[det.label] += 1
            track.plate_reads.extend(det.plate_candidates)
            cx, cy = det.box.center
            if frame.timestamp_ms > track.last_timestamp_ms or not track.centroid_path:
                track.centroid_path.append((cx, cy, frame.timestamp_ms))
            track.last_timestamp_ms = max(track.last_timestamp_ms, frame.timestamp_ms)
            if track.state == TrackState.TENTATIVE:
                if track.hits >= self.cfg.min_hits_to_activate:
                    track.state = TrackState.ACTIVE
                    track.ever_activated = True
            elif track.state == TrackState.LOST:
                track.state = TrackState.ACTIVE
            if track.state == TrackState.ACTIVE:
                emitted.append((track.id, det))

        for track in assignment.unmatched_tracks:
            track.frames_since_update += 1
            track.hits = 0
            if track.state == TrackState.TENTATIVE:
                # An unconfirmed track that misses a frame is noise; drop it.
                track.state = TrackState.REMOVED
            elif track.state == TrackState.ACTIVE:
                track.state = TrackState.LOST
            if (
                track.state == TrackState.LOST
                and track.frames_since_update > self.cfg.track_buffer_frames
            ):
                track.state = TrackState.REMOVED

        for det_idx in assignment.unmatched_detections:
            det = dets[det_idx]
            if det.confidence >= self.cfg.high_score_thresh:
                track = self._spawn(det, frame)
                self._tracks.append(track)
                if track.state == TrackState.ACTIVE:
                    emitted.append((track.id, det))

        removed = [t for t in self._tracks if t.state == TrackState.REMOVED]
        if removed:
            self._finished.extend(removed)
            self._tracks = [t for t in self._tracks if t.state != TrackState.REMOVED]
        self.peak_live_tracks = max(self.peak_live_tracks, len(self._tracks))
        return emitted

    def pop_finished(self) -> list[Track]:
        """Tracks removed since the last call; caller takes ownership."""
        out, self._finished = self._finished, []
        return out

    def finish(self) -> list[Track]:
        """End of stream: remove and return every remaining track."""
        for t in self._tracks:
            if t.state == TrackState.ACTIVE:
                t.state = TrackState.LOST
            t.state = TrackState.REMOVED
        self._finished.extend(self._tracks)
        self._tracks = []
        return self.pop_finished()
