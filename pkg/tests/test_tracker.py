import numpy as np
import pytest
from conftest import make_detection, make_frame

from co2stream.ingest import BoundingBox
from co2stream.kalman import KalmanFilter, xywh_to_measurement
from co2stream.tracker import (
    Assignment,
    KalmanState,
    OutOfOrderFrame,
    Track,
    Tracker,
    TrackerConfig,
    TrackState,
    associate,
    box_iou,
    iou_matrix,
    min_cost_assignment,
    predict,
)
from oracles import min_cost_permutation


def make_track(track_id, x, y, w, h, state=TrackState.ACTIVE):
    kf = KalmanFilter()
    mean, cov = kf.initiate(xywh_to_measurement(x, y, w, h))
    return Track(
        id=track_id,
        state=state,
        kalman=KalmanState(mean, cov),
        last_box=BoundingBox(x, y, w, h),
    )


class TestBoxIou:
    def test_identity(self):
        b = BoundingBox(3, 4, 10, 12)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(BoundingBox(0, 0, 10, 10), BoundingBox(100, 100, 10, 10)) == 0.0

    def test_half_overlap(self):
        # intersection 50, union 150
        iou = box_iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 10, 10))
        assert iou == pytest.approx(1 / 3)

    def test_symmetry(self):
        a = BoundingBox(0, 0, 7, 9)
        b = BoundingBox(3, 2, 11, 5)
        assert box_iou(a, b) == pytest.approx(box_iou(b, a))

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(0)
        boxes_a = [BoundingBox(*xy, *wh) for xy, wh in
                   zip(rng.uniform(0, 50, (4, 2)), rng.uniform(1, 30, (4, 2)))]
        boxes_b = [BoundingBox(*xy, *wh) for xy, wh in
                   zip(rng.uniform(0, 50, (3, 2)), rng.uniform(1, 30, (3, 2)))]
        mat = iou_matrix(
            np.array([b.as_xywh() for b in boxes_a]),
            np.array([b.as_xywh() for b in boxes_b]),
        )
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert mat[i, j] == pytest.approx(box_iou(a, b))


class TestPredict:
    def test_zero_velocity_static(self):
        track = make_track(1, 10, 10, 20, 20)
        before = track.kalman.mean[:4].copy()
        predict(track, KalmanFilter())
        assert np.allclose(track.kalman.mean[:4], before)

    def test_velocity_moves_center(self):
        track = make_track(1, 0, 0, 20, 20)
        track.kalman.mean[4] = 2.0
        predict(track, KalmanFilter())
        assert track.kalman.mean[0] == pytest.approx(12.0)  # cx was 10

    def test_trace_non_decreasing(self):
        track = make_track(1, 5, 5, 30, 30)
        for _ in range(5):
            before = np.trace(track.kalman.covariance)
            predict(track, KalmanFilter())
            assert np.trace(track.kalman.covariance) >= before


class TestMinCostAssignment:
    def test_against_permutation_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = rng.integers(1, 5)
            cost = rng.uniform(0, 1, size=(n, n))
            pairs = min_cost_assignment(cost)
            total = sum(cost[r, c] for r, c in pairs)
            assert total == pytest.approx(min_cost_permutation(cost.tolist()), abs=1e-9)

    def test_tie_break_prefers_low_indices(self):
        cost = np.zeros((2, 2))
        assert min_cost_assignment(cost) == [(0, 0), (1, 1)]
        # rows with internally-constant costs: every permutation is optimal,
        # the canonical answer pairs low rows with low columns
        assert min_cost_assignment(np.array([[0.1, 0.1], [0.2, 0.2]])) == [(0, 0), (1, 1)]
        assert min_cost_assignment(np.full((3, 3), 0.4)) == [(0, 0), (1, 1), (2, 2)]

    def test_tie_break_never_trades_away_optimality(self):
        cost = np.array([[0.5, 0.0], [0.0, 0.5]])  # unique crossed optimum
        assert min_cost_assignment(cost) == [(0, 1), (1, 0)]

    def test_empty(self):
        assert min_cost_assignment(np.zeros((0, 0))) == []


class TestAssociate:
    def cfg(self, **kw):
        return TrackerConfig(**kw)

    def test_single_close_pair_matches(self):
        track = make_track(1, 10, 10, 20, 20)
        det = make_detection(11, 10, 20, 20, conf=0.9)
        result = associate([track], [det], self.cfg())
        assert len(result.matches) == 1
        assert result.matches[0].iou >= 0.45

    def test_no_tracks_all_unmatched(self):
        dets = [make_detection(i * 30, 0, 20, 20, conf=0.9) for i in range(4)]
        result = associate([], dets, self.cfg())
        assert result.matches == []
        assert result.unmatched_detections == [0, 1, 2, 3]

    def test_crossed_positions_use_optimal_assignment(self):
        # track 1 near det B, track 2 near det A, but the straight pairing
        # (1-A, 2-B) has higher total IoU; the optimal solution must win over
        # per-row greedy choices.
        t1 = make_track(1, 0, 0, 20, 20)
        t2 = make_track(2, 14, 0, 20, 20)
        d_a = make_detection(4, 0, 20, 20, conf=0.9)
        d_b = make_detection(12, 0, 20, 20, conf=0.9)
        ious = iou_matrix(
            np.stack([t1.predicted_box, t2.predicted_box]),
            np.array([d_a.box.as_xywh(), d_b.box.as_xywh()]),
        )
        best = min_cost_permutation((1.0 - ious).tolist())
        result = associate(
            [t1, t2], [d_a, d_b], self.cfg(match_iou_thresh=0.2, low_match_iou_thresh=0.1)
        )
        got = sum(1.0 - m.iou for m in result.matches)
        assert got == pytest.approx(best, abs=1e-9)

    def test_low_score_second_stage(self):
        track = make_track(1, 10, 10, 20, 20, state=TrackState.ACTIVE)
        det = make_detection(12, 10, 20, 20, conf=0.3)  # below high_score_thresh
        result = associate([track], [det], self.cfg())
        assert len(result.matches) == 1
        assert result.matches[0].stage == 2

    def test_low_score_does_not_match_tentative(self):
        track = make_track(1, 10, 10, 20, 20, state=TrackState.TENTATIVE)
        det = make_detection(12, 10, 20, 20, conf=0.3)
        result = associate([track], [det], self.cfg())
        assert result.matches == []

    def test_gate_rejects_weak_overlap(self):
        track = make_track(1, 0, 0, 10, 10)
        det = make_detection(9, 9, 10, 10, conf=0.9)  # IoU ~ 0.005
        result = associate([track], [det], self.cfg())
        assert result.matches == []
        assert result.unmatched_tracks == [track]
        assert result.unmatched_detections == [0]


def drift_stream(n_frames, speed=2.0, start=0.0, label="car", conf=0.9, entry=0):
    frames = []
    for k in range(n_frames):
        dets = []
        if k >= entry:
            dets = [make_detection(start + speed * (k - entry), 50, 40, 30,
                                   label=label, conf=conf)]
        frames.append(make_frame(k, dets))
    return frames


class TestTrackerLifecycle:
    def test_single_object_single_id(self):
        tracker = Tracker()
        ids = set()
        emissions = 0
        for frame in drift_stream(30):
            for track_id, _ in tracker.step(frame):
                ids.add(track_id)
                emissions += 1
        assert ids == {1}
        assert emissions == 29  # activation on the second consecutive hit

    def test_empty_stream(self):
        tracker = Tracker()
        for frame in [make_frame(i, []) for i in range(10)]:
            assert tracker.step(frame) == []
        assert tracker.finish() == []

    def test_gap_longer_than_buffer_spawns_new_id(self):
        cfg = TrackerConfig(track_buffer_frames=5)
        tracker = Tracker(cfg)
        ids = set()
        gap = cfg.track_buffer_frames + 1
        frame_idx = 0
        for k in range(10):
            for tid, _ in tracker.step(make_frame(frame_idx, [make_detection(10, 10, 40, 30)])):
                ids.add(tid)
            frame_idx += 1
        for _ in range(gap):
            tracker.step(make_frame(frame_idx, []))
            frame_idx += 1
        for k in range(10):
            for tid, _ in tracker.step(make_frame(frame_idx, [make_detection(10, 10, 40, 30)])):
                ids.add(tid)
            frame_idx += 1
        assert len(ids) == 2

    def test_gap_within_buffer_keeps_id(self):
        cfg = TrackerConfig(track_buffer_frames=5)
        tracker = Tracker(cfg)
        ids = set()
        frame_idx = 0
        for k in range(10):
            for tid, _ in tracker.step(make_frame(frame_idx, [make_detection(10, 10, 40, 30)])):
                ids.add(tid)
            frame_idx += 1
        for _ in range(cfg.track_buffer_frames):
            tracker.step(make_frame(frame_idx, []))
            frame_idx += 1
        for k in range(5):
            for tid, _ in tracker.step(make_frame(frame_idx, [make_detection(10, 10, 40, 30)])):
                ids.add(tid)
            frame_idx += 1
        assert len(ids) == 1

    def test_out_of_order_frame_raises(self):
        tracker = Tracker()
        tracker.step(make_frame(5, []))
        with pytest.raises(OutOfOrderFrame):
            tracker.step(make_frame(5, []))
        with pytest.raises(OutOfOrderFrame):
            tracker.step(make_frame(3, []))

    def test_ids_unique_and_monotonic(self):
        tracker = Tracker(TrackerConfig(min_hits_to_activate=1))
        seen = []
        for k in range(20):
            dets = [
                make_detection(200 * j + 5 * k, 40, 40, 30, conf=0.9)
                for j in range(3)
            ]
            for tid, _ in tracker.step(make_frame(k, dets)):
                if tid not in seen:
                    seen.append(tid)
        assert seen == sorted(seen)
        assert len(seen) == len(set(seen))

    def test_one_detection_per_track_per_frame(self):
        tracker = Tracker(TrackerConfig(min_hits_to_activate=1))
        for k in range(15):
            dets = [make_detection(100 * j + 3 * k, 40, 40, 30) for j in range(4)]
            emitted = tracker.step(make_frame(k, dets))
            ids = [tid for tid, _ in emitted]
            assert len(ids) == len(set(ids))

    def test_centroid_path_and_plate_reads_accumulate(self):
        tracker = Tracker()
        frames = []
        for k in range(10):
            det = make_detection(2.0 * k, 50, 40, 30, plates=[(f"AB1{k}CDE", 0.8)])
            frames.append(make_frame(k, [det]))
        for frame in frames:
            tracker.step(frame)
        (track,) = tracker.finish()
        assert len(track.centroid_path) == 10
        assert len(track.plate_reads) == 10
        timestamps = [ts for _, _, ts in track.centroid_path]
        assert timestamps == sorted(timestamps)
        assert len(set(timestamps)) == len(timestamps)

    def test_determinism(self):
        def run():
            tracker = Tracker()
            out = []
            rng = np.random.default_rng(7)
            for k in range(40):
                dets = [
                    make_detection(5 * k + float(rng.uniform(-1, 1)), 50, 40, 30, conf=0.9),
                    make_detection(300 - 4 * k, 200, 50, 35, conf=0.7),
                ]
                out.extend(tid for tid, _ in tracker.step(make_frame(k, dets)))
            return out

        assert run() == run()

    def test_matched_pairs_respect_stage_thresholds(self):
        cfg = TrackerConfig()
        tracker = Tracker(cfg)
        rng = np.random.default_rng(3)
        for k in range(30):
            dets = [
                make_detection(
                    max(0.0, 4.0 * k + float(rng.uniform(-2, 2))),
                    60 + float(rng.uniform(-2, 2)),
                    40, 30,
                    conf=float(rng.uniform(0.26, 1.0)),
                )
            ]
            frame = make_frame(k, dets)
            live = tracker.live_tracks
            if live:
                from co2stream.tracker import associate as assoc

                filtered = [d for d in frame.detections if d.confidence >= cfg.det_conf_floor]
                self_assignment = assoc(live, filtered, cfg)
                for m in self_assignment.matches:
                    gate = cfg.match_iou_thresh if m.stage == 1 else cfg.low_match_iou_thresh
                    assert m.iou >= gate
            tracker.step(frame)

    def test_finish_reports_all_tracks(self):
        tracker = Tracker()
        for frame in drift_stream(10):
            tracker.step(frame)
        finished = tracker.finish()
        assert len(finished) == 1
        assert finished[0].ever_activated
        assert tracker.live_tracks == []

    def test_kalman_state_stays_well_formed(self):
        tracker = Tracker()
        for frame in drift_stream(40, speed=3.5):
            tracker.step(frame)
            for track in tracker.live_tracks:
                track.kalman.check()  # symmetric, nonnegative diagonal

    def test_kalman_state_check_rejects_garbage(self):
        track = make_track(1, 10, 10, 20, 20)
        track.kalman.covariance = track.kalman.covariance.copy()
        track.kalman.covariance[0, 1] = 99.0  # break symmetry
        with pytest.raises(ValueError):
            track.kalman.check()
