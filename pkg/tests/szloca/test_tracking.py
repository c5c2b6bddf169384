"""
Tests for the ground-plane tracker
"""

import itertools

import numpy as np
import pytest

from szloca.anchoring import AnchorResult, AnchorStrategy
from szloca.errors import ConfigError, FrameOrderError
from szloca.lifting import LiftedDetection
from szloca.smoothing import SmootherConfig
from szloca.tracking import (
    Lifecycle,
    TrackerParams,
    TrackState,
    Tracker,
    associate,
    predict,
    update,
)

ANCHOR = AnchorResult(pixel=(0.0, 0.0), strategy_used=AnchorStrategy.FEET)


def _det(x, z, y=0.0):
    return LiftedDetection(ground_point=np.array([x, y, z], dtype=float), anchor=ANCHOR)


def _state(track_id, x, z, vx=0.0, vz=0.0, cov=None):
    return TrackState(
        track_id=track_id,
        mean=np.array([x, z, vx, vz], dtype=float),
        covariance=np.eye(4) if cov is None else cov,
    )


def _textbook_predict(x, p, dt, accel_std):
    f = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    g = np.array([[0.5 * dt ** 2, 0], [0, 0.5 * dt ** 2], [dt, 0], [0, dt]])
    q = g @ g.T * accel_std ** 2
    return f @ x, f @ p @ f.T + q


def _textbook_update(x, p, z, meas_std):
    h = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    r = np.eye(2) * meas_std ** 2
    s = h @ p @ h.T + r
    k = p @ h.T @ np.linalg.inv(s)
    x = x + k @ (z - h @ x)
    p = (np.eye(4) - k @ h) @ p
    return x, p


@pytest.mark.unit
class TestKalman:
    """Constant-velocity predict and update"""

    def test_linear_motion(self):
        """(0, 0, 1, 0) advanced by 0.5 s sits at (0.5, 0)"""
        out = predict(_state(1, 0, 0, vx=1.0), 0.5)
        np.testing.assert_allclose(out.position, [0.5, 0.0])

    def test_stationary_grows_covariance(self):
        state = _state(1, 2.0, -3.0)
        out = predict(state, 0.04)
        np.testing.assert_allclose(out.position, [2.0, -3.0])
        assert np.all(np.diag(out.covariance) > np.diag(state.covariance))

    def test_non_positive_dt_rejected(self):
        with pytest.raises(ValueError):
            predict(_state(1, 0, 0), 0.0)

    def test_matches_textbook_filter(self, rng):
        """100 random predict/update steps agree with a plain textbook filter"""
        x = rng.normal(size=4)
        a = rng.normal(size=(4, 4))
        p = a @ a.T + np.eye(4)
        state = TrackState(track_id=1, mean=x.copy(), covariance=p.copy())
        for _ in range(100):
            dt = rng.uniform(0.01, 0.2)
            z = rng.normal(size=2)
            x, p = _textbook_predict(x, p, dt, 1.3)
            x, p = _textbook_update(x, p, z, 0.2)
            state = update(predict(state, dt, 1.3), z, 0.2)
            np.testing.assert_allclose(state.mean, x, atol=1e-9)
            np.testing.assert_allclose(state.covariance, p, atol=1e-9)

    def test_update_pulls_towards_measurement(self):
        state = update(_state(1, 0.0, 0.0), (1.0, 0.0), measurement_std=1.0)
        assert 0.0 < state.position[0] < 1.0


@pytest.mark.unit
class TestAssociate:
    """Gated optimal assignment"""

    def test_well_separated(self):
        tracks = [_state(1, 0, 0), _state(2, 5, 0)]
        result = associate(tracks, [_det(0.2, 0), _det(5.1, 0)], TrackerParams())
        assert result.pairs == [(0, 0), (1, 1)]
        assert result.unmatched_tracks == [] and result.unmatched_detections == []

    def test_gated_out(self):
        result = associate([_state(1, 0, 0)], [_det(10, 10)], TrackerParams(gate_radius=1.5))
        assert result.pairs == []
        assert result.unmatched_tracks == [0]
        assert result.unmatched_detections == [0]

    def test_empty_sides(self):
        assert associate([], [_det(0, 0)], TrackerParams()).unmatched_detections == [0]
        assert associate([_state(1, 0, 0)], [], TrackerParams()).unmatched_tracks == [0]

    def test_optimal_against_all_permutations(self, rng):
        """Total cost equals the best of all 720 assignments"""
        centers = rng.uniform(-0.4, 0.4, size=(6, 2))
        tracks = [_state(i + 1, *c) for i, c in enumerate(centers)]
        dets_xy = centers + rng.uniform(-0.3, 0.3, size=(6, 2))
        dets = [_det(x, z) for x, z in dets_xy]
        result = associate(tracks, dets, TrackerParams(gate_radius=5.0))
        assert len(result.pairs) == 6

        cost = np.linalg.norm(centers[:, None, :] - dets_xy[None, :, :], axis=2)
        got = sum(cost[t, d] for t, d in result.pairs)
        best = min(sum(cost[i, perm[i]] for i in range(6)) for perm in itertools.permutations(range(6)))
        assert got == pytest.approx(best)

    def test_prefers_more_matches(self):
        """A cheaper single match never beats two admissible matches"""
        tracks = [_state(1, 0.0, 0), _state(2, 2.0, 0)]
        dets = [_det(1.0, 0), _det(3.4, 0)]
        result = associate(tracks, dets, TrackerParams(gate_radius=1.5))
        assert result.pairs == [(0, 0), (1, 1)]

    def test_pairs_use_input_indices(self):
        """Tracks given out of id order still report their input positions"""
        tracks = [_state(7, 5, 0), _state(3, 0, 0)]
        result = associate(tracks, [_det(0.1, 0), _det(5.1, 0)], TrackerParams())
        assert result.pairs == [(0, 1), (1, 0)]

    def test_tie_goes_to_lower_detection_index(self):
        """A track equidistant from two detections takes the first one"""
        for dets in ([_det(1.0, 0), _det(-1.0, 0)], [_det(-1.0, 0), _det(1.0, 0)]):
            result = associate([_state(1, 0, 0)], dets, TrackerParams())
            assert result.pairs == [(0, 0)]
            assert result.unmatched_detections == [1]

    def test_tie_goes_to_lower_track_id(self):
        """Two tracks equidistant from one detection: the lower id wins"""
        tracks = [_state(2, 1.0, 0), _state(1, -1.0, 0)]
        result = associate(tracks, [_det(0, 0)], TrackerParams())
        assert result.pairs == [(1, 0)]
        assert result.unmatched_tracks == [0]

    @pytest.mark.parametrize("ids, expected", [((1, 2), [(0, 0), (1, 1)]), ((2, 1), [(0, 1), (1, 0)])])
    def test_all_equal_costs(self, ids, expected):
        """Every pairing costs the same: tracks in id order take detections in index order"""
        tracks = [_state(ids[0], 0, 1.0), _state(ids[1], 0, -1.0)]
        result = associate(tracks, [_det(1.0, 0), _det(-1.0, 0)], TrackerParams())
        assert result.pairs == expected


@pytest.mark.unit
class TestTracker:
    """Lifecycle and identity"""

    def test_cold_start_immediate_confirm(self):
        tracker = Tracker(TrackerParams(n_init=1))
        out = tracker.step(0, 0.0, [_det(0, -5), _det(3, -5)])
        assert [t.track_id for t in out] == [1, 2]
        assert all(t.state is Lifecycle.CONFIRMED for t in out)

    def test_tentative_until_n_init(self):
        tracker = Tracker(TrackerParams(n_init=3))
        assert tracker.step(0, 0.00, [_det(0, -5)]) == []
        assert tracker.step(1, 0.04, [_det(0, -5)]) == []
        out = tracker.step(2, 0.08, [_det(0, -5)])
        assert [t.track_id for t in out] == [1]

    def test_lost_then_recovered(self):
        """A confirmed track that misses is hidden, then confirmed again on re-match"""
        tracker = Tracker(TrackerParams(n_init=1, max_age=5))
        tracker.step(0, 0.00, [_det(0, -5)])
        assert tracker.step(1, 0.04, []) == []
        assert tracker.tracks[0].lifecycle is Lifecycle.LOST
        out = tracker.step(2, 0.08, [_det(0, -5)])
        assert [t.track_id for t in out] == [1]

    def test_removed_after_max_age_and_id_not_reused(self):
        tracker = Tracker(TrackerParams(n_init=1, max_age=2))
        tracker.step(0, 0.0, [_det(0, -5)])
        for k in range(1, 4):
            tracker.step(k, k * 0.04, [])
        assert tracker.active_count == 0
        out = tracker.step(4, 0.16, [_det(0, -5)])
        assert [t.track_id for t in out] == [2]

    def test_survives_exactly_max_age_misses(self):
        tracker = Tracker(TrackerParams(n_init=1, max_age=2))
        tracker.step(0, 0.0, [_det(0, -5)])
        tracker.step(1, 0.04, [])
        tracker.step(2, 0.08, [])
        assert tracker.active_count == 1

    def test_non_increasing_timestamp(self):
        tracker = Tracker()
        tracker.step(0, 1.0, [])
        with pytest.raises(FrameOrderError) as exc_info:
            tracker.step(1, 1.0, [])
        assert exc_info.value.frame_index == 1

    def test_output_fields(self):
        tracker = Tracker(TrackerParams(n_init=1, smoother=SmootherConfig(kind="none")))
        det = _det(1.0, -5.0, y=0.2)
        det.skeleton3d = {"nose": np.array([1.0, 1.9, -5.0])}
        (track,) = tracker.step(0, 0.0, [det])
        assert track.position == pytest.approx((1.0, 0.2, -5.0))
        assert track.smoothed == track.position
        assert track.velocity == (0.0, 0.0)
        assert track.skeleton == {"nose": pytest.approx((1.0, 1.9, -5.0))}

    def test_crossing_agents_keep_identity(self):
        """Two noise-free agents crossing at constant velocity never swap ids"""
        tracker = Tracker(TrackerParams(n_init=1, measurement_std=0.05))
        dt = 0.04
        ids_a, ids_b = set(), set()
        for k in range(150):
            t = k * dt
            a = _det(-3.0 + 1.0 * t, -10.0 + 0.2 * t)
            b = _det(3.0 - 1.0 * t, -10.0 + 0.2 * t - 0.3)
            out = tracker.step(k, t, [a, b])
            assert len(out) == 2
            for track in out:
                xz = np.array([track.position[0], track.position[2]])
                if np.linalg.norm(xz - a.ground_point[[0, 2]]) < 0.1:
                    ids_a.add(track.track_id)
                if np.linalg.norm(xz - b.ground_point[[0, 2]]) < 0.1:
                    ids_b.add(track.track_id)
        assert ids_a == {1}
        assert ids_b == {2}

    @pytest.mark.parametrize("kwargs", [{"n_init": 0}, {"max_age": 0}, {"gate_radius": -1.0},
                                        {"measurement_std": 0.0}])
    def test_invalid_params(self, kwargs):
        with pytest.raises(ConfigError):
            TrackerParams(**kwargs)
