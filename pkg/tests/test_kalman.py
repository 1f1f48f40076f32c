import numpy as np
import pytest

from co2stream.kalman import KalmanFilter, state_to_xywh, xywh_to_measurement


@pytest.fixture
def kf():
    return KalmanFilter()


def test_initiate_centers_on_measurement(kf):
    z = xywh_to_measurement(10, 20, 30, 40)
    mean, cov = kf.initiate(z)
    assert np.allclose(mean[:4], z)
    assert np.allclose(mean[4:], 0)
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) >= 0)


def test_predict_zero_velocity_keeps_position(kf):
    mean, cov = kf.initiate(np.array([50.0, 60.0, 1.0, 40.0]))
    new_mean, _ = kf.predict(mean, cov)
    assert np.allclose(new_mean[:4], mean[:4])


def test_predict_applies_velocity(kf):
    mean, cov = kf.initiate(np.array([10.0, 5.0, 1.0, 40.0]))
    mean[4] = 2.0  # cx velocity, px/frame
    new_mean, _ = kf.predict(mean, cov)
    assert new_mean[0] == pytest.approx(12.0)
    assert new_mean[1] == pytest.approx(5.0)


def test_predict_grows_covariance_trace(kf):
    mean, cov = kf.initiate(np.array([10.0, 5.0, 1.0, 40.0]))
    for _ in range(10):
        new_mean, new_cov = kf.predict(mean, cov)
        assert np.trace(new_cov) >= np.trace(cov)
        mean, cov = new_mean, new_cov


def test_update_pulls_mean_toward_measurement(kf):
    mean, cov = kf.initiate(np.array([10.0, 10.0, 1.0, 40.0]))
    mean, cov = kf.predict(mean, cov)
    z = np.array([14.0, 10.0, 1.0, 40.0])
    new_mean, new_cov = kf.update(mean, cov, z)
    assert 10.0 < new_mean[0] <= 14.0
    assert np.allclose(new_cov, new_cov.T, atol=1e-9)
    assert np.all(np.diag(new_cov) >= -1e-9)


def test_covariance_stays_psd_through_cycles(kf):
    mean, cov = kf.initiate(np.array([100.0, 100.0, 0.8, 50.0]))
    rng = np.random.default_rng(0)
    for step in range(50):
        mean, cov = kf.predict(mean, cov)
        z = mean[:4] + rng.normal(0, 1.0, size=4)
        z[3] = max(z[3], 1.0)
        mean, cov = kf.update(mean, cov, z)
        assert np.allclose(cov, cov.T, atol=1e-9)
        assert np.min(np.linalg.eigvalsh(cov)) >= -1e-9


def test_batch_matches_single(kf):
    rng = np.random.default_rng(1)
    means, covs = [], []
    for _ in range(5):
        m, c = kf.initiate(rng.uniform(10, 100, size=4))
        means.append(m)
        covs.append(c)
    means = np.stack(means)
    covs = np.stack(covs)
    bm, bc = kf.multi_predict(means, covs)
    for i in range(5):
        sm, sc = kf.predict(means[i], covs[i])
        assert np.allclose(bm[i], sm)
        assert np.allclose(bc[i], sc)
    z = bm[:, :4] + 0.5
    um, uc = kf.multi_update(bm, bc, z)
    for i in range(5):
        sm, sc = kf.update(bm[i], bc[i], z[i])
        assert np.allclose(um[i], sm)
        assert np.allclose(uc[i], sc)


def test_velocity_learned_from_motion(kf):
    mean, cov = kf.initiate(np.array([0.0, 0.0, 1.0, 40.0]))
    for k in range(1, 20):
        mean, cov = kf.predict(mean, cov)
        mean, cov = kf.update(mean, cov, np.array([3.0 * k, 0.0, 1.0, 40.0]))
    assert mean[4] == pytest.approx(3.0, abs=0.2)


def test_box_round_trip():
    box = state_to_xywh(np.array([50.0, 60.0, 2.0, 30.0, 0, 0, 0, 0]))
    assert np.allclose(box, [20.0, 45.0, 60.0, 30.0])
    z = xywh_to_measurement(*box)
    assert np.allclose(z, [50.0, 60.0, 2.0, 30.0])
