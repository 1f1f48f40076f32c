"""Constant-velocity Kalman filter over (cx, cy, aspect, height) box states.

State is the 8-vector [cx, cy, a, h, vcx, vcy, va, vh] with per-frame
velocities. Process and measurement noise scale with box height, so tall
(near) objects tolerate larger pixel errors than distant ones. Batched
variants operate on stacked (N, 8) means and (N, 8, 8) covariances so a
whole frame's tracks advance in a handful of numpy calls.
"""

from __future__ import annotations

import numpy as np

NDIM = 4
# x' = F x: positions pick up their velocities once per frame.
_F = np.eye(2 * NDIM)
for _i in range(NDIM):
    _F[_i, NDIM + _i] = 1.0
_FT = _F.T.copy()
_H = np.eye(NDIM, 2 * NDIM)


class KalmanFilter:
    def __init__(self, pos_weight: float = 1.0 / 20, vel_weight: float = 1.0 / 160):
        self.pos_weight = pos_weight
        self.vel_weight = vel_weight

    def initiate(self, measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """New track state from an unassociated measurement [cx, cy, a, h]."""
        mean = np.zeros(2 * NDIM)
        mean[:NDIM] = measurement
        h = measurement[3]
        wp, wv = self.pos_weight, self.vel_weight
        std = np.array(
            [2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h, 10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h]
        )
        return mean, np.diag(np.square(std))

    def _process_noise(self, heights: np.ndarray) -> np.ndarray:
        wp, wv = self.pos_weight, self.vel_weight
        n = heights.shape[0]
        std = np.empty((n, 2 * NDIM))
        std[:, 0] = std[:, 1] = std[:, 3] = wp * heights
        std[:, 2] = 1e-2
        std[:, 4] = std[:, 5] = std[:, 7] = wv * heights
        std[:, 6] = 1e-5
        out = np.zeros((n, 2 * NDIM, 2 * NDIM))
        idx = np.arange(2 * NDIM)
        out[:, idx, idx] = np.square(std)
        return out

    def predict(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        means, covs = self.multi_predict(mean[None, :], cov[None, :, :])
        return means[0], covs[0]

    def multi_predict(
        self, means: np.ndarray, covs: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance stacked states one frame under the constant-velocity model."""
        new_means = means @ _FT
        new_covs = _F @ covs @ _FT + self._process_noise(means[:, 3])
        new_covs = (new_covs + new_covs.transpose(0, 2, 1)) * 0.5
        return new_means, new_covs

    def update(
        self, mean: np.ndarray, cov: np.ndarray, measurement: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        means, covs = self.multi_update(mean[None, :], cov[None, :, :], measurement[None, :])
        return means[0], covs[0]

    def multi_update(
        self, means: np.ndarray, covs: np.ndarray, measurements: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Fold stacked measurements [cx, cy, a, h] into the stacked states."""
        wp = self.pos_weight
        heights = means[:, 3]
        n = means.shape[0]
        r_std = np.empty((n, NDIM))
        r_std[:, 0] = r_std[:, 1] = r_std[:, 3] = wp * heights
        r_std[:, 2] = 1e-1
        # S = H P H^T + R, which is just the position block of P plus R.
        s = covs[:, :NDIM, :NDIM].copy()
        idx = np.arange(NDIM)
        s[:, idx, idx] += np.square(r_std)
        pht = covs[:, :, :NDIM]
        # K = P H^T S^{-1}; solve on the symmetric S instead of inverting.
        gain = np.linalg.solve(s, pht.transpose(0, 2, 1)).transpose(0, 2, 1)
        innovation = measurements - means[:, :NDIM]
        new_means = means + (gain @ innovation[:, :, None])[:, :, 0]
        new_covs = covs - gain @ s @ gain.transpose(0, 2, 1)
        new_covs = (new_covs + new_covs.transpose(0, 2, 1)) * 0.5
        return new_means, new_covs


def state_to_xywh(mean: np.ndarray) -> np.ndarray:
    """Convert a state mean's (cx, cy, a, h) into a top-left (x, y, w, h) box."""
    cx, cy, a, h = mean[:NDIM]
    w = a * h
    return np.array([cx - w / 2.0, cy - h / 2.0, w, h])


def states_to_xywh(means: np.ndarray) -> np.ndarray:
    """Vectorized state_to_xywh over stacked (N, 8) means."""
    h = means[:, 3]
    w = means[:, 2] * h
    out = np.empty((means.shape[0], NDIM))
    out[:, 0] = means[:, 0] - w * 0.5
    out[:, 1] = means[:, 1] - h * 0.5
    out[:, 2] = w
    out[:, 3] = h
    return out


def xywh_to_measurement(x: float, y: float, w: float, h: float) -> np.ndarray:
    """Convert a top-left box into the (cx, cy, a, h) measurement space."""
    return np.array([x + w / 2.0, y + h / 2.0, w / h, h])
