"""Unscented Kalman filter on the switched plant, observing pressures only."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pamtwin import plant
from pamtwin.statics import (
    DEFAULT_PARAMS,
    ModelParameters,
    PlantState,
    joint_stiffness,
    joint_torque,
    muscle_forces,
)

N_STATE = 4
PRESSURE_SELECTOR = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])


class FilterNumericalError(ArithmeticError):
    pass


@dataclass
class UkfConfig:
    """Filter tuning; diagonal entries, SI units (rad, rad/s, Pa)."""

    P0: np.ndarray = field(default_factory=lambda: np.array([1e-5, 1e-4, 1e6, 1e6]))
    Q: np.ndarray = field(default_factory=lambda: np.array([1e-5, 1e-4, 1e6, 1e6]))
    R: np.ndarray = field(default_factory=lambda: np.array([1e8, 1e8]))
    kappa: float = 0.0

    def __post_init__(self):
        self.P0 = _as_diag(self.P0, N_STATE, "P0")
        self.Q = _as_diag(self.Q, N_STATE, "Q")
        self.R = _as_diag(self.R, 2, "R")
        if np.any(self.P0 < 0) or np.any(self.Q < 0):
            raise ValueError("P0 and Q must be positive semidefinite")
        if np.any(self.R <= 0):
            raise ValueError("R must be positive definite")
        if not N_STATE + self.kappa > 0:
            raise ValueError(f"n + kappa must be positive, got kappa={self.kappa}")


def _as_diag(value, n, name):
    a = np.asarray(value, dtype=float)
    if a.shape == (n, n):
        a = np.diag(a).copy()
    if a.shape != (n,):
        raise ValueError(f"{name} must hold {n} diagonal entries")
    return a


@dataclass
class Estimate:
    mean: np.ndarray
    cov: np.ndarray
    params: ModelParameters = DEFAULT_PARAMS

    @property
    def state(self) -> PlantState:
        return PlantState.from_array(self.mean)

    def derived(self) -> tuple[float, float, float, float]:
        return derive_outputs(self)


def derive_outputs(est: Estimate) -> tuple[float, float, float, float]:
    """(F1_hat, F2_hat, tau_hat, Kp_hat) evaluated at the estimated mean."""
    psi, _, P1, P2 = est.mean
    F1, F2 = muscle_forces(psi, P1, P2, est.params)
    tau = joint_torque(psi, F1, F2, est.params)
    Kp = joint_stiffness(psi, P1, P2, est.params)
    return float(F1), float(F2), float(tau), float(Kp)


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Matrix L with L L^T = cov, via a diagonally scaled symmetric eigendecomposition.

    Scaling by the diagonal first keeps relative accuracy when variances span
    eleven orders of magnitude (rad^2 next to Pa^2). Negative eigenvalues are
    clipped to zero.
    """
    cov = np.asarray(cov, dtype=float)
    d = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    scale = np.where(d > 0, d, 1.0)
    corr = cov / np.outer(scale, scale)
    w, V = np.linalg.eigh(corr)
    if not np.all(np.isfinite(w)):
        raise FilterNumericalError(f"eigendecomposition failed; diag(cov)={np.diag(cov)}")
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return scale[:, None] * root


def sigma_weights(n: int, kappa: float) -> np.ndarray:
    w = np.full(2 * n + 1, 1.0 / (2.0 * (n + kappa)))
    w[0] = kappa / (n + kappa)
    return w


def sigma_points(mean, cov, kappa: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric 2n+1 set; returns points as columns (n, 2n+1) and weights."""
    mean = np.asarray(mean, dtype=float)
    n = mean.size
    L = psd_sqrt((n + kappa) * np.asarray(cov, dtype=float))
    points = np.empty((n, 2 * n + 1))
    points[:, 0] = mean
    points[:, 1 : n + 1] = mean[:, None] + L
    points[:, n + 1 :] = mean[:, None] - L
    return points, sigma_weights(n, kappa)


def _weighted_cov(dev_a, dev_b, weights):
    return (dev_a * weights) @ dev_b.T


def _symmetrize(cov):
    return 0.5 * (cov + cov.T)


def _check_psd(cov, where):
    w = np.linalg.eigvalsh(cov)
    if w[0] < -1e-9 * max(np.trace(cov), 0.0):
        raise FilterNumericalError(f"covariance lost positive semidefiniteness after {where}: min eig {w[0]:.3g}")


Transition = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class UnscentedKalmanFilter:
    """Plain-kappa UKF.

    ``transition(points, u, dt)`` maps a (4, N) batch of states one step ahead;
    by default it is the noise-free RK4 plant step. The observation is the
    linear pressure selector.
    """

    def __init__(self, config: UkfConfig | None = None, x0=None, params: ModelParameters = DEFAULT_PARAMS,
                 options: plant.PlantOptions = plant.DEFAULT_OPTIONS, transition: Transition | None = None,
                 H: np.ndarray = PRESSURE_SELECTOR, check_psd: bool = True):
        self.config = config or UkfConfig()
        self.params = params
        self.options = options
        self.H = np.asarray(H, dtype=float)
        self.check_psd = check_psd
        self._transition = transition or self._plant_transition
        if x0 is None:
            x0 = PlantState()
        if isinstance(x0, PlantState):
            x0 = x0.as_array()
        self.mean = np.array(x0, dtype=float)
        self.cov = np.diag(self.config.P0).astype(float)
        self.weights = sigma_weights(self.mean.size, self.config.kappa)

    def _plant_transition(self, points, u, dt):
        return plant.rk4_step(points, u, dt, self.params, self.options)

    @property
    def estimate(self) -> Estimate:
        return Estimate(self.mean.copy(), self.cov.copy(), self.params)

    def predict(self, u, dt: float) -> Estimate:
        points, w = sigma_points(self.mean, self.cov, self.config.kappa)
        prop = self._transition(points, np.asarray(u, dtype=float), dt)
        mean = prop @ w
        dev = prop - mean[:, None]
        cov = _symmetrize(_weighted_cov(dev, dev, w) + np.diag(self.config.Q))
        if self.check_psd:
            _check_psd(cov, "predict")
        self.mean, self.cov = mean, cov
        return self.estimate

    def update(self, measurement) -> Estimate:
        z = np.asarray(measurement, dtype=float)
        points, w = sigma_points(self.mean, self.cov, self.config.kappa)
        Y = self.H @ points
        y_mean = Y @ w
        dx = points - self.mean[:, None]
        dy = Y - y_mean[:, None]
        S = _weighted_cov(dy, dy, w) + np.diag(self.config.R)
        Pxy = _weighted_cov(dx, dy, w)
        try:
            gain = np.linalg.solve(S, Pxy.T).T
        except np.linalg.LinAlgError as exc:
            raise FilterNumericalError(f"innovation covariance singular: {S}") from exc
        self.mean = self.mean + gain @ (z - y_mean)
        self.cov = _symmetrize(self.cov - gain @ S @ gain.T)
        if self.check_psd:
            _check_psd(self.cov, "update")
        return self.estimate

    def step(self, u, dt: float, measurement) -> Estimate:
        self.predict(u, dt)
        return self.update(measurement)
