"""Model parameters and the algebraic relations of the antagonistic PAM joint.

All functions accept scalars or numpy arrays and broadcast. Angles are in
radians and pressures in absolute Pa throughout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

PSI_LIMIT = np.deg2rad(25.0)
PSI_MARGIN = np.deg2rad(5.0)


class ModelDomainError(ValueError):
    """An argument is outside the region where the model is defined."""


class ModelConsistencyError(ArithmeticError):
    """The model produced a physically meaningless intermediate (e.g. V <= 0)."""


class FrictionSingularityError(ModelDomainError):
    """A muscle pressure is at or below atmospheric, where T_p diverges."""

    def __init__(self, side: int, pressure):
        self.side = side
        super().__init__(f"P{side}={np.min(pressure):.6g} Pa must exceed P_out for the PAM friction term")


@dataclass(frozen=True)
class ModelParameters:
    """Identified constants of the testbed (SI units)."""

    r_p: float = 0.006
    r: float = 0.0365
    L0: float = 0.165
    M: float = 0.256
    g: float = 9.80
    P_tank: float = 0.7100e6
    P_out: float = 0.1013e6
    k: float = 1.40
    R: float = 287.0
    T: float = 293.0
    J: float = 4.263e-4
    k_s: float = 4.117e-4
    c_s: float = 2.256e-3
    D1: float = -2.440e-2
    D2: float = 6.824e-3
    D3: float = -4.254e-4
    p_v11: float = 7.045e-3
    p_v21: float = -1.017e-3
    p_w11: float = -5.568e2
    p_w21: float = 72.86
    p_v12: float = 6.423e-3
    p_v22: float = -9.184e-4
    p_w12: float = -197.8
    p_w22: float = -15.75
    A_11: float = 5.184e-8
    A_12: float = 7.776e-8
    # discharge areas are not identified; None means "same as charge area"
    A_21: float | None = None
    A_22: float | None = None
    k1: float = 1.100
    k2: float = 0.4545
    Tp_coeff: float = 4e8
    mu_s: float = 0.2

    def __post_init__(self):
        positive = ("r", "r_p", "L0", "M", "J", "k_s", "c_s", "A_11", "A_12", "k1")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ModelDomainError(f"{name}={getattr(self, name)!r} must be positive")
        for name in ("A_21", "A_22"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ModelDomainError(f"{name}={value!r} must be positive")
        if not self.P_tank > self.P_out > 0:
            raise ModelDomainError(f"need P_tank > P_out > 0, got {self.P_tank}, {self.P_out}")
        if not self.k > 1:
            raise ModelDomainError(f"specific heat ratio k={self.k} must exceed 1")

    def force_coefficients(self, side: int) -> tuple[float, float, float, float]:
        """(p_v1i, p_v2i, p_w1i, p_w2i) for muscle ``side``."""
        if side == 1:
            return self.p_v11, self.p_v21, self.p_w11, self.p_w21
        if side == 2:
            return self.p_v12, self.p_v22, self.p_w12, self.p_w22
        raise ModelDomainError(f"muscle side must be 1 or 2, got {side!r}")

    def charge_area(self, side: int) -> float:
        return self.A_11 if side == 1 else self.A_12

    def discharge_area(self, side: int) -> float:
        own = self.A_21 if side == 1 else self.A_22
        return self.charge_area(side) if own is None else own

    def replace(self, **changes) -> "ModelParameters":
        return dataclasses.replace(self, **changes)

    def perturbed(self, fraction: float, names=("p_w21", "p_w22", "A_11", "A_12", "k_s", "c_s")) -> "ModelParameters":
        """Copy with the listed parameters scaled by (1 + fraction); model-mismatch studies."""
        return self.replace(**{n: getattr(self, n) * (1.0 + fraction) for n in names})


@dataclass
class PlantState:
    """x = [psi, psi_dot, P1, P2] in (rad, rad/s, Pa, Pa)."""

    psi: float = 0.0
    psi_dot: float = 0.0
    P1: float = 400e3
    P2: float = 400e3

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.psi_dot, self.P1, self.P2], dtype=float)

    @classmethod
    def from_array(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))

    def check(self, params: ModelParameters, rtol: float = 1e-9) -> None:
        """Raise if the state violates the plant invariants."""
        slack = rtol * params.P_tank
        for side, p in ((1, self.P1), (2, self.P2)):
            if not params.P_out - slack <= p <= params.P_tank + slack:
                raise ModelDomainError(f"P{side}={p:.6g} Pa outside [P_out, P_tank]")
        if abs(self.psi) > PSI_LIMIT + PSI_MARGIN:
            raise ModelDomainError(f"psi={np.rad2deg(self.psi):.4g} deg beyond the +/-30 deg hard limit")


@dataclass(frozen=True)
class OperatingSets:
    """Allowable valve voltages (V) and allowable muscle pressures (Pa)."""

    u_bounds: tuple[float, float] = (0.0, 10.0)
    p_allow: tuple[float, float] = (200e3, 750e3)

    def __post_init__(self):
        if self.u_bounds != (0.0, 10.0):
            raise ModelDomainError(f"input set must be [0, 10]^2, got {self.u_bounds}")
        lo, hi = self.p_allow
        if not 1e4 <= lo < hi:
            raise ModelDomainError(f"pressure set must be a nonempty interval above ~atmospheric, got {self.p_allow}")


DEFAULT_PARAMS = ModelParameters()
DEFAULT_SETS = OperatingSets()


def pam_lengths(psi, params: ModelParameters = DEFAULT_PARAMS):
    """Lengths (l1, l2) of the two muscles at joint angle ``psi``."""
    psi = np.asarray(psi, dtype=float)
    if np.any(~(np.abs(psi) < np.pi / 2)):
        bad = psi[~(np.abs(psi) < np.pi / 2)] if psi.ndim else psi
        raise ModelDomainError(f"psi={np.ravel(bad)[0]!r} rad outside (-pi/2, pi/2)")
    dl = params.r * np.sin(psi)
    return params.L0 - dl, params.L0 + dl


def contraction_force(l, P, side: int, params: ModelParameters = DEFAULT_PARAMS):
    """Affine-in-pressure contraction force F_i = v_i(l) P + w_i(l).

    Not clamped at zero: low pressures can give a negative force, and the
    reference generator depends on this map being exactly invertible.
    """
    l = np.asarray(l, dtype=float)
    if np.any(~(l > 0)):
        raise ModelDomainError(f"muscle length must be positive, got {np.min(l)!r}")
    pv1, pv2, pw1, pw2 = params.force_coefficients(side)
    return (pv1 * l + pv2) * P + (pw1 * l + pw2)


def alpha(P, side: int, params: ModelParameters = DEFAULT_PARAMS):
    """Length-independent part of the force, p_v2i P + p_w2i."""
    _, pv2, _, pw2 = params.force_coefficients(side)
    return pv2 * np.asarray(P, dtype=float) + pw2


def joint_torque(psi, F1, F2, params: ModelParameters = DEFAULT_PARAMS):
    return params.r * np.cos(psi) * (np.asarray(F1) - np.asarray(F2))


def muscle_forces(psi, P1, P2, params: ModelParameters = DEFAULT_PARAMS):
    l1, l2 = pam_lengths(psi, params)
    return contraction_force(l1, P1, 1, params), contraction_force(l2, P2, 2, params)


def joint_stiffness(psi, P1, P2, params: ModelParameters = DEFAULT_PARAMS):
    """K_P = -d(tau)/d(psi) with the pressures held fixed."""
    l1, l2 = pam_lengths(psi, params)
    F1 = contraction_force(l1, P1, 1, params)
    F2 = contraction_force(l2, P2, 2, params)
    a1 = alpha(P1, 1, params)
    a2 = alpha(P2, 2, params)
    rc = params.r * np.cos(psi)
    return params.r * np.sin(psi) * (F1 - F2) + rc * rc * ((F1 - a1) / l1 + (F2 - a2) / l2)


def joint_stiffness_slopes(psi, P1, P2, params: ModelParameters = DEFAULT_PARAMS):
    """Same quantity as :func:`joint_stiffness`, written with dF_i/dl_i expanded."""
    F1, F2 = muscle_forces(psi, P1, P2, params)
    rc = params.r * np.cos(psi)
    slopes = params.p_v11 * P1 + params.p_w11 + params.p_v12 * P2 + params.p_w12
    return params.r * np.sin(psi) * (F1 - F2) + rc * rc * slopes


def static_friction_bound(psi, P1, P2, params: ModelParameters = DEFAULT_PARAMS):
    """Breakaway torque T_s + T_p of shaft and muscle Coulomb friction."""
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    for side, p in ((1, P1), (2, P2)):
        if np.any(~(p > params.P_out)):
            raise FrictionSingularityError(side, p)
    F1, F2 = muscle_forces(psi, P1, P2, params)
    t_shaft = params.r_p * params.mu_s * np.abs(F1 + F2 - params.M * params.g)
    t_pam = params.Tp_coeff * (1.0 / (P1 - params.P_out) ** 2 + 1.0 / (P2 - params.P_out) ** 2)
    return t_shaft + t_pam


def pam_volume(l, params: ModelParameters = DEFAULT_PARAMS):
    """Muscle volume V(l) = D1 l^2 + D2 l + D3."""
    l = np.asarray(l, dtype=float)
    v = (params.D1 * l + params.D2) * l + params.D3
    if np.any(~(v > 0)):
        raise ModelConsistencyError(f"nonpositive PAM volume {np.min(v):.4g} m^3 at l={np.ravel(l)[np.argmin(np.ravel(v))]:.6g} m")
    return v


def pam_volume_slope(l, params: ModelParameters = DEFAULT_PARAMS):
    return 2.0 * params.D1 * np.asarray(l, dtype=float) + params.D2
