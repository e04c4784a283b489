"""Switched continuous-time plant: valve flow, polytropic muscle pressure,
seesaw mechanics with stick-slip friction, and a fixed-step RK4 integrator.

The switching structure has 3 valve modes per valve and 2 friction modes,
giving 18 subsystems. ``state_derivative`` and ``rk4_step`` accept a single
state of shape (4,) or a batch of shape (4, N); the batch form is what the
UKF uses to push all sigma points through the model at once.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from pamtwin.statics import (
    DEFAULT_PARAMS,
    ModelConsistencyError,
    ModelDomainError,
    ModelParameters,
    PlantState,
    joint_torque,
    muscle_forces,
    pam_lengths,
    pam_volume,
    pam_volume_slope,
    static_friction_bound,
)

U_MIN, U_MAX = 0.0, 10.0
U_NEUTRAL = 5.0


class ValveMode(enum.IntEnum):
    CHARGE = 0
    CLOSED = 1
    DISCHARGE = 2


class FrictionMode(enum.IntEnum):
    STICK = 0
    SLIP = 1


@dataclass(frozen=True)
class PlantOptions:
    """Reconstruction knobs of the switched model."""

    deadband: float = 0.05  # V, half-width of the valve's closed band around 5 V
    v_eps: float = 1e-4  # rad/s, stick detection threshold
    closed_index: str = "k1"  # polytropic index used while the valve is closed
    friction_dp_floor: float = 1e3  # Pa, keeps T_p finite when a muscle is exhausted
    hold_pressures: bool = False  # freeze P1, P2 (pressure-clamp experiments)

    def __post_init__(self):
        if not 0 <= self.deadband < U_NEUTRAL:
            raise ModelDomainError(f"deadband {self.deadband} outside [0, 5)")
        if self.closed_index not in ("k1", "k2"):
            raise ModelDomainError(f"closed_index must be 'k1' or 'k2', got {self.closed_index!r}")


DEFAULT_OPTIONS = PlantOptions()


@dataclass
class ControlInput:
    u1: float = U_NEUTRAL
    u2: float = U_NEUTRAL

    def clamped(self) -> "ControlInput":
        return ControlInput(float(np.clip(self.u1, U_MIN, U_MAX)), float(np.clip(self.u2, U_MIN, U_MAX)))

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)


@dataclass
class NoiseSpec:
    """Diagonal process (per controller tick) and measurement covariances."""

    Q_sim: np.ndarray = field(default_factory=lambda: np.zeros(4))
    R_sim: np.ndarray = field(default_factory=lambda: np.zeros(2))
    seed: int = 0

    def __post_init__(self):
        self.Q_sim = _diag_of(self.Q_sim, 4, "Q_sim")
        self.R_sim = _diag_of(self.R_sim, 2, "R_sim")

    @classmethod
    def nominal(cls, seed: int = 0) -> "NoiseSpec":
        # measurement noise at the filter's R scale, small process noise
        return cls(Q_sim=[0.0, 0.0, 1e4, 1e4], R_sim=[1e8, 1e8], seed=seed)


def _diag_of(value, n: int, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.shape == (n, n):
        if np.any(a - np.diag(np.diag(a))):
            raise ValueError(f"{name} must be diagonal")
        a = np.diag(a).copy()
    if a.shape != (n,):
        raise ValueError(f"{name} must have {n} diagonal entries, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError(f"{name} must be positive semidefinite")
    return a


def valve_mode(u: float, deadband: float = DEFAULT_OPTIONS.deadband) -> ValveMode:
    if u > U_NEUTRAL + deadband:
        return ValveMode.CHARGE
    if u < U_NEUTRAL - deadband:
        return ValveMode.DISCHARGE
    return ValveMode.CLOSED


def effective_area(u: float, side: int, params: ModelParameters = DEFAULT_PARAMS,
                   deadband: float = DEFAULT_OPTIONS.deadband) -> float:
    """Orifice opening, proportional to the spool offset outside the dead band."""
    u = float(np.clip(u, U_MIN, U_MAX))
    span = U_NEUTRAL - deadband
    mode = valve_mode(u, deadband)
    if mode is ValveMode.CHARGE:
        return params.charge_area(side) * (u - U_NEUTRAL - deadband) / span
    if mode is ValveMode.DISCHARGE:
        return params.discharge_area(side) * (U_NEUTRAL - deadband - u) / span
    return 0.0


def critical_pressure_ratio(k: float) -> float:
    return (2.0 / (k + 1.0)) ** (k / (k - 1.0))


def orifice_mass_flow(P_up, P_down, A_eff, params: ModelParameters = DEFAULT_PARAMS):
    """Isentropic nozzle mass flow (kg/s) from ``P_up`` to ``P_down``."""
    P_up = np.asarray(P_up, dtype=float)
    P_down = np.asarray(P_down, dtype=float)
    if np.any(~(P_down > 0)) or np.any(P_up < P_down):
        raise ModelDomainError(f"orifice needs P_up >= P_down > 0, got {P_up!r}, {P_down!r}")
    k, RT = params.k, params.R * params.T
    ratio = P_down / P_up
    choked = A_eff * P_up * np.sqrt(k / RT) * (2.0 / (k + 1.0)) ** ((k + 1.0) / (2.0 * (k - 1.0)))
    subsonic_term = np.maximum(ratio ** (2.0 / k) - ratio ** ((k + 1.0) / k), 0.0)
    subsonic = A_eff * P_up * np.sqrt(2.0 * k / (RT * (k - 1.0)) * subsonic_term)
    return np.where(ratio <= critical_pressure_ratio(k), choked, subsonic)


def polytropic_index(mode: ValveMode, params: ModelParameters = DEFAULT_PARAMS,
                     options: PlantOptions = DEFAULT_OPTIONS) -> float:
    if mode is ValveMode.CHARGE:
        return params.k1
    if mode is ValveMode.DISCHARGE:
        return params.k2
    return params.k1 if options.closed_index == "k1" else params.k2


def pressure_derivative(P, l, l_dot, mdot, mode: ValveMode, params: ModelParameters = DEFAULT_PARAMS,
                        options: PlantOptions = DEFAULT_OPTIONS):
    """dP/dt of a muscle: mass inflow raises, volume growth lowers pressure."""
    n = polytropic_index(mode, params, options)
    V = pam_volume(l, params)
    V_dot = pam_volume_slope(l, params) * l_dot
    return (n * params.R * params.T * mdot - n * P * V_dot) / V


def _friction_bound(psi, P1, P2, params, options):
    floor = params.P_out + options.friction_dp_floor
    return static_friction_bound(psi, np.maximum(P1, floor), np.maximum(P2, floor), params)


def friction_torque(state: PlantState, T_ext: float, params: ModelParameters = DEFAULT_PARAMS,
                    options: PlantOptions = DEFAULT_OPTIONS) -> tuple[float, FrictionMode]:
    """Karnopp stick-slip friction torque for torque ``T_ext`` = tau - k_s psi."""
    bound = float(static_friction_bound(state.psi, state.P1, state.P2, params))
    T_f, stick = _karnopp(state.psi_dot, T_ext, bound, params.c_s, options.v_eps)
    return float(T_f), FrictionMode.STICK if stick else FrictionMode.SLIP


def _karnopp(psi_dot, T_ext, bound, c_s, v_eps):
    slow = np.abs(psi_dot) < v_eps
    stick = slow & (np.abs(T_ext) <= bound)
    # breakaway from rest: kinetic friction opposes the driving torque
    direction = np.where(slow, np.sign(T_ext), np.sign(psi_dot))
    T_f = np.where(stick, T_ext, direction * bound + c_s * psi_dot)
    return T_f, stick


@dataclass(frozen=True)
class _Valves:
    modes: tuple[ValveMode, ValveMode]
    areas: tuple[float, float]
    n: tuple[float, float]
    flow: tuple[float, float, float, float, float]


def _valve_setup(u, params, options) -> _Valves:
    u1, u2 = (min(max(float(v), U_MIN), U_MAX) for v in u)
    modes = (valve_mode(u1, options.deadband), valve_mode(u2, options.deadband))
    return _Valves(
        modes=modes,
        areas=(effective_area(u1, 1, params, options.deadband), effective_area(u2, 2, params, options.deadband)),
        n=(polytropic_index(modes[0], params, options), polytropic_index(modes[1], params, options)),
        flow=_flow_constants(params.k, params.R * params.T),
    )


@functools.lru_cache(maxsize=32)
def _flow_constants(k: float, RT: float):
    choked = np.sqrt(k / RT) * (2.0 / (k + 1.0)) ** ((k + 1.0) / (2.0 * (k - 1.0)))
    subsonic = np.sqrt(2.0 * k / (RT * (k - 1.0)))
    return critical_pressure_ratio(k), choked, subsonic, 2.0 / k, (k + 1.0) / k


def _mdot(P, mode: ValveMode, area: float, params, constants):
    # same law as orifice_mass_flow, inlined for the integrator hot path
    if mode is ValveMode.CLOSED or area == 0.0:
        return 0.0 * P
    crit, c_choked, c_sub, e1, e2 = constants
    if mode is ValveMode.CHARGE:
        up = params.P_tank
        ratio = np.minimum(P, up) / up
        sign = 1.0
    else:
        up = np.maximum(P, params.P_out)
        ratio = params.P_out / up
        sign = -1.0
    sub = c_sub * np.sqrt(np.maximum(ratio**e1 - ratio**e2, 0.0))
    return sign * area * up * np.where(ratio <= crit, c_choked, sub)


def mode_index(v1: ValveMode, v2: ValveMode, friction) -> np.ndarray:
    """Subsystem index sigma in 1..18."""
    return 1 + 6 * int(v1) + 2 * int(v2) + np.asarray(friction, dtype=int)


def _rhs(x, valves: _Valves, params: ModelParameters, options: PlantOptions):
    psi, psi_dot, P1, P2 = x
    if (np.abs(psi) >= np.pi / 2).any():
        raise ModelDomainError(f"psi={np.max(np.abs(psi))!r} rad outside (-pi/2, pi/2)")
    r = params.r
    s, c = np.sin(psi), np.cos(psi)
    l1 = params.L0 - r * s
    l2 = params.L0 + r * s
    F1 = (params.p_v11 * l1 + params.p_v21) * P1 + (params.p_w11 * l1 + params.p_w21)
    F2 = (params.p_v12 * l2 + params.p_v22) * P2 + (params.p_w12 * l2 + params.p_w22)
    T_ext = r * c * (F1 - F2) - params.k_s * psi
    floor = options.friction_dp_floor
    dp1 = np.maximum(P1 - params.P_out, floor)
    dp2 = np.maximum(P2 - params.P_out, floor)
    bound = params.r_p * params.mu_s * np.abs(F1 + F2 - params.M * params.g) + params.Tp_coeff * (
        1.0 / (dp1 * dp1) + 1.0 / (dp2 * dp2))
    T_f, stick = _karnopp(psi_dot, T_ext, bound, params.c_s, options.v_eps)
    psi_ddot = np.where(stick, 0.0, (T_ext - T_f) / params.J)
    psi_rate = np.where(stick, 0.0, psi_dot)

    if options.hold_pressures:
        return np.stack([psi_rate, psi_ddot, 0.0 * P1, 0.0 * P2]), stick
    V1 = (params.D1 * l1 + params.D2) * l1 + params.D3
    V2 = (params.D1 * l2 + params.D2) * l2 + params.D3
    if (V1 <= 0).any() or (V2 <= 0).any():
        raise ModelConsistencyError(f"nonpositive PAM volume ({np.min(V1):.4g}, {np.min(V2):.4g}) m^3")
    l2_dot = r * c * psi_rate
    RT = params.R * params.T
    n1, n2 = valves.n
    m1 = _mdot(P1, valves.modes[0], valves.areas[0], params, valves.flow)
    m2 = _mdot(P2, valves.modes[1], valves.areas[1], params, valves.flow)
    # l1_dot = -l2_dot
    dP1 = n1 * (RT * m1 + P1 * (2.0 * params.D1 * l1 + params.D2) * l2_dot) / V1
    dP2 = n2 * (RT * m2 - P2 * (2.0 * params.D1 * l2 + params.D2) * l2_dot) / V2
    return np.stack([psi_rate, psi_ddot, dP1, dP2]), stick


def _rhs_scalar(x, valves: _Valves, params: ModelParameters, options: PlantOptions):
    """Pure-float twin of :func:`_rhs` for a single state (about 5x faster)."""
    psi, psi_dot, P1, P2 = (float(v) for v in x)
    if abs(psi) >= math.pi / 2:
        raise ModelDomainError(f"psi={psi!r} rad outside (-pi/2, pi/2)")
    p = params
    s, c = math.sin(psi), math.cos(psi)
    l1 = p.L0 - p.r * s
    l2 = p.L0 + p.r * s
    F1 = (p.p_v11 * l1 + p.p_v21) * P1 + (p.p_w11 * l1 + p.p_w21)
    F2 = (p.p_v12 * l2 + p.p_v22) * P2 + (p.p_w12 * l2 + p.p_w22)
    T_ext = p.r * c * (F1 - F2) - p.k_s * psi
    dp1 = max(P1 - p.P_out, options.friction_dp_floor)
    dp2 = max(P2 - p.P_out, options.friction_dp_floor)
    bound = p.r_p * p.mu_s * abs(F1 + F2 - p.M * p.g) + p.Tp_coeff * (1.0 / (dp1 * dp1) + 1.0 / (dp2 * dp2))
    if abs(psi_dot) < options.v_eps:
        stick = abs(T_ext) <= bound
        T_f = T_ext if stick else math.copysign(bound, T_ext) + p.c_s * psi_dot
    else:
        stick = False
        T_f = math.copysign(bound, psi_dot) + p.c_s * psi_dot
    psi_rate = 0.0 if stick else psi_dot
    psi_ddot = 0.0 if stick else (T_ext - T_f) / p.J
    if options.hold_pressures:
        return np.array([psi_rate, psi_ddot, 0.0, 0.0]), stick
    V1 = (p.D1 * l1 + p.D2) * l1 + p.D3
    V2 = (p.D1 * l2 + p.D2) * l2 + p.D3
    if V1 <= 0 or V2 <= 0:
        raise ModelConsistencyError(f"nonpositive PAM volume ({V1:.4g}, {V2:.4g}) m^3")
    l2_dot = p.r * c * psi_rate
    RT = p.R * p.T
    m1 = _mdot_scalar(P1, valves.modes[0], valves.areas[0], p, valves.flow)
    m2 = _mdot_scalar(P2, valves.modes[1], valves.areas[1], p, valves.flow)
    dP1 = valves.n[0] * (RT * m1 + P1 * (2.0 * p.D1 * l1 + p.D2) * l2_dot) / V1
    dP2 = valves.n[1] * (RT * m2 - P2 * (2.0 * p.D1 * l2 + p.D2) * l2_dot) / V2
    return np.array([psi_rate, psi_ddot, dP1, dP2]), stick


def _mdot_scalar(P, mode, area, params, constants):
    if mode is ValveMode.CLOSED or area == 0.0:
        return 0.0
    crit, c_choked, c_sub, e1, e2 = constants
    if mode is ValveMode.CHARGE:
        up = params.P_tank
        ratio = min(P, up) / up
        sign = 1.0
    else:
        up = max(P, params.P_out)
        ratio = params.P_out / up
        sign = -1.0
    coeff = c_choked if ratio <= crit else c_sub * math.sqrt(max(ratio**e1 - ratio**e2, 0.0))
    return sign * area * up * coeff


def _with_mode(exc: Exception, valves: _Valves) -> Exception:
    sigma = mode_index(valves.modes[0], valves.modes[1], FrictionMode.SLIP)
    return type(exc)(f"{exc} [valve modes {valves.modes[0].name}/{valves.modes[1].name}, sigma={int(sigma) - 1}|{int(sigma)}]")


def state_derivative(x, u, params: ModelParameters = DEFAULT_PARAMS, options: PlantOptions = DEFAULT_OPTIONS,
                     return_mode: bool = False):
    """Right-hand side f_sigma(x, u) of the switched plant.

    ``x`` is (4,) or (4, N); ``u`` is (u1, u2) in volts, clamped to [0, 10].
    With ``return_mode`` the subsystem index (1..18) is returned as well.
    """
    x = np.asarray(x, dtype=float)
    valves = _valve_setup(u, params, options)
    try:
        xdot, stick = _rhs(x, valves, params, options)
    except (ModelDomainError, ModelConsistencyError) as exc:
        raise _with_mode(exc, valves) from exc
    if return_mode:
        return xdot, mode_index(valves.modes[0], valves.modes[1], ~stick)
    return xdot


def _stick_projection(x_old, x_new, params, options):
    """Capture sticking when the velocity crosses zero inside a step."""
    psi, psi_dot, P1, P2 = x_new
    crossed = (np.sign(x_old[1]) * np.sign(psi_dot) < 0) | (np.abs(psi_dot) < options.v_eps)
    if not np.any(crossed):
        return x_new
    F1, F2 = muscle_forces(psi, P1, P2, params)
    T_ext = joint_torque(psi, F1, F2, params) - params.k_s * psi
    bound = _friction_bound(psi, P1, P2, params, options)
    hold = crossed & (np.abs(T_ext) <= bound)
    x_new[1] = np.where(hold, 0.0, psi_dot)
    return x_new


def rk4_step(x, u, dt: float, params: ModelParameters = DEFAULT_PARAMS, options: PlantOptions = DEFAULT_OPTIONS,
             project: bool = True):
    """One classical RK4 step with ``u`` held over the step.

    The mode is re-evaluated at every stage. Afterwards a zero-velocity
    crossing that ends below breakaway is snapped to stick, and pressures
    are clamped to [P_out, P_tank]. ``project=False`` skips both (pure RK4).
    """
    return integrate(x, u, dt, 1, params, options, project)


def integrate(x, u, dt: float, n_steps: int, params: ModelParameters = DEFAULT_PARAMS,
              options: PlantOptions = DEFAULT_OPTIONS, project: bool = True):
    """``n_steps`` RK4 steps of size ``dt`` under one held input; same rules as :func:`rk4_step`."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    valves = _valve_setup(u, params, options)
    rhs = _rhs_scalar if x.ndim == 1 else _rhs
    half, sixth = 0.5 * dt, dt / 6.0
    for _ in range(n_steps):
        try:
            k1, _ = rhs(x, valves, params, options)
            k2, _ = rhs(x + half * k1, valves, params, options)
            k3, _ = rhs(x + half * k2, valves, params, options)
            k4, _ = rhs(x + dt * k3, valves, params, options)
        except (ModelDomainError, ModelConsistencyError) as exc:
            raise _with_mode(exc, valves) from exc
        x_new = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if project:
            x_new[2:] = np.clip(x_new[2:], params.P_out, params.P_tank)
            x_new = _stick_projection(x, x_new, params, options)
        x = x_new
    return x


def measure(state, noise: NoiseSpec, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Pressure measurements (P1, P2) with additive Gaussian noise."""
    x = state.as_array() if isinstance(state, PlantState) else np.asarray(state, dtype=float)
    p = x[2:4].copy()
    if np.any(noise.R_sim > 0):
        if rng is None:
            raise ValueError("a random generator is required for noisy measurements")
        p = p + np.sqrt(noise.R_sim) * rng.standard_normal(2)
    return float(p[0]), float(p[1])


class Plant:
    """One simulated testbed: owns its state and random streams."""

    def __init__(self, state: PlantState | None = None, params: ModelParameters = DEFAULT_PARAMS,
                 noise: NoiseSpec | None = None, options: PlantOptions = DEFAULT_OPTIONS):
        self.params = params
        self.options = options
        self.noise = noise if noise is not None else NoiseSpec()
        self.x = (state or PlantState()).as_array()
        proc_seq, meas_seq = np.random.SeedSequence(self.noise.seed).spawn(2)
        self._proc_rng = np.random.default_rng(proc_seq)
        self._meas_rng = np.random.default_rng(meas_seq)

    @property
    def state(self) -> PlantState:
        return PlantState.from_array(self.x)

    def mode(self, u) -> int:
        _, sigma = state_derivative(self.x, u, self.params, self.options, return_mode=True)
        return int(sigma)

    def advance(self, u, period: float, substep: float) -> np.ndarray:
        """Integrate over one controller period with ``u`` held, then add process noise."""
        n = int(round(period / substep))
        if n < 1 or abs(n * substep - period) > 1e-12 * max(period, 1.0):
            raise ValueError(f"controller period {period} is not an integer multiple of substep {substep}")
        u = np.clip(np.asarray(u, dtype=float), U_MIN, U_MAX)
        self.x = integrate(self.x, u, substep, n, self.params, self.options)
        if np.any(self.noise.Q_sim > 0):
            self.x = self.x + np.sqrt(self.noise.Q_sim) * self._proc_rng.standard_normal(4)
            self.x[2:] = np.clip(self.x[2:], self.params.P_out, self.params.P_tank)
        return self.x

    def measure(self) -> tuple[float, float]:
        return measure(self.x, self.noise, self._meas_rng)
