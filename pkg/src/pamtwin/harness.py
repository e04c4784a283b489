"""Closed- and open-loop scenario runner, trace records and metrics."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from pamtwin import plant
from pamtwin.controller import AngleStiffnessController, ControllerConfig, ReferenceCommand
from pamtwin.estimator import Estimate, UkfConfig, UnscentedKalmanFilter, derive_outputs
from pamtwin.refset import AdmissibleSet, contains, default_set
from pamtwin.statics import DEFAULT_PARAMS, ModelParameters, PlantState, joint_stiffness, muscle_forces


class ScenarioError(RuntimeError):
    """A module error during a run, tagged with the tick and a state snapshot."""

    def __init__(self, tick: int, t: float, state: np.ndarray, cause: Exception):
        self.tick = tick
        self.t = t
        self.state = state
        self.cause = cause
        super().__init__(f"tick {tick} (t={t:.3f} s): {type(cause).__name__}: {cause}; "
                         f"state psi={state[0]!r} psi_dot={state[1]!r} P1={state[2]!r} P2={state[3]!r}")


@dataclass
class AngleSignal:
    """Angle reference in degrees: offset + amplitude sin(2 pi t / period + phase), plus steps."""

    amplitude_deg: float = 0.0
    period: float = 10.0
    phase: float = 0.0
    offset_deg: float = 0.0
    step_times: Sequence[float] = ()
    step_values_deg: Sequence[float] = ()

    def __call__(self, t: float) -> float:
        value = self.offset_deg + self.amplitude_deg * math.sin(2.0 * math.pi * t / self.period + self.phase)
        for ts, v in zip(self.step_times, self.step_values_deg):
            if t >= ts:
                value = v + self.amplitude_deg * math.sin(2.0 * math.pi * t / self.period + self.phase)
        return math.radians(value)


@dataclass
class StepSignal:
    """Piecewise-constant signal: ``values[0]`` before ``times[0]``, ``values[i+1]`` after ``times[i]``."""

    values: Sequence[float] = (7.0,)
    times: Sequence[float] = ()

    def __post_init__(self):
        if len(self.values) != len(self.times) + 1:
            raise ValueError("need exactly one more value than switching time")
        if list(self.times) != sorted(self.times):
            raise ValueError("switching times must be increasing")

    def __call__(self, t: float) -> float:
        i = int(np.searchsorted(np.asarray(self.times, dtype=float), t, side="right"))
        return float(self.values[i])


@dataclass
class ScenarioConfig:
    duration: float = 30.0
    substep: float = 1e-3
    period: float = 1e-3
    angle: AngleSignal = field(default_factory=AngleSignal)
    stiffness: StepSignal = field(default_factory=StepSignal)
    noise: plant.NoiseSpec = field(default_factory=plant.NoiseSpec)
    initial: PlantState = field(default_factory=PlantState)
    estimator: bool = True
    seed: int = 0
    params: ModelParameters = DEFAULT_PARAMS
    plant_options: plant.PlantOptions = plant.DEFAULT_OPTIONS
    ukf: UkfConfig = field(default_factory=UkfConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    model_mismatch: float = 0.0  # fractional perturbation of the filter's model

    def __post_init__(self):
        n = round(self.period / self.substep)
        if n < 1 or abs(n * self.substep - self.period) > 1e-9 * self.period:
            raise ValueError(f"controller period {self.period} must be an integer multiple of substep {self.substep}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.period))


PRESETS = {
    "a15": dict(amplitude_deg=15.0, Kp=(7.2, 6.5)),
    "a10": dict(amplitude_deg=10.0, Kp=(8.0, 5.5)),
    "a5": dict(amplitude_deg=5.0, Kp=(9.0, 4.0)),
}


def preset(name: str, seed: int = 0, duration: float = 30.0, step_time: float = 15.0, **overrides) -> ScenarioConfig:
    """Sinusoidal angle tracking (10 s period) with one stiffness step."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    cfg = ScenarioConfig(
        duration=duration,
        angle=AngleSignal(amplitude_deg=p["amplitude_deg"], period=10.0),
        stiffness=StepSignal(values=p["Kp"], times=(step_time,)),
        noise=plant.NoiseSpec.nominal(seed),
        seed=seed,
    )
    return dataclasses.replace(cfg, **overrides)


TRACE_COLUMNS = (
    "t", "psi_ref", "psi_true", "psi_hat", "Kp_ref", "Kp_true", "Kp_hat",
    "P1_true", "P2_true", "P1_meas", "P2_meas",
    "F1_true", "F2_true", "F1_ref", "F2_ref", "F1_hat", "F2_hat",
    "tau_c", "u1", "u2", "sigma", "in_set",
)


@dataclass
class TraceRecord:
    """One controller tick; angles in deg, pressures in kPa."""

    t: float
    psi_ref: float
    psi_true: float
    psi_hat: float
    Kp_ref: float
    Kp_true: float
    Kp_hat: float
    P1_true: float
    P2_true: float
    P1_meas: float
    P2_meas: float
    F1_true: float
    F2_true: float
    F1_ref: float
    F2_ref: float
    F1_hat: float
    F2_hat: float
    tau_c: float
    u1: float
    u2: float
    sigma: int
    in_set: bool


def _truth_record_parts(x, params):
    psi, _, P1, P2 = x
    F1, F2 = muscle_forces(psi, P1, P2, params)
    return float(F1), float(F2), float(joint_stiffness(psi, P1, P2, params))


def _mark_in_set(trace: list[TraceRecord], aset: AdmissibleSet | None):
    if aset is None or not trace:
        return
    psi = np.radians([r.psi_true for r in trace])
    Kp = np.array([r.Kp_true for r in trace])
    inside = np.zeros(len(trace), dtype=bool)
    for s in range(0, len(trace), 4096):
        inside[s:s + 4096] = contains(aset, psi[s:s + 4096], Kp[s:s + 4096])
    for r, flag in zip(trace, inside):
        r.in_set = bool(flag)


class ClosedLoop:
    """Measure -> UKF -> controller -> hold u over the plant substeps, one tick at a time.

    The whole loop state lives on this object, so ``copy.deepcopy`` forks a run
    (used to compare a trajectory with and without a reference change).
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        params = cfg.params
        noise = dataclasses.replace(cfg.noise, seed=cfg.seed)
        self.plant = plant.Plant(cfg.initial, params, noise, cfg.plant_options)
        model = params.perturbed(cfg.model_mismatch) if cfg.model_mismatch else params
        self.ukf = UnscentedKalmanFilter(cfg.ukf, cfg.initial, model, cfg.plant_options) if cfg.estimator else None
        self.ctrl = AngleStiffnessController(cfg.controller, model if cfg.estimator else params)
        self.u = np.array([plant.U_NEUTRAL, plant.U_NEUTRAL])
        self.k = 0
        self.trace: list[TraceRecord] = []

    @property
    def done(self) -> bool:
        return self.k >= self.cfg.n_ticks

    def tick(self) -> TraceRecord:
        cfg, pl, ukf, k = self.cfg, self.plant, self.ukf, self.k
        params = cfg.params
        t = k * cfg.period
        try:
            meas = pl.measure()
            if ukf is not None:
                if k > 0:
                    ukf.predict(self.u, cfg.period)
                est = ukf.update(meas)
            else:
                est = Estimate(pl.x.copy(), np.zeros((4, 4)), params)
            cmd = ReferenceCommand(cfg.angle(t), cfg.stiffness(t))
            out = self.ctrl.step(cmd, est, meas)
            self.u = np.array([out.u1, out.u2])
            sigma = pl.mode(self.u)
            x = pl.x.copy()
            pl.advance(self.u, cfg.period, cfg.substep)
            pl.state.check(params)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise ScenarioError(k, t, pl.x.copy(), exc) from exc
        F1, F2, Kp_true = _truth_record_parts(x, params)
        _, _, _, Kp_hat = derive_outputs(est)
        rec = TraceRecord(
            t=t, psi_ref=math.degrees(cmd.psi_ref), psi_true=math.degrees(x[0]), psi_hat=math.degrees(est.mean[0]),
            Kp_ref=cmd.Kp_ref, Kp_true=Kp_true, Kp_hat=Kp_hat,
            P1_true=x[2] / 1e3, P2_true=x[3] / 1e3, P1_meas=meas[0] / 1e3, P2_meas=meas[1] / 1e3,
            F1_true=F1, F2_true=F2, F1_ref=out.F1_ref, F2_ref=out.F2_ref, F1_hat=out.F1_hat, F2_hat=out.F2_hat,
            tau_c=out.tau_c, u1=out.u1, u2=out.u2, sigma=sigma, in_set=False,
        )
        self.trace.append(rec)
        self.k += 1
        return rec

    def run_until(self, t_end: float) -> list[TraceRecord]:
        """Advance while the tick time is below ``t_end`` (and the run is not done)."""
        while not self.done and self.k * self.cfg.period < t_end - 0.5 * self.cfg.period:
            self.tick()
        return self.trace


def run_closed_loop(cfg: ScenarioConfig, admissible_set: AdmissibleSet | None = None) -> list[TraceRecord]:
    """Full closed-loop run; ``in_set`` is evaluated on the true state."""
    loop = ClosedLoop(cfg)
    while not loop.done:
        loop.tick()
    aset = admissible_set if admissible_set is not None else default_set(cfg.params)
    _mark_in_set(loop.trace, aset)
    return loop.trace


def mark_in_set(trace: list[TraceRecord], admissible_set: AdmissibleSet) -> list[TraceRecord]:
    _mark_in_set(trace, admissible_set)
    return trace


def openloop_voltages(t: float) -> tuple[float, float]:
    """Valve schedule that sweeps both muscles through their pressure range."""
    u1 = 6.0 if t <= 25.0 else 4.7
    if t <= 10.0:
        u2 = 6.0
    elif t <= 25.0:
        u2 = 4.5
    elif t <= 40.0:
        u2 = 6.0
    else:
        u2 = 4.5
    return u1, u2


OPENLOOP_SNAPSHOTS = (10.0, 25.0, 40.0, 55.0)


def run_open_loop(cfg: ScenarioConfig | None = None, admissible_set: AdmissibleSet | None = None,
                  voltages=openloop_voltages) -> list[TraceRecord]:
    """Apply the fixed voltage schedule and log the truth (no estimator, no controller)."""
    cfg = cfg or ScenarioConfig(duration=55.0, estimator=False)
    params = cfg.params
    pl = plant.Plant(cfg.initial, params, dataclasses.replace(cfg.noise, seed=cfg.seed), cfg.plant_options)
    aset = admissible_set if admissible_set is not None else default_set(params)
    trace = []
    nan = math.nan
    for k in range(cfg.n_ticks + 1):
        t = k * cfg.period
        try:
            u = voltages(t)
            meas = pl.measure()
            sigma = pl.mode(u)
            x = pl.x.copy()
            if k < cfg.n_ticks:
                pl.advance(u, cfg.period, cfg.substep)
                pl.state.check(params)
        except Exception as exc:  # noqa: BLE001
            raise ScenarioError(k, t, pl.x.copy(), exc) from exc
        F1, F2, Kp_true = _truth_record_parts(x, params)
        trace.append(TraceRecord(
            t=t, psi_ref=nan, psi_true=math.degrees(x[0]), psi_hat=nan, Kp_ref=nan, Kp_true=Kp_true, Kp_hat=nan,
            P1_true=x[2] / 1e3, P2_true=x[3] / 1e3, P1_meas=meas[0] / 1e3, P2_meas=meas[1] / 1e3,
            F1_true=F1, F2_true=F2, F1_ref=nan, F2_ref=nan, F1_hat=nan, F2_hat=nan,
            tau_c=nan, u1=u[0], u2=u[1], sigma=sigma, in_set=False,
        ))
    _mark_in_set(trace, aset)
    return trace


def snapshot(trace: list[TraceRecord], t: float) -> TraceRecord:
    times = np.array([r.t for r in trace])
    return trace[int(np.argmin(np.abs(times - t)))]


@dataclass
class Metrics:
    angle_rmse_true: float
    angle_rmse_hat: float
    stiffness_rmse_true: float
    stiffness_rmse_hat: float
    angle_estimation_rmse: float
    stiffness_estimation_rmse: float
    in_set_fraction: float
    u_min: float
    u_max: float
    saturation_duty: float


def _rmse(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[np.isfinite(d)]
    return float(np.sqrt(np.mean(d * d))) if d.size else math.nan


def compute_metrics(trace: list[TraceRecord], transient: float = 2.0, t_from: float | None = None) -> Metrics:
    """Tracking, estimation and set-membership summary.

    RMSEs run over samples with t >= ``t_from`` (default: all); the in-set
    fraction skips the first ``transient`` seconds.
    """
    if not trace:
        raise ValueError("empty trace")
    cols = {c: np.array([getattr(r, c) for r in trace], dtype=float) for c in TRACE_COLUMNS}
    sel = cols["t"] >= (t_from if t_from is not None else -math.inf)
    post = cols["t"] >= cols["t"][0] + transient
    u = np.concatenate([cols["u1"], cols["u2"]])
    sat = (cols["u1"] <= 0) | (cols["u1"] >= 10) | (cols["u2"] <= 0) | (cols["u2"] >= 10)
    return Metrics(
        angle_rmse_true=_rmse(cols["psi_ref"][sel], cols["psi_true"][sel]),
        angle_rmse_hat=_rmse(cols["psi_ref"][sel], cols["psi_hat"][sel]),
        stiffness_rmse_true=_rmse(cols["Kp_ref"][sel], cols["Kp_true"][sel]),
        stiffness_rmse_hat=_rmse(cols["Kp_ref"][sel], cols["Kp_hat"][sel]),
        angle_estimation_rmse=_rmse(cols["psi_true"][sel], cols["psi_hat"][sel]),
        stiffness_estimation_rmse=_rmse(cols["Kp_true"][sel], cols["Kp_hat"][sel]),
        in_set_fraction=float(np.mean(cols["in_set"][post])) if np.any(post) else math.nan,
        u_min=float(np.min(u)),
        u_max=float(np.max(u)),
        saturation_duty=float(np.mean(sat)),
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def trace_to_csv(trace: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace:
        w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])
    return buf.getvalue()


def write_trace_csv(path, trace: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_csv(trace))


def read_trace_csv(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        kw = {c: float(row[c]) for c in TRACE_COLUMNS}
        kw["sigma"] = int(kw["sigma"])
        kw["in_set"] = bool(int(kw["in_set"]))
        out.append(TraceRecord(**kw))
    return out
