"""Cascaded sensor-less angle/stiffness controller.

Outer angle PI -> command torque; algebraic reference generator -> per-muscle
force references; two inner force PIs -> valve voltages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from pamtwin.estimator import Estimate, derive_outputs
from pamtwin.statics import DEFAULT_PARAMS, ModelDomainError, ModelParameters, alpha, pam_lengths

log = logging.getLogger(__name__)

T_STP = 1e-3
U_NEUTRAL = 5.0


class ReferenceSingularityError(ModelDomainError):
    pass


@dataclass
class PiController:
    """Discrete PI: y(k) = offset + Gi x(k) + Gp e(k), x(k+1) = x(k) + dt e(k)."""

    Gp: float
    Gi: float
    dt: float = T_STP
    u_min: float = -math.inf
    u_max: float = math.inf
    offset: float = 0.0
    x: float = 0.0

    def __post_init__(self):
        if not self.u_min < self.u_max:
            raise ValueError(f"saturation bounds out of order: {self.u_min} >= {self.u_max}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def step(self, e: float, freeze: bool = False) -> float:
        raw = self.offset + self.Gi * self.x + self.Gp * e
        out = min(max(raw, self.u_min), self.u_max)
        # conditional integration: hold the state while saturated and the
        # error would drive further into the limit
        winding = (raw > self.u_max and e > 0) or (raw < self.u_min and e < 0)
        if not (freeze or winding):
            self.x += self.dt * e
        return out


@dataclass
class ReferenceCommand:
    psi_ref: float
    Kp_ref: float


def reference_forces(tau_c: float, Kp_ref: float, psi_hat: float, P1: float, P2: float,
                     params: ModelParameters = DEFAULT_PARAMS, printed_sign: bool = False) -> tuple[float, float]:
    """Force references (F1_bar, F2_bar) that realise torque ``tau_c`` and stiffness ``Kp_ref``.

    By default the alpha term enters the bracket with a plus sign, which is
    what inverting the torque and stiffness relations gives. ``printed_sign``
    selects the minus sign for comparison; it does not reproduce ``Kp_ref``.
    """
    c = math.cos(psi_hat)
    if abs(c) < 1e-9:
        raise ReferenceSingularityError(f"cos(psi_hat) ~ 0 at psi_hat={psi_hat!r}")
    l1, l2 = pam_lengths(psi_hat, params)
    l1, l2 = float(l1), float(l2)
    rc = params.r * c
    rc2 = rc * rc
    a_term = rc2 * (float(alpha(P1, 1, params)) / l1 + float(alpha(P2, 2, params)) / l2)
    bracket = Kp_ref + (rc / l2 - math.tan(psi_hat)) * tau_c + (-a_term if printed_sign else a_term)
    F1 = bracket * (l1 * l2 / (l1 + l2)) / rc2
    return F1, F1 - tau_c / rc


@dataclass
class ControllerConfig:
    Gp_angle: float = 15.0
    Gi_angle: float = 10.0
    Gp_force: float = 0.08
    Gi_force: float = 0.15
    dt: float = T_STP
    neutral: str = "offset"  # or "integrator": the force integrators start at 5/Gi
    pressure_source: str = "estimate"  # or "measurement"
    printed_sign: bool = False
    anti_windup: bool = True

    def __post_init__(self):
        if self.neutral not in ("offset", "integrator"):
            raise ValueError(f"neutral must be 'offset' or 'integrator', got {self.neutral!r}")
        if self.pressure_source not in ("estimate", "measurement"):
            raise ValueError(f"pressure_source must be 'estimate' or 'measurement', got {self.pressure_source!r}")


@dataclass
class ControllerOutput:
    u1: float
    u2: float
    tau_c: float
    F1_ref: float
    F2_ref: float
    F1_hat: float
    F2_hat: float
    saturated: bool


class AngleStiffnessController:
    """Controller memory (three PI states) plus the composition of one control tick."""

    def __init__(self, config: ControllerConfig | None = None, params: ModelParameters = DEFAULT_PARAMS,
                 admissible_set=None):
        self.config = cfg = config or ControllerConfig()
        self.params = params
        self.admissible_set = admissible_set
        self.angle_pi = PiController(cfg.Gp_angle, cfg.Gi_angle, cfg.dt)
        offset = U_NEUTRAL if cfg.neutral == "offset" else 0.0
        x0 = 0.0 if cfg.neutral == "offset" else U_NEUTRAL / cfg.Gi_force
        self.force_pis = [
            PiController(cfg.Gp_force, cfg.Gi_force, cfg.dt, 0.0, 10.0, offset, x0) for _ in range(2)
        ]
        self._saturated = False
        self._warned_refs: set[tuple[float, float]] = set()

    def _audit(self, cmd: ReferenceCommand):
        if self.admissible_set is None:
            return
        key = (round(cmd.psi_ref, 6), round(cmd.Kp_ref, 6))
        if key in self._warned_refs:
            return
        if not self.admissible_set.contains(cmd.psi_ref, cmd.Kp_ref):
            self._warned_refs.add(key)
            log.warning("reference (%.3f deg, %.3f Nm/rad) is outside the admissible set",
                        math.degrees(cmd.psi_ref), cmd.Kp_ref)

    def step(self, cmd: ReferenceCommand, est: Estimate, measured_pressures=None) -> ControllerOutput:
        cfg = self.config
        self._audit(cmd)
        psi_hat, _, P1_hat, P2_hat = (float(v) for v in est.mean)
        F1_hat, F2_hat, _, _ = derive_outputs(est)
        if cfg.pressure_source == "measurement":
            if measured_pressures is None:
                raise ValueError("pressure_source='measurement' needs measured pressures")
            P1, P2 = measured_pressures
        else:
            P1, P2 = P1_hat, P2_hat

        freeze_angle = cfg.anti_windup and self._saturated
        tau_c = self.angle_pi.step(cmd.psi_ref - psi_hat, freeze=freeze_angle)
        F1_ref, F2_ref = reference_forces(tau_c, cmd.Kp_ref, psi_hat, P1, P2, self.params, cfg.printed_sign)
        us = []
        for pi, ref, hat in zip(self.force_pis, (F1_ref, F2_ref), (F1_hat, F2_hat)):
            if cfg.anti_windup:
                us.append(pi.step(ref - hat))
            else:
                raw_x = pi.x
                us.append(pi.step(ref - hat))
                pi.x = raw_x + pi.dt * (ref - hat)
        self._saturated = any(u <= 0.0 or u >= 10.0 for u in us)
        return ControllerOutput(us[0], us[1], tau_c, F1_ref, F2_ref, F1_hat, F2_hat, self._saturated)
