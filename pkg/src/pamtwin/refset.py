"""Reference admissible set: steady-state (angle, stiffness) pairs reachable
with allowable muscle pressures, accounting for static friction."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pamtwin.statics import (
    DEFAULT_PARAMS,
    DEFAULT_SETS,
    PSI_LIMIT,
    PSI_MARGIN,
    ModelDomainError,
    ModelParameters,
    joint_stiffness,
    joint_torque,
    muscle_forces,
    static_friction_bound,
)

BIN_WIDTH = math.radians(0.25)
SEARCH_LIMIT = PSI_LIMIT + PSI_MARGIN
BISECTION_ITERS = 60


class Branch(enum.IntEnum):
    """Sign of the maximal static friction in the steady-state balance."""

    MINUS = -1  # psi = (tau - (T_s + T_p)) / k_s
    PLUS = 1  # psi = (tau + (T_s + T_p)) / k_s

    @property
    def label(self) -> str:
        return "minus-friction" if self is Branch.MINUS else "plus-friction"


class InfeasiblePressureError(ModelDomainError):
    pass


class DegenerateSetError(ValueError):
    pass


@dataclass(frozen=True)
class SteadyPoint:
    P1: float
    P2: float
    psi_inf: float
    Kp: float
    branch: Branch


def steady_residual(psi, P1, P2, branch: Branch, params: ModelParameters = DEFAULT_PARAMS):
    """k_s psi - tau(psi) -/+ (T_s + T_p); zero at a steady state of ``branch``."""
    F1, F2 = muscle_forces(psi, P1, P2, params)
    tau = joint_torque(psi, F1, F2, params)
    return params.k_s * psi - tau - int(branch) * static_friction_bound(psi, P1, P2, params)


def _bisect(P1, P2, branch, params, lo=-SEARCH_LIMIT, hi=SEARCH_LIMIT):
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    a = np.full(np.broadcast(P1, P2).shape, lo)
    b = np.full_like(a, hi)
    fa = steady_residual(a, P1, P2, branch, params)
    fb = steady_residual(b, P1, P2, branch, params)
    feasible = np.sign(fa) * np.sign(fb) <= 0
    for _ in range(BISECTION_ITERS):
        m = 0.5 * (a + b)
        fm = steady_residual(m, P1, P2, branch, params)
        left = np.sign(fa) * np.sign(fm) <= 0
        b = np.where(left, m, b)
        a = np.where(left, a, m)
        fa = np.where(left, fa, fm)
    return 0.5 * (a + b), feasible


def steady_state_angle(P1: float, P2: float, branch: Branch, params: ModelParameters = DEFAULT_PARAMS) -> float:
    """Rest angle for constant pressures at the edge of the static friction band."""
    psi, ok = _bisect(P1, P2, Branch(branch), params)
    if not bool(ok):
        raise InfeasiblePressureError(
            f"no steady state on the {Branch(branch).label} branch for P1={P1:.6g}, P2={P2:.6g} Pa "
            f"within +/-{math.degrees(SEARCH_LIMIT):.0f} deg")
    return float(psi)


@dataclass
class PointCloud:
    """Steady points of a pressure sweep, stored column-wise."""

    P1: np.ndarray
    P2: np.ndarray
    psi: np.ndarray
    Kp: np.ndarray
    branch: np.ndarray
    skipped: int = 0
    grid_step: float | None = None

    def __len__(self):
        return self.psi.size

    def __iter__(self):
        for i in range(len(self)):
            yield SteadyPoint(float(self.P1[i]), float(self.P2[i]), float(self.psi[i]), float(self.Kp[i]),
                              Branch(int(self.branch[i])))

    @classmethod
    def from_points(cls, points) -> "PointCloud":
        pts = list(points)
        return cls(
            P1=np.array([p.P1 for p in pts], dtype=float),
            P2=np.array([p.P2 for p in pts], dtype=float),
            psi=np.array([p.psi_inf for p in pts], dtype=float),
            Kp=np.array([p.Kp for p in pts], dtype=float),
            branch=np.array([int(p.branch) for p in pts], dtype=int),
        )


def sweep(params: ModelParameters = DEFAULT_PARAMS, grid_step: float = 5e3,
          p_range: tuple[float, float] = DEFAULT_SETS.p_allow) -> PointCloud:
    """Steady angle and stiffness over a square pressure grid, both branches.

    Pairs with no rest angle within +/-30 deg, or one beyond +/-25 deg, are
    skipped and counted.
    """
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    lo, hi = p_range
    grid = np.arange(lo, hi + 0.5 * grid_step, grid_step)
    grid = grid[grid <= hi + 1e-6 * grid_step]
    P1, P2 = (g.ravel() for g in np.meshgrid(grid, grid, indexing="ij"))
    cols = {k: [] for k in ("P1", "P2", "psi", "Kp", "branch")}
    skipped = 0
    for branch in (Branch.MINUS, Branch.PLUS):
        psi, ok = _bisect(P1, P2, branch, params)
        ok &= np.abs(psi) <= PSI_LIMIT
        skipped += int(np.count_nonzero(~ok))
        cols["P1"].append(P1[ok])
        cols["P2"].append(P2[ok])
        cols["psi"].append(psi[ok])
        cols["Kp"].append(joint_stiffness(psi[ok], P1[ok], P2[ok], params))
        cols["branch"].append(np.full(np.count_nonzero(ok), int(branch)))
    return PointCloud(**{k: np.concatenate(v) for k, v in cols.items()}, skipped=skipped, grid_step=grid_step)


@dataclass
class BranchEnvelope:
    bins: np.ndarray  # integer bin indices
    psi: np.ndarray  # mean angle of the points in each bin
    lo: np.ndarray
    hi: np.ndarray


def _envelope(psi, Kp, bin_width):
    idx = np.floor(psi / bin_width).astype(int)
    bins = np.unique(idx)
    pos = np.searchsorted(bins, idx)
    lo = np.full(bins.size, np.inf)
    hi = np.full(bins.size, -np.inf)
    np.minimum.at(lo, pos, Kp)
    np.maximum.at(hi, pos, Kp)
    mean_psi = np.bincount(pos, weights=psi) / np.bincount(pos)
    return BranchEnvelope(bins, mean_psi, lo, hi)


@dataclass
class AdmissibleSet:
    """Polygon in the (psi [rad], Kp [N m/rad]) plane."""

    boundary: np.ndarray  # (V, 2), counter-clockwise
    cloud: PointCloud | None = None
    grid_step: float | None = None
    bin_width: float = BIN_WIDTH
    envelope: BranchEnvelope | None = field(default=None, repr=False)

    def contains(self, psi: float, Kp: float) -> bool:
        return bool(contains(self, psi, Kp))

    def width_at(self, psi: float) -> float:
        """Stiffness range of the set at angle ``psi`` (0 outside)."""
        env = self.envelope
        if env is None or not env.psi[0] <= psi <= env.psi[-1]:
            return 0.0
        return float(np.interp(psi, env.psi, env.hi) - np.interp(psi, env.psi, env.lo))

    def stiffness_range(self, psi: float) -> tuple[float, float]:
        env = self.envelope
        if env is None or not env.psi[0] <= psi <= env.psi[-1]:
            return (math.nan, math.nan)
        return float(np.interp(psi, env.psi, env.lo)), float(np.interp(psi, env.psi, env.hi))

    @property
    def psi_range(self) -> tuple[float, float]:
        return float(self.boundary[:, 0].min()), float(self.boundary[:, 0].max())

    def area(self) -> float:
        x, y = self.boundary[:, 0], self.boundary[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def build_set(points, bin_width: float = BIN_WIDTH) -> AdmissibleSet:
    """Intersect the per-branch angle-binned stiffness envelopes into one polygon."""
    cloud = points if isinstance(points, PointCloud) else PointCloud.from_points(points)
    if len(cloud) == 0:
        raise DegenerateSetError("empty point cloud")
    envs = [
        _envelope(cloud.psi[cloud.branch == b], cloud.Kp[cloud.branch == b], bin_width)
        for b in (int(Branch.MINUS), int(Branch.PLUS))
        if np.any(cloud.branch == b)
    ]
    bins = envs[0].bins
    for env in envs[1:]:
        bins = np.intersect1d(bins, env.bins)
    if bins.size == 0:
        raise DegenerateSetError("branch regions do not overlap in angle")
    lo = np.max([env.lo[np.searchsorted(env.bins, bins)] for env in envs], axis=0)
    hi = np.min([env.hi[np.searchsorted(env.bins, bins)] for env in envs], axis=0)
    # angular extent of the generating points in each kept bin
    idx = np.floor(cloud.psi / bin_width).astype(int)
    in_bin = np.isin(idx, bins)
    pos = np.searchsorted(bins, idx[in_bin])
    left = np.full(bins.size, np.inf)
    right = np.full(bins.size, -np.inf)
    np.minimum.at(left, pos, cloud.psi[in_bin])
    np.maximum.at(right, pos, cloud.psi[in_bin])

    ok = lo <= hi
    if not np.any(ok):
        raise DegenerateSetError("branch regions do not overlap in stiffness")
    # longest run of consecutive nonempty bins
    best, start = (0, 0), None
    for i in range(bins.size):
        if not ok[i]:
            start = None
            continue
        if start is None or bins[i] - bins[i - 1] != 1:
            start = i
        if i + 1 - start > best[1] - best[0]:
            best = (start, i + 1)
    s, e = best
    left, right, lo, hi, kept = left[s:e], right[s:e], lo[s:e], hi[s:e], bins[s:e]
    # each bin spans [left, right] x [lo, hi]; chains are monotone in psi
    lower = np.column_stack([np.column_stack([left, right]).ravel(), np.repeat(lo, 2)])
    upper = np.column_stack([np.column_stack([right, left])[::-1].ravel(), np.repeat(hi[::-1], 2)])
    boundary = _dedupe(np.concatenate([lower, upper]))
    x = 0.5 * (left + right)
    return AdmissibleSet(boundary, cloud, cloud.grid_step, bin_width, BranchEnvelope(kept, x, lo, hi))


def _dedupe(vertices):
    keep = [0]
    for i in range(1, len(vertices)):
        if not np.array_equal(vertices[i], vertices[keep[-1]]):
            keep.append(i)
    if len(keep) > 1 and np.array_equal(vertices[keep[-1]], vertices[0]):
        keep.pop()
    return vertices[keep]


def _on_segment(px, py, ax, ay, bx, by, tol):
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    t = np.where(seg2 > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(seg2 > 0, seg2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy)) <= tol


def contains(aset: AdmissibleSet, psi, Kp, tol: float = 1e-12):
    """Even-odd point-in-polygon test; points on the boundary count as inside.

    ``tol`` is relative to the polygon's extent in each coordinate.
    """
    V = aset.boundary
    span = np.ptp(V, axis=0)
    scale = np.where(span > 0, span, 1.0)
    origin = V.min(axis=0)
    px = (np.asarray(psi, dtype=float) - origin[0]) / scale[0]
    py = (np.asarray(Kp, dtype=float) - origin[1]) / scale[1]
    vx = (V[:, 0] - origin[0]) / scale[0]
    vy = (V[:, 1] - origin[1]) / scale[1]
    px_, py_ = px[..., None], py[..., None]
    ax, ay = vx, vy
    bx, by = np.roll(vx, -1), np.roll(vy, -1)
    boundary = np.any(_on_segment(px_, py_, ax, ay, bx, by, tol), axis=-1)
    straddle = (ay > py_) != (by > py_)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py_ - ay) * (bx - ax) / (by - ay)
    crossings = np.count_nonzero(straddle & (px_ < x_cross), axis=-1)
    return boundary | (crossings % 2 == 1)


def write_cloud_csv(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P1_kPa", "P2_kPa", "branch", "psi_deg", "Kp_Nm_per_rad"])
        for p in cloud:
            w.writerow([f"{p.P1 / 1e3:.6g}", f"{p.P2 / 1e3:.6g}", p.branch.label,
                        f"{math.degrees(p.psi_inf):.9g}", f"{p.Kp:.9g}"])


def write_polygon_csv(path, aset: AdmissibleSet) -> None:
    """Closed polygon (first vertex repeated at the end) in degrees and N m/rad."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["psi_deg", "Kp_Nm_per_rad"])
        for x, y in np.vstack([aset.boundary, aset.boundary[:1]]):
            w.writerow([f"{math.degrees(x):.9g}", f"{y:.9g}"])


def read_polygon_csv(path) -> AdmissibleSet:
    rows = list(csv.DictReader(Path(path).read_text(encoding="utf-8").splitlines()))
    V = np.array([[math.radians(float(r["psi_deg"])), float(r["Kp_Nm_per_rad"])] for r in rows])
    if len(V) > 1 and np.array_equal(V[0], V[-1]):
        V = V[:-1]
    return AdmissibleSet(V)


_DEFAULT_SET: dict = {}


def default_set(params: ModelParameters = DEFAULT_PARAMS, grid_step: float = 5e3) -> AdmissibleSet:
    """Cached set for the given parameters and grid."""
    key = (params, grid_step)
    if key not in _DEFAULT_SET:
        _DEFAULT_SET[key] = build_set(sweep(params, grid_step))
    return _DEFAULT_SET[key]
