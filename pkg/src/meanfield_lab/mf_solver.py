"""Continuous-time particle dynamics and the Picard fixed-point map.

The particle system averages updates over the data exactly and over neurons
empirically; with many particles it is the computable stand-in for the mean
field limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .architecture import ArchitectureSpec
from .forward_backward import mean_update
from .norms import NormTracker
from .state import Dataset, State, TrajectoryLog

BLOWUP_THRESHOLD = 1e12


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    dt: float
    scheme: str = "rk4"

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("euler", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t_end > 0 and self.dt > self.t_end:
            raise ValueError("dt exceeds t_end")
        if abs(self.steps * self.dt - self.t_end) > 1e-12 * max(1.0, self.t_end):
            raise ValueError(f"dt={self.dt} does not divide t_end={self.t_end}")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def time(self, k: int) -> float:
        return k * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def particle_rhs(pstate: State, spec: ArchitectureSpec, dataset: Dataset, t: float) -> State:
    """Time derivative of every particle parameter: ``-xi(t) * E_Z[Delta]``."""
    upd = mean_update(pstate, spec, dataset.X, dataset.Y)
    L = spec.L
    w1 = -spec.xiw(1, t) * upd.w1
    w = tuple(-spec.xiw(i, t) * upd.w[i - 2] for i in range(2, L + 1))
    b = tuple(-spec.xib(i, t) * upd.b[i - 2] for i in range(2, L + 1))
    return State(w1, w, b, t)


def _axpy(y, pairs, time):
    arrays = [a.copy() for a in y.arrays()]
    for coef, k in pairs:
        for out, a in zip(arrays, k.arrays()):
            out += coef * a
    return y.from_arrays(arrays, time=time)


def ode_step(rhs: Callable, y, t: float, dt: float, scheme: str):
    """One explicit step for any container exposing ``arrays``/``from_arrays``."""
    if scheme == "euler":
        return _axpy(y, [(dt, rhs(y, t))], t + dt)
    k1 = rhs(y, t)
    k2 = rhs(_axpy(y, [(dt / 2, k1)], t + dt / 2), t + dt / 2)
    k3 = rhs(_axpy(y, [(dt / 2, k2)], t + dt / 2), t + dt / 2)
    k4 = rhs(_axpy(y, [(dt, k3)], t + dt), t + dt)
    return _axpy(y, [(dt / 6, k1), (dt / 3, k2), (dt / 3, k3), (dt / 6, k4)], t + dt)


def _max_abs(y) -> float:
    return max(float(np.max(np.abs(a))) for a in y.arrays())


def integrate(rhs: Callable, y0, grid: TimeGrid, record_stride: int = 1,
              diagnostics: Callable | None = None) -> TrajectoryLog:
    """Fixed-step integration with snapshots every ``record_stride`` steps and at the end."""
    log = TrajectoryLog()
    y = y0.from_arrays([a.copy() for a in y0.arrays()], time=0.0)
    log.append(0.0, y, diagnostics(y) if diagnostics else None)
    stride = max(1, int(record_stride))
    for k in range(grid.steps):
        y = ode_step(rhs, y, grid.time(k), grid.dt, grid.scheme)
        big = _max_abs(y)
        if not np.isfinite(big) or big > BLOWUP_THRESHOLD:
            raise BlowUpError(f"parameter magnitude {big:.3g} at t={grid.time(k + 1):.6g}")
        if (k + 1) % stride == 0 or k + 1 == grid.steps:
            log.append(grid.time(k + 1), y, diagnostics(y) if diagnostics else None)
    return log


def integrate_particle(init: State, spec: ArchitectureSpec, dataset: Dataset, grid: TimeGrid,
                       record_stride: int = 1) -> TrajectoryLog:
    """Integrate the particle ODEs; diagnostics carry the running norm ||W||_t."""
    tracker = NormTracker(spec.growth_p)
    return integrate(lambda y, t: particle_rhs(y, spec, dataset, t), init, grid, record_stride,
                     diagnostics=lambda y: {"norm_W": tracker.update(y)})


@dataclass
class PicardReport:
    residuals: list = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False

    def ratios(self) -> np.ndarray:
        r = np.asarray(self.residuals)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]


def traj_sup_distance(a: TrajectoryLog, b: TrajectoryLog) -> float:
    """sup over shared snapshots and parameters of |a - b|."""
    if len(a) != len(b):
        raise ValueError("trajectories have different lengths")
    return max(x.sup_distance(y) for x, y in zip(a.states, b.states))


def _check_on_grid(traj: TrajectoryLog, grid: TimeGrid):
    if len(traj) != grid.steps + 1 or not np.allclose(traj.times, grid.times, atol=1e-9, rtol=0):
        raise ValueError("trajectory must hold a snapshot at every grid point")


def picard_map(W_traj: TrajectoryLog, spec: ArchitectureSpec, dataset: Dataset, grid: TimeGrid) -> TrajectoryLog:
    """``F(W)(t) = W(0) + int_0^t rhs(W(s), s) ds`` with the trapezoid rule.

    The integrand is evaluated on the input trajectory only.
    """
    _check_on_grid(W_traj, grid)
    W0 = W_traj.states[0]
    g = [particle_rhs(s, spec, dataset, t).arrays() for t, s in zip(grid.times, W_traj.states)]
    acc = [a.astype(float).copy() for a in W0.arrays()]
    out = TrajectoryLog()
    out.append(0.0, W0.from_arrays([a.copy() for a in acc], time=0.0))
    half = grid.dt / 2
    for k in range(grid.steps):
        for a, lo, hi in zip(acc, g[k], g[k + 1]):
            a += half * (lo + hi)
        big = max(float(np.max(np.abs(a))) for a in acc)
        if not np.isfinite(big) or big > BLOWUP_THRESHOLD:
            raise BlowUpError(f"Picard iterate magnitude {big:.3g} at t={grid.time(k + 1):.6g}")
        out.append(grid.time(k + 1), W0.from_arrays([a.copy() for a in acc], time=grid.time(k + 1)))
    return out


def constant_trajectory(init: State, grid: TimeGrid) -> TrajectoryLog:
    log = TrajectoryLog()
    for t in grid.times:
        log.append(float(t), init.at_time(float(t)))
    return log


def picard_solve(init: State, spec: ArchitectureSpec, dataset: Dataset, grid: TimeGrid,
                 k_max: int, tol: float) -> tuple[TrajectoryLog, PicardReport]:
    """Iterate the Picard map from the constant trajectory until the residual drops below ``tol``."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    W = constant_trajectory(init, grid)
    report = PicardReport()
    for k in range(1, k_max + 1):
        FW = picard_map(W, spec, dataset, grid)
        res = traj_sup_distance(FW, W)
        report.residuals.append(res)
        report.iterations_used = k
        W = FW
        if res <= tol:
            report.converged = True
            break
    return W, report
