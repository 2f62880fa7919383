"""Running-supremum norms of weight trajectories."""

from __future__ import annotations

import numpy as np

from .state import State, TrajectoryLog


def instant_norms(state: State, p: float) -> tuple[float, float]:
    """(weight part, bias part) at a single time.

    Layer 1 uses the empirical L^p mean of the row norms; all other layers use
    the maximum absolute entry.
    """
    w1 = float(np.mean(np.linalg.norm(state.w1, axis=1) ** p) ** (1.0 / p))
    w = max([w1] + [float(np.max(np.abs(a))) for a in state.w])
    b = max([float(np.max(np.abs(a))) for a in state.b], default=0.0)
    return w, b


class NormTracker:
    """Accumulates ||W||_t = max(||w||_t, ||b||_t) as snapshots arrive."""

    def __init__(self, p: float):
        self.p = p
        self.w = 0.0
        self.b = 0.0

    def update(self, state: State) -> float:
        w, b = instant_norms(state, self.p)
        self.w, self.b = max(self.w, w), max(self.b, b)
        return max(self.w, self.b)


def norm_W(log: TrajectoryLog, t: float, p: float) -> float:
    """||W||_t evaluated over the snapshots of ``log`` with time <= t."""
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    if t < 0 or t > log.times[-1] + 1e-9:
        raise ValueError(f"t={t} outside the log range [0, {log.times[-1]}]")
    tracker = NormTracker(p)
    out = 0.0
    for s, state in zip(log.times, log.states):
        if s > t + 1e-12:
            break
        out = tracker.update(state)
    return out
