"""Discrete-time single-sample SGD dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .architecture import ArchitectureSpec
from .forward_backward import backward, forward
from .norms import NormTracker
from .state import Dataset, State, TrajectoryLog


@dataclass(frozen=True)
class SgdConfig:
    epsilon: float
    horizon_T: float
    record_stride: int | None = None  # default max(1, floor(0.01 * T / eps))
    data_seed: int = 0
    track_loss: bool = True

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.horizon_T < 0:
            raise ValueError("horizon_T must be nonnegative")

    @property
    def steps(self) -> int:
        # guards floor(T/eps) against representation error, e.g. 1 / 0.01
        return int(math.floor(self.horizon_T / self.epsilon + 1e-9))

    @property
    def stride(self) -> int:
        if self.record_stride is not None:
            return max(1, int(self.record_stride))
        return max(1, int(math.floor(0.01 * self.horizon_T / self.epsilon)))


def sgd_step(state: State, spec: ArchitectureSpec, z, t_step: int, cfg: SgdConfig) -> State:
    """One update with the sample ``z``; the input state is left untouched."""
    x, y = z
    cache = forward(state, spec, x)
    bundle = backward(state, spec, (x, y), cache)
    eps, t = cfg.epsilon, t_step * cfg.epsilon
    w1 = state.w1 - eps * spec.xiw(1, t) * bundle.deltaW1[0]
    w = tuple(state.w[i - 2] - eps * spec.xiw(i, t) * bundle.deltaW[i - 2][0] for i in range(2, spec.L + 1))
    b = tuple(state.b[i - 2] - eps * spec.xib(i, t) * bundle.deltaB[i - 2][0] for i in range(2, spec.L + 1))
    new = State(w1, w, b, (t_step + 1) * eps)
    if not new.all_finite():
        raise FloatingPointError(f"non-finite parameters after SGD step {t_step}")
    return new


def population_loss(state: State, spec: ArchitectureSpec, dataset: Dataset) -> float:
    """Exact average of the (unregularized) loss over the dataset."""
    if spec.fc is None:
        raise ValueError("population loss needs a spec with a loss")
    cache = forward(state, spec, dataset.X)
    return float(np.mean(spec.fc.loss.value(dataset.Y, cache.yhat)))


def train_sgd(init: State, spec: ArchitectureSpec, dataset: Dataset, cfg: SgdConfig) -> TrajectoryLog:
    """Run floor(T/eps) single-sample steps, drawing samples uniformly with replacement."""
    steps, stride = cfg.steps, cfg.stride
    draws = np.random.default_rng(cfg.data_seed).integers(0, len(dataset), size=steps)
    log = TrajectoryLog()
    norms = NormTracker(spec.growth_p)
    state = init.at_time(0.0)
    norm = norms.update(state)

    def diag(s, max_update):
        d = {"norm_W": norm, "max_update": max_update}
        if cfg.track_loss and spec.fc is not None:
            d["loss"] = population_loss(s, spec, dataset)
        return d

    log.append(0.0, state, diag(state, 0.0))
    max_update = 0.0
    for k in range(steps):
        new = sgd_step(state, spec, dataset.sample(int(draws[k])), k, cfg)
        max_update = max(max_update, new.sup_distance(state))
        state = new
        norm = norms.update(state)
        if (k + 1) % stride == 0 or k + 1 == steps:
            log.append((k + 1) * cfg.epsilon, state, diag(state, max_update))
            max_update = 0.0
    return log
