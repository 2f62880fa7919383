"""Weight/bias tables, trajectory logs and finite datasets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class State:
    """Parameters of an L-layer network or particle system.

    ``w1`` has shape ``(n1, dw)``; ``w[i-2]`` has shape ``(n_{i-1}, n_i)`` and
    ``b[i-2]`` has shape ``(n_i,)`` for ``i = 2..L``. The same container serves
    the discrete-time network (``time`` counts continuous time ``k * eps``) and
    the particle system.
    """

    w1: np.ndarray
    w: tuple
    b: tuple
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(self.w))
        object.__setattr__(self, "b", tuple(self.b))
        widths = self.widths
        if widths[-1] != 1:
            raise ValueError(f"last layer must have width 1, got widths {widths}")
        if self.w1.ndim != 2:
            raise ValueError("w1 must be a (n1, dw) table")
        prev = self.w1.shape[0]
        for i, (wi, bi) in enumerate(zip(self.w, self.b), start=2):
            if wi.shape != (prev, bi.shape[0]) or bi.ndim != 1:
                raise ValueError(f"layer {i}: weight {wi.shape} and bias {bi.shape} do not chain")
            prev = bi.shape[0]

    @property
    def L(self) -> int:
        return len(self.w) + 1

    @property
    def widths(self) -> tuple:
        return (self.w1.shape[0],) + tuple(bi.shape[0] for bi in self.b)

    def weight(self, i: int) -> np.ndarray:
        return self.w1 if i == 1 else self.w[i - 2]

    def bias(self, i: int) -> np.ndarray:
        return self.b[i - 2]

    def arrays(self) -> list:
        return [self.w1, *self.w, *self.b]

    def from_arrays(self, arrays, time: float | None = None) -> "State":
        k = len(self.w)
        return State(arrays[0], tuple(arrays[1:1 + k]), tuple(arrays[1 + k:]),
                     self.time if time is None else time)

    def at_time(self, time: float) -> "State":
        return replace(self, time=time)

    def copy(self) -> "State":
        return self.from_arrays([a.copy() for a in self.arrays()])

    def restrict(self, widths) -> "State":
        """Top-left sub-block with the given widths."""
        widths = tuple(widths)
        if len(widths) != self.L or any(a > b for a, b in zip(widths, self.widths)):
            raise ValueError(f"cannot restrict widths {self.widths} to {widths}")
        w = tuple(self.w[i][: widths[i], : widths[i + 1]] for i in range(self.L - 1))
        b = tuple(self.b[i][: widths[i + 1]] for i in range(self.L - 1))
        return State(self.w1[: widths[0]], w, b, self.time)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def sup_distance(self, other: "State") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays(), other.arrays()))

    def equals(self, other: "State") -> bool:
        return self.widths == other.widths and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


NetworkState = State
ParticleState = State


@dataclass
class TrajectoryLog:
    """Time-indexed snapshots with per-snapshot diagnostics."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def append(self, t: float, state, diag: dict | None = None):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must be strictly increasing")
        if not self.times and t != 0:
            raise ValueError("the first snapshot must be at t = 0")
        self.times.append(float(t))
        self.states.append(state)
        self.diagnostics.append(dict(diag or {}))

    def __len__(self):
        return len(self.times)

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        """Index of the snapshot at time ``t`` (within ``tol``)."""
        times = np.asarray(self.times)
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > tol:
            raise KeyError(f"no snapshot at t={t}")
        return k

    def state_at(self, t: float, tol: float = 1e-9):
        return self.states[self.index_at(t, tol)]

    @property
    def final(self):
        return self.states[-1]

    def series(self, key: str) -> np.ndarray:
        return np.array([d[key] for d in self.diagnostics], dtype=float)


@dataclass(frozen=True)
class Dataset:
    """Finite list of samples; expectations over data are exact averages."""

    X: np.ndarray  # (N, d)
    Y: np.ndarray  # (N,)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of samples")
        if X.shape[0] == 0:
            raise ValueError("dataset is empty")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample(self, k: int):
        return self.X[k], self.Y[k]
