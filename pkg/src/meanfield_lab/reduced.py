"""Reduced dynamics under i.i.d. initialization with constant initial biases.

For a fully-connected network with L >= 5, each weight in the limit depends
only on a few initial values:

* ``w1(t, c1)`` on its own init ``u1``;
* ``w2(t, c1, c2)`` on ``(u1, u2)``, the layer-1 init of the sending neuron and its own;
* ``w_i`` for ``3 <= i <= L-2`` on its own init only (one common shift);
* ``w_{L-1}(t, c_{L-2}, c_{L-1})`` on its own init and ``u_L`` of the receiving neuron;
* ``w_L`` and ``b_{L-1}`` on ``u_L``; the other biases stay scalars.

The integrals against the initial laws are weighted sums over quadrature atoms.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .architecture import ArchitectureSpec
from .coupling import WEIGHT
from .keyed_rng import keyed_uniform
from .mf_solver import TimeGrid, integrate
from .state import Dataset, State, TrajectoryLog


@dataclass(frozen=True)
class QuadratureMeasure:
    atoms: np.ndarray  # (m,) for scalar layers, (m, dw) for layer 1
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] != weights.shape[0] or weights.shape[0] == 0:
            raise ValueError("need one weight per atom and at least one atom")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> "QuadratureMeasure":
        atoms = np.asarray(atoms, dtype=float)
        m = atoms.shape[0]
        return cls(atoms, np.full(m, 1.0 / m))

    def __len__(self):
        return self.atoms.shape[0]

    def mean(self) -> float:
        return float(self.weights @ self.atoms)


@dataclass(frozen=True)
class ReducedState:
    w1: np.ndarray  # (P, dw)
    w2: np.ndarray  # (P, Q2)
    wmid: tuple  # layers 3..L-2, each (Q_i,)
    wLm1: np.ndarray  # (Q_{L-1}, R)
    wL: np.ndarray  # (R,)
    bmid: np.ndarray  # b_2 .. b_{L-2}
    bLm1: np.ndarray  # (R,)
    bL: np.ndarray  # (1,)
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "wmid", tuple(self.wmid))
        P, Q2 = self.w2.shape
        R = self.wL.shape[0]
        if self.w1.shape[0] != P or self.wLm1.shape[1] != R or self.bLm1.shape != (R,):
            raise ValueError("reduced tables do not match their atom counts")
        if self.bmid.shape != (len(self.wmid) + 1,) or self.bL.shape != (1,):
            raise ValueError("reduced bias shapes are inconsistent")

    @property
    def L(self) -> int:
        return len(self.wmid) + 4

    def arrays(self) -> list:
        return [self.w1, self.w2, *self.wmid, self.wLm1, self.wL, self.bmid, self.bLm1, self.bL]

    def from_arrays(self, arrays, time: float | None = None) -> "ReducedState":
        k = len(self.wmid)
        return ReducedState(arrays[0], arrays[1], tuple(arrays[2:2 + k]), *arrays[2 + k:],
                            time=self.time if time is None else time)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())


def _check_setting(spec: ArchitectureSpec, measures):
    if spec.L < 5:
        raise ValueError("the reduced system needs L >= 5")
    if spec.fc is None:
        raise ValueError("the reduced system is defined for fully-connected specs")
    if len(measures) != spec.L:
        raise ValueError(f"need {spec.L} quadrature measures, got {len(measures)}")


def reduced_init(measures, biases, spec: ArchitectureSpec) -> ReducedState:
    """``w_i^*(0, u) = u`` and ``b_i^*(0) = B_i``."""
    _check_setting(spec, measures)
    L = spec.L
    if len(biases) != L - 1:
        raise ValueError(f"need {L - 1} bias constants")
    m1 = measures[0]
    if m1.atoms.ndim != 2 or m1.atoms.shape[1] != spec.dims["w1"]:
        raise ValueError("layer-1 atoms must be rows of the first-layer weight dimension")
    P, Q2, R = len(m1), len(measures[1]), len(measures[L - 1])
    B = [float(x) for x in biases]
    return ReducedState(
        w1=m1.atoms.copy(),
        w2=np.broadcast_to(measures[1].atoms, (P, Q2)).copy(),
        wmid=tuple(measures[i - 1].atoms.copy() for i in range(3, L - 1)),
        wLm1=np.broadcast_to(measures[L - 2].atoms[:, None], (len(measures[L - 2]), R)).copy(),
        wL=measures[L - 1].atoms.copy(),
        bmid=np.array(B[: L - 3]),
        bLm1=np.full(R, B[L - 3]),
        bL=np.array([B[L - 2]]),
    )


def reduced_rhs(rs: ReducedState, measures, spec: ArchitectureSpec, dataset: Dataset, t: float) -> ReducedState:
    fc, L = spec.fc, spec.L
    acts = fc.acts  # acts[i-2] acts on H_{i-1} inside layer i
    pi = [m.weights for m in measures]
    X = dataset.X
    A = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1) if fc.input_bias else X
    Y = dataset.Y

    # forward
    H1 = A @ rs.w1.T  # (B, P)
    f1 = acts[0].f(H1)
    m2 = rs.w2 @ pi[1]  # (P,) integral over u2
    H = [None, H1, f1 @ (pi[0] * m2) + rs.bmid[0]]  # H[i] for i = 1..L-2 scalar from 2 on
    for i in range(3, L - 1):
        H.append(acts[i - 2].f(H[i - 1]) * (pi[i - 1] @ rs.wmid[i - 3]) + rs.bmid[i - 2])
    mLm1 = pi[L - 2] @ rs.wLm1  # (R,)
    HLm1 = acts[L - 3].f(H[L - 2])[:, None] * mLm1[None, :] + rs.bLm1[None, :]  # (B, R)
    fLm1 = acts[L - 2].f(HLm1)
    HL = fLm1 @ (pi[L - 1] * rs.wL) + rs.bL[0]
    yhat = fc.out.f(HL)

    # backward
    dL = fc.loss.d2(Y, yhat) * fc.out.df(HL)  # (B,)
    dLm1 = dL[:, None] * rs.wL[None, :] * acts[L - 2].df(HLm1)  # (B, R)
    D = {L - 2: (dLm1 @ (pi[L - 1] * mLm1)) * acts[L - 3].df(H[L - 2])}
    for i in range(L - 2, 2, -1):
        D[i - 1] = D[i] * (pi[i - 1] @ rs.wmid[i - 3]) * acts[i - 2].df(H[i - 1])
    D1 = D[2][:, None] * m2[None, :] * acts[0].df(H1)  # (B, P)

    def xw(i):
        return -spec.xiw(i, t)

    def xb(i):
        return -spec.xib(i, t)

    Phi, Psi = fc.Phi, fc.Psi
    dw1 = xw(1) * ((D1.T @ A) / len(Y) + Phi[0].grad(rs.w1))
    g2 = (D[2] @ f1) / len(Y)  # (P,)
    dw2 = xw(2) * (g2[:, None] + Phi[1].grad(rs.w2))
    dwmid = tuple(xw(i) * (np.mean(D[i] * acts[i - 2].f(H[i - 1])) + Phi[i - 1].grad(rs.wmid[i - 3]))
                  for i in range(3, L - 1))
    gLm1 = (acts[L - 3].f(H[L - 2]) @ dLm1) / len(Y)  # (R,)
    dwLm1 = xw(L - 1) * (gLm1[None, :] + Phi[L - 2].grad(rs.wLm1))
    dwL = xw(L) * ((dL @ fLm1) / len(Y) + Phi[L - 1].grad(rs.wL))
    dbmid = np.array([xb(i) * (np.mean(D[i]) + Psi[i - 2].grad(rs.bmid[i - 2])) for i in range(2, L - 1)])
    dbLm1 = xb(L - 1) * (dLm1.mean(axis=0) + Psi[L - 3].grad(rs.bLm1))
    dbL = xb(L) * (np.array([dL.mean()]) + Psi[L - 2].grad(rs.bL))
    return ReducedState(dw1, dw2, dwmid, dwLm1, dwL, dbmid, dbLm1, dbL, t)


def integrate_reduced(measures, biases, spec: ArchitectureSpec, dataset: Dataset, grid: TimeGrid,
                      record_stride: int = 1) -> TrajectoryLog:
    """Time-step the reduced system from ``w^*(0, u) = u``; the blow-up guard of the solver applies."""
    init = reduced_init(measures, biases, spec)
    return integrate(lambda y, t: reduced_rhs(y, measures, spec, dataset, t), init, grid, record_stride)


# ---------------------------------------------------------------------------
# comparison with the full particle system


def _atom_index(values: np.ndarray, atoms: np.ndarray, label: str) -> np.ndarray:
    """Index of the atom equal to each value (rows when atoms are vectors)."""
    if atoms.ndim == 2:
        eq = np.all(values[:, None, :] == atoms[None, :, :], axis=2)
    else:
        eq = values[..., None] == atoms
    if not np.all(eq.any(axis=-1)):
        raise ValueError(f"{label}: some initial values are not quadrature atoms")
    return np.argmax(eq, axis=-1)


def iid_atom_init(measures, biases, widths, seed: int) -> State:
    """Particle initialization whose entries are atoms drawn i.i.d. from the measures."""
    widths = tuple(int(n) for n in widths)
    L = len(widths)
    if len(measures) != L or len(biases) != L - 1 or widths[-1] != 1:
        raise ValueError("measures, biases and widths disagree")

    def pick(i, shape_keys):
        m = measures[i - 1]
        u = keyed_uniform(seed, i, WEIGHT, *shape_keys)
        idx = np.searchsorted(np.cumsum(m.weights), u * m.weights.sum(), side="right")
        return m.atoms[np.minimum(idx, len(m) - 1)]

    w1 = pick(1, (np.arange(widths[0]), 0))
    w = tuple(pick(i, (np.arange(widths[i - 2])[:, None], np.arange(widths[i - 1])[None, :]))
              for i in range(2, L + 1))
    b = tuple(np.full(widths[i - 1], float(biases[i - 2])) for i in range(2, L + 1))
    return State(w1, w, b, 0.0)


def _groups(init: State, measures, layer: int):
    """Reduced-table index for every particle entry of ``layer``, as a tuple of index arrays."""
    L = init.L
    if layer == 1:
        return (_atom_index(init.w1, measures[0].atoms, "layer 1"),)
    own = _atom_index(init.w[layer - 2], measures[layer - 1].atoms, f"layer {layer}")
    if layer == 2:
        p = _atom_index(init.w1, measures[0].atoms, "layer 1")
        return (np.broadcast_to(p[:, None], own.shape), own)
    if layer == L - 1:
        r = _atom_index(init.w[L - 2][:, 0], measures[L - 1].atoms, f"layer {L}")
        return (own, np.broadcast_to(r[None, :], own.shape))
    if layer == L:
        return (own[:, 0],)
    return (own,)


def _reduced_table(rs: ReducedState, layer: int) -> np.ndarray:
    L = rs.L
    if layer == 1:
        return rs.w1
    if layer == 2:
        return rs.w2
    if layer == L - 1:
        return rs.wLm1
    if layer == L:
        return rs.wL
    return rs.wmid[layer - 3]


def reduced_vs_particle_gap(reduced_log: TrajectoryLog, particle_log: TrajectoryLog, measures,
                            layer: int, T: float) -> float:
    """sup over snapshot times <= T and atoms of the mean |particle - reduced prediction|.

    Particles are grouped by the reduced-table entry their initial values point
    to; within a group the absolute deviations from that entry are averaged
    (layer-1 rows use their largest coordinate deviation).
    """
    init = particle_log.states[0]
    if init.L < 5 or reduced_log.states[0].L != init.L:
        raise ValueError("both systems need the same depth L >= 5")
    if not 1 <= layer <= init.L:
        raise ValueError(f"layer {layer} out of range")
    idx = _groups(init, measures, layer)
    flat = np.ravel_multi_index(tuple(np.ravel(a) for a in idx), _reduced_table(reduced_log.states[0], layer).shape[:len(idx)])
    members = defaultdict(list)
    for pos, key in enumerate(flat):
        members[int(key)].append(pos)
    keys = np.array(sorted(members))
    gap = 0.0
    for t, ps in zip(particle_log.times, particle_log.states):
        if t > T + 1e-9:
            break
        try:
            rs = reduced_log.state_at(t)
        except KeyError:
            raise ValueError(f"misaligned grids: no reduced snapshot at t={t}") from None
        vals = ps.weight(layer)
        vals = vals.reshape(-1, vals.shape[-1]) if layer == 1 else vals.reshape(-1)
        table = _reduced_table(rs, layer)
        table = table.reshape(-1, table.shape[-1]) if layer == 1 else table.reshape(-1)
        for key in keys:
            dev = np.abs(vals[members[key]] - table[key])
            if dev.ndim == 2:
                dev = dev.max(axis=1)
            gap = max(gap, float(dev.mean()))
    return gap


def translation_profile(particle_log: TrajectoryLog, layer: int, t: float, spec: ArchitectureSpec):
    """Mean and max-min spread of ``w_i(t) - w_i(0)`` over all entries of ``layer``."""
    if layer < 2 or layer > spec.L:
        raise ValueError("translation is probed on layers 2..L")
    if spec.fc is not None and spec.fc.Phi[layer - 1].lam != 0.0:
        raise ValueError(f"layer {layer} carries a weight regularizer; the translation property does not apply")
    d = particle_log.state_at(t).weight(layer) - particle_log.states[0].weight(layer)
    return float(d.mean()), float(d.max() - d.min())


def duplication_gap(log: TrajectoryLog, layer: int, j1: int, j2: int) -> float:
    """sup_t of the difference between two layer-``layer`` neurons' incoming, outgoing and bias parameters.

    Zero when the two neurons start as exact duplicates.
    """
    gap = 0.0
    for s in log.states:
        w_in = s.weight(layer)
        diffs = [np.abs(w_in[..., j1] - w_in[..., j2]) if layer > 1 else np.abs(s.w1[j1] - s.w1[j2])]
        if layer > 1:
            diffs.append(np.abs(s.bias(layer)[[j1]] - s.bias(layer)[[j2]]))
        if layer < s.L:
            w_out = s.weight(layer + 1)
            diffs.append(np.abs(w_out[j1] - w_out[j2]))
        gap = max(gap, max(float(np.max(d)) for d in diffs))
    return gap


def duplicate_neuron(state: State, layer: int, src: int, dst: int) -> State:
    """Copy neuron ``src`` of ``layer`` (incoming weights, bias, outgoing weights) onto ``dst``."""
    arrays = [a.copy() for a in state.arrays()]
    L = state.L
    if layer == 1:
        arrays[0][dst] = arrays[0][src]
    else:
        arrays[layer - 1][:, dst] = arrays[layer - 1][:, src]
        arrays[L + layer - 2][dst] = arrays[L + layer - 2][src]
    if layer < L:
        arrays[layer][dst] = arrays[layer][src]
    return state.from_arrays(arrays)
