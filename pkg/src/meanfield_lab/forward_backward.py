"""Forward and backward recursions for networks and particle systems.

Both take a batch of inputs. Means over neuron indices play the role of the
expectation over the neuronal ensemble, so the same code evaluates a finite
network and a particle system. Two evaluation paths exist:

* the generic path broadcasts the stored ``phi``/``sigma`` callables over
  ``(batch, n_{i-1}, n_i)`` and averages, exactly as the recursions read;
* the fully-connected fast path uses matrix products. It is selected
  automatically for specs built by :func:`make_fc_architecture`, and the two
  paths are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .architecture import ArchitectureSpec
from .state import State


class NonFiniteError(FloatingPointError):
    def __init__(self, where: str, layer: int | None = None):
        self.layer = layer
        super().__init__(f"non-finite value in {where}" + (f" at layer {layer}" if layer is not None else ""))


@dataclass
class ForwardCache:
    H: list  # H[i-1] has shape (B, n_i)
    yhat: np.ndarray  # (B,)
    X: np.ndarray  # (B, d), kept so that backward can evaluate sigma_1^w


@dataclass
class BackwardBundle:
    """Backward quantities, per sample ``(B, ...)`` or data-averaged when ``reduced``."""

    deltaH: list  # deltaH[i-1]: (B, n_i)
    deltaW1: np.ndarray  # (B, n1, dw) or (n1, dw)
    deltaW: list  # layer i at index i-2: (B, n_{i-1}, n_i) or (n_{i-1}, n_i)
    deltaB: list  # (B, n_i) or (n_i,)
    reduced: bool = False

    def as_state(self, sample: int | None = None) -> State:
        if self.reduced:
            return State(self.deltaW1, tuple(self.deltaW), tuple(self.deltaB))
        k = 0 if sample is None else sample
        return State(self.deltaW1[k], tuple(a[k] for a in self.deltaW), tuple(a[k] for a in self.deltaB))


def _float(a) -> np.ndarray:
    # float64 unless the input already carries a wider float type
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, np.float64), copy=False)


def _batch(x, d: int) -> np.ndarray:
    X = _float(x)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"input must have dimension {d}, got shape {np.shape(x)}")
    return X


def _check(a, where, layer=None):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(where, layer)
    return a


def _use_fast(spec: ArchitectureSpec, fast: bool | None) -> bool:
    if fast is None:
        return spec.fc is not None
    if fast and spec.fc is None:
        raise ValueError("fast path is only available for fully-connected specs")
    return fast


def _check_shapes(state: State, spec: ArchitectureSpec):
    if state.L != spec.L:
        raise ValueError(f"state has {state.L} layers, spec has {spec.L}")
    if state.w1.shape[1] != spec.dims["w1"]:
        raise ValueError(f"first-layer weights have dimension {state.w1.shape[1]}, spec expects {spec.dims['w1']}")


def _augment(spec, X):
    if spec.fc.input_bias:
        return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    return X


def forward(state: State, spec: ArchitectureSpec, x, fast: bool | None = None) -> ForwardCache:
    """Hidden values ``H_1..H_L`` and output for each input row of ``x``."""
    _check_shapes(state, spec)
    X = _batch(x, spec.dims["x"])
    H = []
    if _use_fast(spec, fast):
        fc = spec.fc
        h = _augment(spec, X) @ state.w1.T
        H.append(_check(h, "forward", 1))
        for i in range(2, spec.L + 1):
            w, b = state.w[i - 2], state.b[i - 2]
            h = fc.acts[i - 2].f(h) @ w / w.shape[0] + b
            H.append(_check(h, "forward", i))
    else:
        h = spec.phi1(state.w1[None, :, :], X[:, None, :])
        H.append(_check(h, "forward", 1))
        for i in range(2, spec.L + 1):
            w, b = state.w[i - 2], state.b[i - 2]
            vals = spec.phi[i - 2](w[None, :, :], b[None, None, :], h[:, :, None])
            vals = np.broadcast_to(vals, (X.shape[0],) + w.shape)
            h = vals.mean(axis=1)
            H.append(_check(h, "forward", i))
    yhat = _check(_float(spec.phi_out(H[-1][:, 0])), "output", spec.L + 1)
    return ForwardCache(H, yhat, X)


def backward(state: State, spec: ArchitectureSpec, z, cache: ForwardCache,
             reduce: bool = False, fast: bool | None = None) -> BackwardBundle:
    """Backward recursion for samples ``z = (x, y)``.

    With ``reduce=True`` the weight and bias updates are averaged over the
    batch, which is the data expectation used by the particle dynamics.
    """
    _check_shapes(state, spec)
    x, y = z
    X = _batch(x, spec.dims["x"])
    Y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != cache.X.shape[0] or not np.array_equal(X, cache.X):
        raise ValueError("cache was produced for a different input")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("x and y batch sizes differ")
    B, L, H = X.shape[0], spec.L, cache.H

    dH = [None] * L
    dW = [None] * (L - 1)
    dB = [None] * (L - 1)
    dH[L - 1] = _check(np.asarray(spec.sigma_H_out(Y, cache.yhat, H[L - 1][:, 0]), float).reshape(B, 1),
                       "backward", L)
    if _use_fast(spec, fast):
        fc = spec.fc
        for i in range(L, 1, -1):
            w, b = state.w[i - 2], state.b[i - 2]
            act, Phi, Psi = fc.acts[i - 2], fc.Phi[i - 1], fc.Psi[i - 2]
            delta, hprev = dH[i - 1], H[i - 2]
            fh = act.f(hprev)
            if reduce:
                dW[i - 2] = fh.T @ delta / B + Phi.grad(w)
                dB[i - 2] = delta.mean(axis=0) + Psi.grad(b)
            else:
                dW[i - 2] = fh[:, :, None] * delta[:, None, :] + Phi.grad(w)[None]
                dB[i - 2] = delta + Psi.grad(b)[None]
            dH[i - 2] = _check(delta @ w.T / w.shape[1] * act.df(hprev), "backward", i - 1)
        A = _augment(spec, X)
        if reduce:
            dW1 = dH[0].T @ A / B + fc.Phi[0].grad(state.w1)
        else:
            dW1 = dH[0][:, :, None] * A[:, None, :] + fc.Phi[0].grad(state.w1)[None]
    else:
        for i in range(L, 1, -1):
            w, b = state.w[i - 2], state.b[i - 2]
            full = (B,) + w.shape
            args = (dH[i - 1][:, None, :], w[None, :, :], b[None, None, :], H[i - 1][:, None, :], H[i - 2][:, :, None])
            sw = np.broadcast_to(spec.sigma_w[i - 2](*args), full)
            sb = np.broadcast_to(spec.sigma_b[i - 2](*args), full).mean(axis=1)
            sh = np.broadcast_to(spec.sigma_H[i - 2](*args), full).mean(axis=2)
            dW[i - 2] = sw.mean(axis=0) if reduce else np.array(sw)
            dB[i - 2] = sb.mean(axis=0) if reduce else sb
            dH[i - 2] = _check(sh, "backward", i - 1)
        dW1 = spec.sigma_w1(dH[0], state.w1[None, :, :], X[:, None, :])
        dW1 = np.broadcast_to(dW1, (B,) + state.w1.shape)
        dW1 = dW1.mean(axis=0) if reduce else np.array(dW1)
    for i, a in enumerate(dW, start=2):
        _check(a, "weight update", i)
    for i, a in enumerate(dB, start=2):
        _check(a, "bias update", i)
    _check(dW1, "weight update", 1)
    return BackwardBundle(dH, dW1, dW, dB, reduced=reduce)


def mean_update(state: State, spec: ArchitectureSpec, X, Y, fast: bool | None = None) -> State:
    """Data-averaged updates ``E_Z[Delta]`` packed in a State-shaped container."""
    cache = forward(state, spec, X, fast=fast)
    return backward(state, spec, (X, Y), cache, reduce=True, fast=fast).as_state()


def regularized_loss(state: State, spec: ArchitectureSpec, x, y) -> np.ndarray:
    """Per-sample regularized loss of a fully-connected spec (1/n-normalized penalties)."""
    if spec.fc is None:
        raise ValueError("regularized loss is defined for fully-connected specs only")
    fc = spec.fc
    cache = forward(state, spec, x)
    Y = _float(y).reshape(-1)
    total = fc.loss.value(Y, cache.yhat)
    penalty = np.sum(fc.Phi[0].value(state.w1), axis=1).mean()
    for i in range(2, spec.L + 1):
        penalty += fc.Phi[i - 1].value(state.w[i - 2]).mean() + fc.Psi[i - 2].value(state.b[i - 2]).mean()
    return total + penalty


def grad_check(state: State, spec: ArchitectureSpec, z, step: float,
               max_params: int | None = None, seed: int = 0) -> float:
    """Largest relative error between the backward bundle and central finite differences.

    The bundle carries mean-field normalizations: ``Delta_i^w`` equals
    ``n_{i-1} n_i`` times the loss gradient, ``Delta_i^b`` equals ``n_i``
    times it and ``Delta_1^w`` equals ``n_1`` times it.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    x, y = z
    if _batch(x, spec.dims["x"]).shape[0] != 1:
        raise ValueError("grad_check takes a single sample")
    cache = forward(state, spec, x)
    bundle = backward(state, spec, (x, y), cache)
    analytic = bundle.as_state()
    widths = state.widths
    # differences are taken in extended precision so round-off stays below tiny gradients
    wide = np.longdouble
    x, y = np.asarray(x, dtype=wide), np.asarray(y, dtype=wide)
    arrays = [a.astype(wide) for a in state.arrays()]
    scales = [widths[0]] + [widths[i] * widths[i + 1] for i in range(state.L - 1)] \
        + [widths[i + 1] for i in range(state.L - 1)]
    entries = [(a_idx, idx) for a_idx, arr in enumerate(arrays) for idx in np.ndindex(arr.shape)]
    if max_params is not None and len(entries) > max_params:
        pick = np.random.default_rng(seed).choice(len(entries), size=max_params, replace=False)
        entries = [entries[k] for k in sorted(pick)]

    def loss_at(arrs):
        return regularized_loss(state.from_arrays(arrs), spec, x, y).sum()

    worst = 0.0
    an_arrays = analytic.arrays()
    for a_idx, idx in entries:
        orig = arrays[a_idx][idx]
        vals = []
        for k in (2, 1, -1, -2):
            arrays[a_idx][idx] = orig + k * step
            vals.append(loss_at(arrays))
        arrays[a_idx][idx] = orig
        # fourth-order central stencil: truncation O(step^4) allows steps large enough to tame round-off;
        # pairing the symmetric terms first keeps flat directions at exactly zero
        fd = (8 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12 * step) * scales[a_idx]
        err = abs(an_arrays[a_idx][idx] - fd) / (abs(fd) + 1e-12)
        worst = max(worst, float(err))
    return worst
