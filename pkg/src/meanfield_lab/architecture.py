"""Layer maps, backward maps and the fully-connected instantiation.

Array conventions used by every callable stored on an :class:`ArchitectureSpec`:

* scalar-valued quantities (weights of layers >= 2, biases, hidden values,
  backward signals) are plain broadcastable arrays;
* vector-valued quantities (first-layer weights, inputs) carry one trailing
  coordinate axis.

So ``phi1(w, x)`` maps ``(..., dw)`` and ``(..., dx)`` to ``(...)`` and
``sigma_w1(delta, w, x)`` maps ``(...)``, ``(..., dw)``, ``(..., dx)`` to
``(..., dw)``. All callables are pure; specs are immutable.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .keyed_rng import keyed_uniform

_CALL_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_call(text: str) -> tuple[str, list[float]]:
    """Split ``"name(a,b)"`` into ``("name", [a, b])``."""
    m = _CALL_RE.match(text)
    if m is None:
        raise ValueError(f"cannot parse {text!r}")
    name, args = m.group(1).lower(), m.group(2)
    if args is None or not args.strip():
        return name, []
    return name, [float(a) for a in args.split(",")]


# ---------------------------------------------------------------------------
# activations, losses, regularizers, schedules


@dataclass(frozen=True)
class Activation:
    name: str
    f: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    df: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def make_activation(text: str) -> Activation:
    """Activation from its config string: tanh, sigmoid, gauss, sleaky(a), leaky(a), linear."""
    name, args = parse_call(text)
    if name == "tanh":
        return Activation(text, np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)
    if name == "sigmoid":
        return Activation(text, _sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)))
    if name == "gauss":
        def f(x):
            return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))
        return Activation(text, f, lambda x: -x * f(x))
    if name == "sleaky":
        # a*x + (1-a)*softplus(x): slope runs smoothly from a to 1
        a = args[0] if args else 0.1
        return Activation(
            text,
            lambda x: a * x + (1.0 - a) * np.logaddexp(0.0, x),
            lambda x: a + (1.0 - a) * _sigmoid(x),
        )
    if name == "leaky":
        a = args[0] if args else 0.1
        return Activation(
            text,
            lambda x: np.where(x > 0, x, a * x),
            lambda x: np.where(x > 0, 1.0, a),
        )
    if name == "linear":
        return Activation(text, lambda x: 1.0 * x, lambda x: np.ones_like(x, dtype=float))
    raise ValueError(f"unknown activation {text!r}")


@dataclass(frozen=True)
class Loss:
    """A loss ``L(y, yhat)`` with its derivative in the second argument."""

    name: str
    value: Callable = field(repr=False, compare=False)
    d2: Callable = field(repr=False, compare=False)
    max_audit_radius: float = math.inf


def make_loss(text: str) -> Loss:
    name, args = parse_call(text)
    if name == "huber":
        delta = args[0] if args else 1.0

        def value(y, yhat):
            r = np.abs(yhat - y)
            return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))

        return Loss(text, value, lambda y, yhat: np.clip(yhat - y, -delta, delta))
    if name == "squared":
        return Loss(text, lambda y, yhat: 0.5 * np.square(yhat - y), lambda y, yhat: yhat - y)
    if name == "exp":
        return Loss(
            text,
            lambda y, yhat: np.exp(-y * yhat),
            lambda y, yhat: -y * np.exp(-y * yhat),
            max_audit_radius=20.0,
        )
    if name == "const":
        # zero loss: leaves only regularizer terms, used for closed-form decay systems
        return Loss(text, lambda y, yhat: np.zeros(np.broadcast(y, yhat).shape),
                    lambda y, yhat: np.zeros(np.broadcast(y, yhat).shape))
    raise ValueError(f"unknown loss {text!r}")


@dataclass(frozen=True)
class Regularizer:
    name: str
    lam: float = 0.0

    def value(self, w):
        return 0.5 * self.lam * np.square(w)

    def grad(self, w):
        return self.lam * w


def make_regularizer(text: str) -> Regularizer:
    name, args = parse_call(text)
    if name == "none":
        return Regularizer(text, 0.0)
    if name == "quad":
        if len(args) != 1:
            raise ValueError("quad regularizer needs one coefficient")
        return Regularizer(text, args[0])
    raise ValueError(f"unknown regularizer {text!r}")


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule; ``const(c)`` or ``lindecay(c, tau)``."""

    text: str = "const(1)"

    def __post_init__(self):
        name, args = parse_call(self.text)
        if name not in ("const", "lindecay", "zero"):
            raise ValueError(f"unknown schedule {self.text!r}")

    def __call__(self, t: float) -> float:
        name, args = parse_call(self.text)
        if name == "zero":
            return 0.0
        if name == "const":
            return args[0] if args else 1.0
        c, tau = args
        return c * max(0.0, 1.0 - t / tau)

    @property
    def is_zero(self) -> bool:
        name, args = parse_call(self.text)
        return name == "zero" or (name == "const" and bool(args) and args[0] == 0.0)


# ---------------------------------------------------------------------------
# the general architecture


@dataclass(frozen=True)
class FcParts:
    """Ingredients of a fully-connected spec, exposed for the matmul fast path."""

    acts: tuple[Activation, ...]  # varphi_1 .. varphi_{L-1}
    out: Activation
    input_bias: bool
    loss: Loss
    Phi: tuple[Regularizer, ...]  # layers 1..L
    Psi: tuple[Regularizer, ...]  # layers 2..L


@dataclass(frozen=True)
class ArchitectureSpec:
    L: int
    dims: dict
    phi1: Callable
    phi: tuple  # phi_i for i = 2..L
    phi_out: Callable
    sigma_H_out: Callable
    sigma_w: tuple  # i = 2..L
    sigma_b: tuple
    sigma_H: tuple  # sigma_{i-1}^H for i = 2..L
    sigma_w1: Callable
    xi_w: tuple  # i = 1..L
    xi_b: tuple  # i = 2..L
    growth_p: float = 2.0
    fc: FcParts | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("need at least two layers")
        for label, seq, n in (("phi", self.phi, self.L - 1), ("sigma_w", self.sigma_w, self.L - 1),
                              ("sigma_b", self.sigma_b, self.L - 1), ("sigma_H", self.sigma_H, self.L - 1),
                              ("xi_w", self.xi_w, self.L), ("xi_b", self.xi_b, self.L - 1)):
            if len(seq) != n:
                raise ValueError(f"{label} has {len(seq)} entries, expected {n}")
        if self.growth_p < 1:
            raise ValueError("growth parameter must be >= 1")

    def xiw(self, i: int, t: float) -> float:
        return self.xi_w[i - 1](t)

    def xib(self, i: int, t: float) -> float:
        return self.xi_b[i - 2](t)

    def with_schedules(self, xi_w=None, xi_b=None) -> "ArchitectureSpec":
        from dataclasses import replace
        return replace(self, xi_w=tuple(xi_w) if xi_w is not None else self.xi_w,
                       xi_b=tuple(xi_b) if xi_b is not None else self.xi_b)


def _per_layer(value, n: int, label: str) -> list:
    if isinstance(value, (str, Schedule)):
        return [value] * n
    value = list(value)
    if len(value) != n:
        raise ValueError(f"{label}: expected {n} entries, got {len(value)}")
    return value


def _as_schedule(s) -> Schedule:
    return s if isinstance(s, Schedule) else Schedule(s)


@dataclass(frozen=True)
class FcConfig:
    d: int
    widths: tuple
    activations: object = "tanh"  # one name or L-1 names
    loss: str = "huber(1)"
    Phi: object = "none"  # one name or L names
    Psi: object = "none"  # one name or L-1 names
    output_activation: str = "linear"
    input_bias: bool = True
    xi_w: object = "const(1)"
    xi_b: object = "const(1)"
    growth_p: float = 2.0
    audited: bool = False

    @property
    def L(self) -> int:
        return len(self.widths)


def make_fc_architecture(cfg: FcConfig) -> ArchitectureSpec:
    """Fully-connected network of any depth in the general layer-map form."""
    widths = tuple(int(n) for n in cfg.widths)
    L = len(widths)
    if L < 2:
        raise ValueError("fully-connected spec needs L >= 2")
    if any(n < 1 for n in widths) or widths[-1] != 1:
        raise ValueError(f"widths must be >= 1 with last width 1, got {widths}")
    if cfg.d < 1:
        raise ValueError("input dimension must be >= 1")

    acts = tuple(make_activation(a) for a in _per_layer(cfg.activations, L - 1, "activations"))
    out = make_activation(cfg.output_activation)
    loss = make_loss(cfg.loss)
    Phi = tuple(make_regularizer(r) for r in _per_layer(cfg.Phi, L, "Phi"))
    Psi = tuple(make_regularizer(r) for r in _per_layer(cfg.Psi, L - 1, "Psi"))
    d = cfg.d
    dw = d + 1 if cfg.input_bias else d

    def phi1(w, x):
        if w.shape[-1] != dw or x.shape[-1] != d:
            raise ValueError(f"phi1: expected w[..., {dw}] and x[..., {d}], got {w.shape}, {x.shape}")
        if cfg.input_bias:
            return np.sum(w[..., :d] * x, axis=-1) + w[..., d]
        return np.sum(w * x, axis=-1)

    def augment(x):
        if not cfg.input_bias:
            return x
        return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)

    def sigma_w1(delta, w, x):
        if w.shape[-1] != dw or x.shape[-1] != d:
            raise ValueError("sigma_w1: dimension mismatch")
        return np.asarray(delta)[..., None] * augment(x) + Phi[0].grad(w)

    def make_layer(i):
        act, Phi_i, Psi_i = acts[i - 2], Phi[i - 1], Psi[i - 2]

        def phi_i(w, b, h):
            return w * act.f(h) + b

        def sigma_w(delta, w, b, g, h):
            return delta * act.f(h) + Phi_i.grad(w)

        def sigma_b(delta, w, b, g, h):
            return delta + Psi_i.grad(b) + 0.0 * w

        def sigma_H(delta, w, b, g, h):
            return delta * w * act.df(h)

        return phi_i, sigma_w, sigma_b, sigma_H

    layers = [make_layer(i) for i in range(2, L + 1)]

    def sigma_H_out(y, yhat, h):
        return loss.d2(y, yhat) * out.df(h)

    spec = ArchitectureSpec(
        L=L,
        dims={"x": d, "w1": dw, "h": 1, "w": 1, "b": 1, "y": 1, "yhat": 1, "widths": widths},
        phi1=phi1,
        phi=tuple(l[0] for l in layers),
        phi_out=out.f,
        sigma_H_out=sigma_H_out,
        sigma_w=tuple(l[1] for l in layers),
        sigma_b=tuple(l[2] for l in layers),
        sigma_H=tuple(l[3] for l in layers),
        sigma_w1=sigma_w1,
        xi_w=tuple(_as_schedule(s) for s in _per_layer(cfg.xi_w, L, "xi_w")),
        xi_b=tuple(_as_schedule(s) for s in _per_layer(cfg.xi_b, L - 1, "xi_b")),
        growth_p=cfg.growth_p,
        fc=FcParts(acts, out, cfg.input_bias, loss, Phi, Psi),
        name="fc",
    )
    if cfg.audited:
        report = audit_assumptions(spec, 2000, 1.0, 0)
        failed = [p.name for p in report.probes if p.assumption in ("forward", "backward") and not p.passed]
        if failed:
            raise ValueError(f"architecture fails assumption audit: {failed}")
    return spec


def make_decay_architecture(widths=(1, 1), d: int = 1, rate: float = 1.0, xi: str = "const(1)") -> ArchitectureSpec:
    """Zero loss with quad(rate) penalties everywhere: every parameter solves ``w' = -rate * w``."""
    reg = f"quad({rate})"
    return make_fc_architecture(FcConfig(d=d, widths=tuple(widths), loss="const", Phi=reg, Psi=reg,
                                         input_bias=False, xi_w=xi, xi_b=xi))


# ---------------------------------------------------------------------------
# assumption audit


@dataclass
class ProbeResult:
    name: str
    assumption: str
    constants: list  # estimated K at each probe radius
    passed: bool
    note: str = ""
    offending: object = None


@dataclass
class AuditReport:
    radii: list
    probes: list
    kinks: dict

    def passed(self, assumption: str | None = None) -> bool:
        return all(p.passed for p in self.probes if assumption is None or p.assumption == assumption)

    def probe(self, name: str) -> ProbeResult:
        for p in self.probes:
            if p.name == name:
                return p
        raise KeyError(name)


def audit_assumptions(spec: ArchitectureSpec, sample_count: int, radius: float, rng_seed: int,
                      growth_factor: float = 10.0, threshold: float = 1e8,
                      radius_ladder: Sequence[float] = (1.0, 10.0, 100.0)) -> AuditReport:
    """Sampling-based falsifier for the growth and Lipschitz bounds.

    For each bound the smallest admissible constant is estimated on random
    argument pairs inside balls of growing radius. A bound fails when an
    evaluation is non-finite, when the estimated constant exceeds
    ``threshold``, or when it keeps growing with the radius (by more than
    ``growth_factor`` across the ladder), which is how unbounded behaviour
    shows up at finite radius. Passing is not a proof.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    p = spec.growth_p
    m = int(sample_count)
    dx, dw = spec.dims["x"], spec.dims["w1"]
    probes: list[ProbeResult] = []

    def scal(key, r):
        return (2.0 * keyed_uniform(rng_seed, key, np.arange(m)) - 1.0) * r

    def vec(key, r, dim):
        u = keyed_uniform(rng_seed, key, np.arange(m)[:, None], np.arange(dim)[None, :])
        return (2.0 * u - 1.0) * r / math.sqrt(dim)

    def pair(key, r, dim=None):
        # half of the pairs are close together to expose local Lipschitz constants
        a = scal(key, r) if dim is None else vec(key, r, dim)
        b = scal(key + 1, r) if dim is None else vec(key + 1, r, dim)
        shift = 1e-3 * (scal(key + 2, r) if dim is None else vec(key + 2, r, dim))
        half = (np.arange(m) < m // 2).reshape((m,) + (1,) * (a.ndim - 1))
        return a, np.where(half, a + shift, b)

    def nrm(v, vector=False):
        return np.linalg.norm(v, axis=-1) if vector else np.abs(v)

    def run(name, assumption, fn, radius_cap=math.inf):
        consts, note, offending, ok = [], "", None, True
        for k, scale in enumerate(radius_ladder):
            r = min(radius * scale, radius_cap)
            with np.errstate(all="ignore"):
                num, den = fn(r, 1000 * k)
            num, den = np.asarray(num, float), np.asarray(den, float)
            bad = ~np.isfinite(num) | ~np.isfinite(den)
            if bad.any():
                idx = int(np.flatnonzero(bad)[0])
                ok, note, offending = False, "non-finite evaluation", {"radius": r, "sample": idx}
                consts.append(math.inf)
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
            consts.append(float(ratio.max()))
        if ok:
            if max(consts) > threshold:
                ok, note = False, "constant above threshold"
            elif consts[-1] > growth_factor * max(consts[0], 1e-12):
                ok, note = False, "estimated constant grows with radius (unbounded)"
        probes.append(ProbeResult(name, assumption, consts, ok, note, offending))

    # learning-rate schedules
    for label, seq, start in (("xi_w", spec.xi_w, 1), ("xi_b", spec.xi_b, 2)):
        for i, s in enumerate(seq, start=start):
            def bound(r, k, s=s):
                t = np.abs(scal(11 + k, 100 * r))
                return np.array([abs(s(ti)) for ti in t]), np.ones(m)

            def lip(r, k, s=s):
                t, t2 = pair(13 + k, 100 * r)
                t, t2 = np.abs(t), np.abs(t2)
                return np.array([abs(s(a) - s(b)) for a, b in zip(t, t2)]), np.abs(t - t2)

            run(f"{label}[{i}] bound", "schedule", bound)
            run(f"{label}[{i}] lipschitz", "schedule", lip)

    # forward maps; inputs x stay in the base ball since the bounds need only hold on the data
    def phi1_growth(r, k):
        w, x = vec(21 + k, r, dw), vec(23 + k, radius, dx)
        return np.abs(spec.phi1(w, x)), K1(nrm(w, True))

    def phi1_lip(r, k):
        w, w2 = pair(25 + k, r, dw)
        x = vec(28 + k, radius, dx)
        return np.abs(spec.phi1(w, x) - spec.phi1(w2, x)), nrm(w - w2, True)

    def K1(a):
        return 1.0 + a

    run("phi_1 growth", "forward", phi1_growth)
    run("phi_1 lipschitz", "forward", phi1_lip)
    for i in range(2, spec.L + 1):
        f = spec.phi[i - 2]

        def growth(r, k, f=f):
            w, b, h = scal(31 + k, r), scal(32 + k, r), scal(33 + k, r)
            return np.abs(f(w, b, h)), 1 + np.abs(w) ** p + np.abs(b) ** p + np.abs(h) ** p

        def lip(r, k, f=f):
            (w, w2), (b, b2), (h, h2) = pair(34 + k, r), pair(37 + k, r), pair(40 + k, r)
            poly = 1 + sum(np.abs(a) ** p for a in (w, w2, b, b2, h, h2))
            return np.abs(f(w, b, h) - f(w2, b2, h2)), poly * (np.abs(w - w2) + np.abs(b - b2) + np.abs(h - h2))

        run(f"phi_{i} growth", "forward", growth)
        run(f"phi_{i} lipschitz", "forward", lip)

    def out_growth(r, k):
        h = scal(51 + k, r)
        return np.abs(spec.phi_out(h)), 1 + np.abs(h) ** p

    def out_lip(r, k):
        h, h2 = pair(52 + k, r)
        return np.abs(spec.phi_out(h) - spec.phi_out(h2)), (1 + np.abs(h) ** p + np.abs(h2) ** p) * np.abs(h - h2)

    run(f"phi_{spec.L + 1} growth", "forward", out_growth)
    run(f"phi_{spec.L + 1} lipschitz", "forward", out_lip)

    # backward maps
    def s1_growth(r, k):
        dl, w, x = scal(61 + k, r), vec(62 + k, r, dw), vec(63 + k, radius, dx)
        return nrm(spec.sigma_w1(dl, w, x), True), 1 + np.abs(dl) ** p

    def s1_lip(r, k):
        (dl, dl2), (w, w2) = pair(64 + k, r), pair(67 + k, r, dw)
        x = vec(70 + k, radius, dx)
        num = nrm(spec.sigma_w1(dl, w, x) - spec.sigma_w1(dl2, w2, x), True)
        return num, (1 + np.abs(dl) ** p + np.abs(dl2) ** p) * (np.abs(dl - dl2) + nrm(w - w2, True))

    run("sigma_1^w growth", "backward", s1_growth)
    run("sigma_1^w lipschitz", "backward", s1_lip)
    for i in range(2, spec.L + 1):
        sw, sb, sH = spec.sigma_w[i - 2], spec.sigma_b[i - 2], spec.sigma_H[i - 2]

        def args(r, k):
            return [pair(80 + 3 * j + k, r) for j in range(5)]

        def wb_growth(r, k, sw=sw, sb=sb):
            dl, w, b, g, h = (a for a, _ in args(r, k))
            return np.maximum(np.abs(sw(dl, w, b, g, h)), np.abs(sb(dl, w, b, g, h))), 1 + np.abs(dl) ** p

        def wb_lip(r, k, sw=sw, sb=sb):
            (dl, dl2), (w, w2), (b, b2), (g, g2), (h, h2) = args(r, k)
            num = np.maximum(np.abs(sw(dl, w, b, g, h) - sw(dl2, w2, b2, g2, h2)),
                             np.abs(sb(dl, w, b, g, h) - sb(dl2, w2, b2, g2, h2)))
            dist = sum(np.abs(a - c) for a, c in ((dl, dl2), (w, w2), (b, b2), (g, g2), (h, h2)))
            return num, (1 + np.abs(dl) ** p + np.abs(dl2) ** p) * dist

        def h_growth(r, k, sH=sH):
            dl, w, b, g, h = (a for a, _ in args(r, k))
            return np.abs(sH(dl, w, b, g, h)), 1 + np.abs(dl) ** p + np.abs(w) ** p + np.abs(b) ** p

        def h_lip(r, k, sH=sH):
            (dl, dl2), (w, w2), (b, b2), (g, g2), (h, h2) = args(r, k)
            num = np.abs(sH(dl, w, b, g, h) - sH(dl2, w2, b2, g2, h2))
            poly = 1 + sum(np.abs(a) ** p for a in (dl, dl2, w, w2, b, b2))
            dist = sum(np.abs(a - c) for a, c in ((dl, dl2), (w, w2), (b, b2), (g, g2), (h, h2)))
            return num, poly * dist

        run(f"sigma_{i}^w,b growth", "backward", wb_growth)
        run(f"sigma_{i}^w,b lipschitz", "backward", wb_lip)
        run(f"sigma_{i - 1}^H growth", "backward", h_growth)
        run(f"sigma_{i - 1}^H lipschitz", "backward", h_lip)

    cap = spec.fc.loss.max_audit_radius if spec.fc is not None else math.inf

    def sL_bound(r, k):
        y, yh, h = scal(121 + k, r), scal(122 + k, r), scal(123 + k, r)
        return np.abs(spec.sigma_H_out(y, yh, h)), np.ones(m)

    def sL_lip(r, k):
        y = scal(124 + k, r)
        (yh, yh2), (h, h2) = pair(125 + k, r), pair(128 + k, r)
        return np.abs(spec.sigma_H_out(y, yh, h) - spec.sigma_H_out(y, yh2, h2)), np.abs(h - h2) + np.abs(yh - yh2)

    run(f"sigma_{spec.L}^H bound", "backward", sL_bound, radius_cap=cap)
    run(f"sigma_{spec.L}^H lipschitz", "backward", sL_lip, radius_cap=cap)

    kinks = {}
    if spec.fc is not None:
        grid = np.linspace(-radius, radius, 10001)
        eta = 1e-7
        for idx, act in enumerate(spec.fc.acts + (spec.fc.out,)):
            label = f"varphi_{idx + 1}" if idx < len(spec.fc.acts) else "output"
            jump = np.abs(act.df(grid + eta) - act.df(grid - eta))
            if jump.max() > 1e-3:
                kinks[label] = float(grid[int(jump.argmax())])
    return AuditReport([radius * s for s in radius_ladder], probes, kinks)
