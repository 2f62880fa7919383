"""Two- and three-layer testbeds for global convergence of the gradient flow.

Both networks carry no biases: the input ends in a constant 1 coordinate
instead, the output passes through a final activation, and bias learning
rates are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .architecture import ArchitectureSpec, FcConfig, make_fc_architecture
from .coupling import InitLawSpec, sample_embedding
from .forward_backward import forward
from .keyed_rng import keyed_normal, keyed_uniform
from .mf_solver import particle_rhs
from .sgd import population_loss  # noqa: F401  re-exported
from .state import Dataset, State, TrajectoryLog

UNIVERSAL = ("tanh", "sigmoid", "gauss")
NONVANISHING = ("sleaky", "tanh", "linear")


@dataclass(frozen=True)
class ConvergenceConfig:
    which: str = "two_layer"  # two_layer | three_layer
    d1: int = 2  # input dimension, counting the trailing constant coordinate
    widths: tuple = (500, 1)
    phi1: str = "tanh"
    phi2: str = "linear"
    phi3: str = "linear"
    loss: str = "huber(1)"
    teacher: str = "net(3)"  # net(m): random width-m network of the same family; zero; noisy(sigma)
    dataset_size: int = 64
    T: float = 50.0
    dt: float = 1e-2
    scheme: str = "rk4"
    freeze_w3: bool = False
    xi: str = "const(1)"
    init_w1: str = "gaussian(0,1)"
    init_w2: str = "gaussian(0,1)"
    init_w3: str = "uniform(0.5,1.5)"

    def __post_init__(self):
        if self.which not in ("two_layer", "three_layer"):
            raise ValueError(f"unknown system {self.which!r}")
        L = 2 if self.which == "two_layer" else 3
        if len(self.widths) != L or self.widths[-1] != 1:
            raise ValueError(f"{self.which} needs {L} widths ending in 1")
        if self.d1 < 2:
            raise ValueError("d1 counts the constant coordinate and must be >= 2")
        if self.phi1.split("(")[0] not in UNIVERSAL:
            raise ValueError(f"first activation must be one of {UNIVERSAL}")
        for a in (self.phi2, self.phi3) if L == 3 else (self.phi2,):
            if a.split("(")[0] not in NONVANISHING:
                raise ValueError(f"activation {a!r} must have a nonvanishing derivative: one of {NONVANISHING}")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be positive")
        if self.freeze_w3 and L != 3:
            raise ValueError("freeze_w3 applies to the three-layer system")

    @property
    def L(self) -> int:
        return 2 if self.which == "two_layer" else 3

    def law(self) -> InitLawSpec:
        w = (self.init_w1, self.init_w2) + ((self.init_w3,) if self.L == 3 else ())
        return InitLawSpec(w, ("point(0)",) * (self.L - 1))


def make_convergence_spec(cfg: ConvergenceConfig) -> ArchitectureSpec:
    L = cfg.L
    acts = (cfg.phi1,) if L == 2 else (cfg.phi1, cfg.phi2)
    out = cfg.phi2 if L == 2 else cfg.phi3
    xi_w = [cfg.xi] * L
    if cfg.freeze_w3:
        xi_w[2] = "zero"
    return make_fc_architecture(FcConfig(
        d=cfg.d1, widths=tuple(cfg.widths), activations=acts, loss=cfg.loss, output_activation=out,
        input_bias=False, xi_w=xi_w, xi_b="zero"))


def _teacher_state(cfg: ConvergenceConfig, m: int, seed: int) -> State:
    # keys with a leading 7 keep teacher draws apart from the student's embedding keys
    w1 = keyed_normal(seed, 7, 1, np.arange(m)[:, None], np.arange(cfg.d1)[None, :])
    if cfg.L == 2:
        w2 = 2.0 * keyed_normal(seed, 7, 2, np.arange(m)[:, None], 0)
        return State(w1, (w2,), (np.zeros(1),))
    w2 = 2.0 * keyed_normal(seed, 7, 2, np.arange(m)[:, None], np.arange(m)[None, :])
    w3 = 0.5 + keyed_uniform(seed, 7, 3, np.arange(m)[:, None], 0)
    return State(w1, (w2, w3), (np.zeros(m), np.zeros(1)))


def build_convergence_system(cfg: ConvergenceConfig, seed: int):
    """(initial particle state, spec, dataset) for one seed."""
    spec = make_convergence_spec(cfg)
    N, d = cfg.dataset_size, cfg.d1
    z = keyed_normal(seed, 9, np.arange(N)[:, None], np.arange(d - 1)[None, :])
    X = np.concatenate([z, np.ones((N, 1))], axis=1)
    name = cfg.teacher.split("(")[0]
    arg = cfg.teacher[len(name) + 1:-1] if "(" in cfg.teacher else ""
    if name == "zero":
        Y = np.zeros(N)
    elif name == "net":
        m = int(arg or 3)
        teacher_spec = make_convergence_spec(
            ConvergenceConfig(**{**cfg.__dict__, "widths": (m, 1) if cfg.L == 2 else (m, m, 1)}))
        Y = forward(_teacher_state(cfg, m, seed), teacher_spec, X).yhat
    elif name == "noisy":
        sigma = float(arg or 0.1)
        Y = np.tanh(X[:, 0]) + sigma * keyed_normal(seed, 8, np.arange(N))
    else:
        raise ValueError(f"unknown teacher {cfg.teacher!r}")
    table = sample_embedding(cfg.law(), tuple(cfg.widths), seed, d)
    return table.state(), spec, Dataset(X, Y)


def baseline_loss(spec: ArchitectureSpec, dataset: Dataset) -> float:
    """E_Z[loss(Y, phi_out(0))]: the loss of the network whose last hidden value is 0."""
    yhat0 = np.full(len(dataset), float(spec.fc.out.f(np.zeros(1))[0]))
    return float(np.mean(spec.fc.loss.value(dataset.Y, yhat0)))


def support_centers(dw: int, count: int = 20, radius: float = 2.0, seed: int = 0) -> np.ndarray:
    """Fixed ball centers, uniform in the ball of the given radius."""
    g = keyed_normal(seed, 11, np.arange(count)[:, None], np.arange(dw)[None, :])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * keyed_uniform(seed, 12, np.arange(count)) ** (1.0 / dw)
    return g * r[:, None]


def support_coverage(w1: np.ndarray, centers: np.ndarray, ball_radius: float = 0.5) -> float:
    """Fraction of balls holding at least one first-layer particle."""
    dist = np.linalg.norm(w1[None, :, :] - centers[:, None, :], axis=2)
    return float(np.mean(np.any(dist <= ball_radius, axis=1)))


@dataclass
class ConvergenceReport:
    times: np.ndarray
    loss_curve: np.ndarray
    final_loss: float
    baseline_loss: float
    drift: np.ndarray
    support_probe: np.ndarray
    notes: dict = field(default_factory=dict)

    def monotone(self, tol: float = 1e-8) -> bool:
        return bool(np.all(np.diff(self.loss_curve) <= tol))

    def drift_tail_decreasing(self) -> bool:
        T = self.times[-1]
        a = self.drift[(self.times >= T / 2) & (self.times < 3 * T / 4)]
        b = self.drift[self.times >= 3 * T / 4]
        return bool(len(a) and len(b) and b.mean() < a.mean())

    def stays_below_baseline(self) -> bool:
        """True unless the run starts below the baseline and later reaches it."""
        if self.loss_curve[0] >= self.baseline_loss:
            return True
        return bool(np.all(self.loss_curve < self.baseline_loss))


def convergence_diagnostics(log: TrajectoryLog, spec: ArchitectureSpec, dataset: Dataset,
                            centers: np.ndarray | None = None) -> ConvergenceReport:
    if centers is None:
        centers = support_centers(spec.dims["w1"])
    losses, drift, cover = [], [], []
    for t, s in zip(log.times, log.states):
        losses.append(population_loss(s, spec, dataset))
        drift.append(float(np.max(np.abs(particle_rhs(s, spec, dataset, t).w[0]))))
        cover.append(support_coverage(s.w1, centers))
    losses = np.array(losses)
    return ConvergenceReport(np.array(log.times), losses, float(losses[-1]), baseline_loss(spec, dataset),
                             np.array(drift), np.array(cover))


# ---------------------------------------------------------------------------
# weak form of the two-layer continuity equation


class TestFunction:
    """psi(u1, u2) on (first-layer row, second-layer weight) with its gradient."""

    __test__ = False

    def value(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, u1: np.ndarray, u2: np.ndarray):
        raise NotImplementedError


class ConstantPsi(TestFunction):
    def __init__(self, c: float = 1.0):
        self.c = c

    def value(self, u1, u2):
        return np.full(u2.shape, self.c)

    def grad(self, u1, u2):
        return np.zeros_like(u1), np.zeros_like(u2)


class ClampedU2(TestFunction):
    """clip(u2, -c, c); smooth wherever no particle sits at the clamp."""

    def __init__(self, c: float = 10.0):
        self.c = c

    def value(self, u1, u2):
        return np.clip(u2, -self.c, self.c)

    def grad(self, u1, u2):
        return np.zeros_like(u1), (np.abs(u2) < self.c).astype(float)


class GaussianBump(TestFunction):
    def __init__(self, center1, center2: float, width: float = 1.0):
        self.c1 = np.asarray(center1, dtype=float)
        self.c2 = float(center2)
        self.s2 = width ** 2

    def value(self, u1, u2):
        r2 = np.sum((u1 - self.c1) ** 2, axis=1) + (u2 - self.c2) ** 2
        return np.exp(-0.5 * r2 / self.s2)

    def grad(self, u1, u2):
        v = self.value(u1, u2)
        return -(u1 - self.c1) * (v / self.s2)[:, None], -(u2 - self.c2) * v / self.s2


def weak_pde_residual(log: TrajectoryLog, spec: ArchitectureSpec, dataset: Dataset, psi: TestFunction,
                      t: float, dt_probe: float) -> float:
    """|d/dt mean_j psi + mean_j <grad psi, G>| at time t, on the empirical particle measure.

    G is the data-averaged update scaled by the learning rates, so particles move
    with velocity -G; the time derivative is a central difference at ``dt_probe``.
    """
    if spec.L != 2:
        raise ValueError("the weak residual is defined for two-layer particle runs")
    if not dt_probe > 0:
        raise ValueError("dt_probe must be positive")
    if t - dt_probe < log.times[0] - 1e-12 or t + dt_probe > log.times[-1] + 1e-12:
        raise ValueError("central difference needs snapshots on both sides of t")
    try:
        lo, mid, hi = (log.state_at(s) for s in (t - dt_probe, t, t + dt_probe))
    except KeyError as err:
        raise ValueError(f"log lacks a probe snapshot: {err}") from None

    def avg(s):
        return float(np.mean(psi.value(s.w1, s.w[0][:, 0])))

    ddt = (avg(hi) - avg(lo)) / (2 * dt_probe)
    velocity = particle_rhs(mid, spec, dataset, t)  # equals -G
    g1, g2 = psi.grad(mid.w1, mid.w[0][:, 0])
    transport = -np.mean(np.sum(g1 * velocity.w1, axis=1) + g2 * velocity.w[0][:, 0])
    return abs(ddt + transport)

