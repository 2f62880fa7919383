"""Named experiments, their default parameter blocks, and the results writer."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .architecture import FcConfig, make_decay_architecture, make_fc_architecture
from .convergence import (ClampedU2, ConstantPsi, ConvergenceConfig, GaussianBump, build_convergence_system,
                          convergence_diagnostics, weak_pde_residual)
from .coupling import InitLawSpec, clamped_identity, couple, sample_embedding, test_function_gap, traj_distance
from .forward_backward import grad_check
from .keyed_rng import keyed_normal
from .mf_solver import TimeGrid, integrate_particle, picard_solve
from .reduced import (QuadratureMeasure, duplicate_neuron, duplication_gap, iid_atom_init, integrate_reduced,
                      reduced_vs_particle_gap, translation_profile)
from .sgd import SgdConfig, train_sgd
from .state import Dataset, State

VERSION = "0.1.0"
HEADER = ["experiment", "seed", "knob", "knob_value", "metric", "value"]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared builders


def synthetic_dataset(size: int, d: int, seed: int, target: str = "tanh") -> Dataset:
    """Gaussian inputs with labels from a fixed smooth target."""
    X = keyed_normal(seed, 21, np.arange(size)[:, None], np.arange(d)[None, :])
    a = keyed_normal(seed, 22, np.arange(d))
    if target == "tanh":
        Y = np.tanh(X @ a + 0.5)
    elif target == "sin":
        Y = np.sin(X @ a)
    elif target == "zero":
        Y = np.zeros(size)
    else:
        raise ConfigError(f"unknown dataset target {target!r}")
    return Dataset(X, Y)


def fc_spec(arch: dict, widths):
    keys = {"d", "activations", "loss", "Phi", "Psi", "output_activation", "input_bias", "xi_w", "xi_b"}
    extra = set(arch) - keys - {"widths"}
    if extra:
        raise ConfigError(f"unknown architecture keys {sorted(extra)}")
    return make_fc_architecture(FcConfig(widths=tuple(widths), **{k: arch[k] for k in arch if k in keys}))


def law_spec(law: dict, L: int) -> InitLawSpec:
    w = law.get("weights") or [law.get("w1", "gaussian(0,1)")] + [law.get("w", "gaussian(0,1)")] * (L - 1)
    b = law.get("biases") or [law.get("b", "point(0)")] * (L - 2) + [law.get("bL", "point(0)")]
    return InitLawSpec(tuple(w), tuple(b), bool(law.get("require_bounded", False)))


def _dw(spec) -> int:
    return spec.dims["w1"]


def _dataset(p: dict, d: int) -> Dataset:
    ds = p["dataset"]
    return synthetic_dataset(int(ds.get("size", 64)), d, int(ds.get("seed", 0)), ds.get("target", "tanh"))


def fit_loglog_slope(rows) -> tuple[float, float]:
    """Least-squares slope of log(metric) against log(knob), with its standard error."""
    rows = [(float(k), float(m)) for k, m in rows]
    if any(m <= 0 for _, m in rows) or any(k <= 0 for k, _ in rows):
        raise ValueError("log-log fit needs positive knobs and metrics")
    if len({k for k, _ in rows}) < 3:
        raise ValueError("log-log fit needs at least 3 distinct knob values")
    x = np.log([k for k, _ in rows])
    y = np.log([m for _, m in rows])
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def _median_rows(name, rows, knob, metric, agg_metric):
    """Median over seeds per knob value, plus the slope when at least 3 knobs exist."""
    by_knob = {}
    for r in rows:
        if r[2] == knob and r[4] == metric:
            by_knob.setdefault(r[3], []).append(r[5])
    out = [(name, "median", knob, k, agg_metric, float(np.median(v))) for k, v in sorted(by_knob.items())]
    if len(by_knob) >= 3 and all(r[5] > 0 for r in out):
        slope, err = fit_loglog_slope([(r[3], r[5]) for r in out])
        out += [(name, "median", knob, "", agg_metric + "_slope", slope),
                (name, "median", knob, "", agg_metric + "_slope_stderr", err)]
    return out


# ---------------------------------------------------------------------------
# experiments: each maps (params, seed) to rows (knob, knob_value, metric, value)
# and optional trajectory tables


def exp_gradcheck(p, seed):
    rng = np.random.default_rng(seed)
    rows, worst = [], 0.0
    for k in range(int(p["instances"])):
        L = int(rng.integers(2, 6))
        widths = tuple(int(n) for n in rng.integers(1, int(p["max_width"]) + 1, size=L - 1)) + (1,)
        d = int(rng.integers(1, 4))
        reg = bool(rng.integers(0, 2))
        spec = make_fc_architecture(FcConfig(
            d=d, widths=widths, activations=p["activation"], loss=p["loss"],
            Phi="quad(0.3)" if reg else "none", Psi="quad(0.2)" if reg else "none"))
        state = State(rng.normal(size=(widths[0], d + 1)),
                      tuple(rng.normal(size=(widths[i], widths[i + 1])) for i in range(L - 1)),
                      tuple(rng.normal(size=widths[i + 1]) for i in range(L - 1)))
        z = (rng.normal(size=d), rng.normal())
        err = grad_check(state, spec, z, float(p["step"]))
        worst = max(worst, err)
        rows.append(("instance", k, "rel_error", err))
    rows.append(("", "", "max_rel_error", worst))
    return rows, {}


def exp_picard(p, seed):
    widths = tuple(p["widths"])
    spec = make_decay_architecture(widths)
    L = len(widths)
    # the decay system ignores data; one dummy sample keeps shapes valid
    ds = Dataset(np.zeros((1, 1)), np.zeros(1))
    table = sample_embedding(InitLawSpec.iid(L, b="point(0)"), widths, seed, 1)
    init = table.state()
    grid = TimeGrid(float(p["T"]), float(p["dt"]), "rk4")
    log, rep = picard_solve(init, spec, ds, grid, int(p["k_max"]), float(p["tol"]))
    exact = max(s.sup_distance(init.from_arrays([a * math.exp(-t) for a in init.arrays()]))
                for t, s in zip(log.times, log.states))
    ref = integrate_particle(init, spec, ds, grid)
    cross = max(a.sup_distance(b) for a, b in zip(log.states, ref.states))
    rows = [("iteration", k + 1, "residual", r) for k, r in enumerate(rep.residuals)]
    rows += [("", "", "iterations_used", rep.iterations_used), ("", "", "converged", float(rep.converged)),
             ("", "", "err_vs_exact", exact), ("", "", "err_vs_rk4", cross)]
    return rows, {}


def exp_eps_scaling(p, seed):
    arch, n = p["architecture"], int(p["n"])
    spec = fc_spec(arch, (n, 1))
    ds = _dataset(p, spec.dims["x"])
    eps_list = [float(e) for e in p["eps"]]
    T = float(p["T"])
    dt = float(p.get("dt") or min(eps_list))
    record_dt = float(p.get("record_dt") or _default_record_dt(T, max(eps_list)))
    table = sample_embedding(law_spec(p["law"], 2), (n, 1), seed, _dw(spec))
    pair = couple(table, (n, 1))
    mf = integrate_particle(pair.mf_init, spec, ds, TimeGrid(T, dt, p.get("scheme", "rk4")),
                            record_stride=_ratio(record_dt, dt, "record_dt", "dt"))
    rows = []
    for eps in eps_list:
        _ratio(eps, dt, "epsilon", "dt")
        cfg = SgdConfig(eps, T, record_stride=_ratio(record_dt, eps, "record_dt", "epsilon"),
                        data_seed=seed, track_loss=False)
        nn = train_sgd(pair.nn_init, spec, ds, cfg)
        rows.append(("epsilon", eps, "D_T", traj_distance(nn, mf, pair, eps, T)))
    return rows, {}


def _default_record_dt(T: float, step: float) -> float:
    # about 100 snapshots, on whole multiples of the coarsest step
    return max(1, math.floor(0.01 * T / step + 1e-9)) * step


def _ratio(a, b, la, lb) -> int:
    k = round(a / b)
    if k < 1 or abs(k * b - a) > 1e-9 * max(1.0, a):
        raise ConfigError(f"{lb}={b} must divide {la}={a}")
    return int(k)


def exp_width_scaling(p, seed):
    arch = p["architecture"]
    widths = [int(n) for n in p["widths"]]
    n_ref = int(p.get("n_ref") or 8 * max(widths))
    if n_ref < max(widths):
        raise ConfigError("n_ref must be at least the largest width")
    T, dt = float(p["T"]), float(p["dt"])
    grid = TimeGrid(T, dt, p.get("scheme", "rk4"))
    stride = _ratio(float(p.get("record_dt") or _default_record_dt(T, dt)), dt, "record_dt", "dt")
    ref_spec = fc_spec(arch, (n_ref, 1))
    ds = _dataset(p, ref_spec.dims["x"])
    table = sample_embedding(law_spec(p["law"], 2), (n_ref, 1), seed, _dw(ref_spec))
    ref = integrate_particle(table.state(), ref_spec, ds, grid, record_stride=stride)
    psi = clamped_identity(float(p.get("psi_clamp", 1.0)))
    rows = [("", "", "n_ref", n_ref)]
    for n in widths:
        spec = fc_spec(arch, (n, 1))
        pair = couple(table, (n, 1))
        log = integrate_particle(pair.nn_init, spec, ds, grid, record_stride=stride)
        rows.append(("n", n, "D_T", traj_distance(log, ref, pair, dt, T)))
        rows.append(("n", n, "psi_gap", test_function_gap(log, ref, pair, 1, psi, ds, T, spec)))
        rows.append(("n", n, "psi_gap_coupled", test_function_gap(log, ref, pair, 1, psi, ds, T, spec, coupled=True)))
    return rows, {}


def _deep_widths(n, L):
    return (n,) * (L - 1) + (1,)


def exp_translation(p, seed):
    L, t = int(p["L"]), float(p["t"])
    grid = TimeGrid(float(p["T"]), float(p["dt"]), p.get("scheme", "rk4"))
    widths = [int(n) for n in p["widths"]]
    nmax = max(widths)
    spec0 = fc_spec(p["architecture"], _deep_widths(nmax, L))
    ds = _dataset(p, spec0.dims["x"])
    table = sample_embedding(law_spec(p["law"], L), _deep_widths(nmax, L), seed, _dw(spec0))
    rows = []
    for n in widths:
        spec = fc_spec(p["architecture"], _deep_widths(n, L))
        log = integrate_particle(couple(table, _deep_widths(n, L)).nn_init, spec, ds, grid)
        for layer in p["layers"]:
            mean, spread = translation_profile(log, int(layer), t, spec)
            rows.append(("n", n, f"mean_layer{layer}", mean))
            rows.append(("n", n, f"spread_layer{layer}", spread))
    return rows, {}


def measurability_measures(p, seed, dw):
    """Equal-weight atoms per layer: keyed gaussian rows at layer 1, an even grid elsewhere."""
    L = int(p["L"])
    counts = p["atoms"] if isinstance(p["atoms"], (list, tuple)) else [p["atoms"]] * L
    if len(counts) != L:
        raise ConfigError(f"atoms needs {L} counts")
    lo, hi = p.get("atom_range", (0.5, 1.5))
    a1 = keyed_normal(seed, 31, np.arange(int(counts[0]))[:, None], np.arange(dw)[None, :])
    ms = [QuadratureMeasure.uniform(a1)]
    for m in counts[1:]:
        m = int(m)
        ms.append(QuadratureMeasure.uniform(np.linspace(lo, hi, m) if m > 1 else [(lo + hi) / 2]))
    return ms, [float(b) for b in p["biases"]]


def exp_measurability(p, seed):
    L = int(p["L"])
    grid = TimeGrid(float(p["T"]), float(p["dt"]), p.get("scheme", "rk4"))
    T = float(p["T"])
    widths = [int(n) for n in p["widths"]]
    spec = fc_spec(p["architecture"], _deep_widths(widths[0], L))
    ds = _dataset(p, spec.dims["x"])
    ms, B = measurability_measures(p, seed, _dw(spec))
    red = integrate_reduced(ms, B, spec, ds, grid)
    rows = []
    for n in widths:
        spec = fc_spec(p["architecture"], _deep_widths(n, L))
        init = iid_atom_init(ms, B, _deep_widths(n, L), seed)
        log = integrate_particle(init, spec, ds, grid)
        for layer in p["layers"]:
            rows.append(("n", n, f"gap_layer{layer}", reduced_vs_particle_gap(red, log, ms, int(layer), T)))
    # duplication symmetry on the smallest width
    n = widths[0]
    spec = fc_spec(p["architecture"], _deep_widths(n, L))
    layer = int(p["layers"][0])
    init = duplicate_neuron(iid_atom_init(ms, B, _deep_widths(n, L), seed), layer, 0, 1)
    log = integrate_particle(init, spec, ds, grid)
    rows.append(("layer", layer, "duplication_gap", duplication_gap(log, layer, 0, 1)))
    return rows, {}


def exp_global_conv(p, seed):
    cfg = ConvergenceConfig(**{k: tuple(v) if k == "widths" else v for k, v in p.items() if k != "record_stride"})
    init, spec, ds = build_convergence_system(cfg, seed)
    log = integrate_particle(init, spec, ds, TimeGrid(cfg.T, cfg.dt, cfg.scheme),
                             record_stride=int(p.get("record_stride", 10)))
    rep = convergence_diagnostics(log, spec, ds)
    rows = [("", "", "initial_loss", float(rep.loss_curve[0])),
            ("", "", "final_loss", rep.final_loss),
            ("", "", "baseline_loss", rep.baseline_loss),
            ("", "", "max_loss_increase", float(np.max(np.diff(rep.loss_curve), initial=-np.inf))),
            ("", "", "monotone", float(rep.monotone())),
            ("", "", "drift_tail_decreasing", float(rep.drift_tail_decreasing())),
            ("", "", "stays_below_baseline", float(rep.stays_below_baseline())),
            ("", "", "support_final", float(rep.support_probe[-1]))]
    traj = {"columns": ["t", "loss", "drift", "support"],
            "rows": np.column_stack([rep.times, rep.loss_curve, rep.drift, rep.support_probe]).tolist()}
    return rows, {f"s{seed}": traj}


def make_psi(desc: dict, dw: int):
    kind = desc.get("kind", "gaussian_bump")
    if kind == "constant":
        return ConstantPsi(float(desc.get("c", 1.0)))
    if kind == "clamped_u2":
        return ClampedU2(float(desc.get("c", 10.0)))
    if kind == "gaussian_bump":
        c1 = desc.get("center1", [0.0] * dw)
        return GaussianBump(c1, float(desc.get("center2", 0.0)), float(desc.get("width", 1.0)))
    raise ConfigError(f"unknown test function {kind!r}")


def exp_pde_residual(p, seed):
    n = int(p["n"])
    spec = fc_spec(p["architecture"], (n, 1))
    ds = _dataset(p, spec.dims["x"])
    t = float(p["t"])
    probes = [float(h) for h in p["dt_probes"]]
    dt = float(p["dt"])
    T = t + max(probes)
    T = _ratio(T, dt, "t + dt_probe", "dt") * dt
    table = sample_embedding(law_spec(p["law"], 2), (n, 1), seed, _dw(spec))
    log = integrate_particle(table.state(), spec, ds, TimeGrid(T, dt, "rk4"))
    psi = make_psi(p.get("psi", {}), _dw(spec))
    return [("dt_probe", h, "residual", weak_pde_residual(log, spec, ds, psi, t, h)) for h in probes], {}


_L2_ARCH = {"d": 2, "activations": "tanh", "loss": "huber(1)"}
_DATA = {"size": 64, "seed": 0, "target": "tanh"}
_L2_LAW = {"w1": "gaussian(0,1)", "w": "uniform(-1,1)", "require_bounded": True}
_DEEP_LAW = {"w1": "gaussian(0,1)", "w": "uniform(0.5,1.5)", "b": "point(0.1)", "bL": "point(0)"}

DEFAULTS = {
    "gradcheck": {"instances": 20, "max_width": 5, "activation": "tanh", "loss": "huber(1)", "step": 1e-3},
    "picard": {"widths": [1, 1], "T": 1.0, "dt": 1e-3, "k_max": 25, "tol": 1e-8},
    "eps_scaling": {"architecture": _L2_ARCH, "law": _L2_LAW, "dataset": _DATA, "n": 200, "T": 1.0,
                    "eps": [1e-2, 2.5e-3, 6.25e-4], "dt": None, "record_dt": None},
    "width_scaling": {"architecture": _L2_ARCH, "law": _L2_LAW, "dataset": _DATA, "widths": [100, 200, 400, 800],
                      "n_ref": None, "T": 1.0, "dt": 1e-2, "record_dt": None, "psi_clamp": 1.0},
    "translation": {"architecture": {"d": 2, "activations": "tanh", "loss": "huber(1)"}, "law": _DEEP_LAW,
                    "dataset": _DATA, "L": 5, "widths": [100, 200], "T": 0.5, "t": 0.5, "dt": 1e-2,
                    "layers": [2, 3]},
    "measurability": {"architecture": {"d": 2, "activations": "tanh", "loss": "huber(1)"}, "dataset": _DATA,
                      "L": 5, "widths": [100, 200], "atoms": [1, 5, 5, 5, 1], "atom_range": [0.5, 1.5],
                      "biases": [0.1, 0.1, 0.1, 0.0], "T": 0.5, "dt": 1e-2, "layers": [3]},
    "global_conv": {"which": "two_layer", "widths": [500, 1], "T": 50.0, "dt": 1e-2, "record_stride": 10,
                    "init_w2": "epigraph(negnorm,1)"},
    "pde_residual": {"architecture": _L2_ARCH, "law": _L2_LAW, "dataset": _DATA, "n": 500, "dt": 1e-3, "t": 0.5,
                     "dt_probes": [1e-2, 5e-3], "psi": {"kind": "gaussian_bump", "width": 1.0}},
}

EXPERIMENTS = {
    "gradcheck": (exp_gradcheck, None),
    "picard": (exp_picard, None),
    "eps_scaling": (exp_eps_scaling, ("epsilon", "D_T")),
    "width_scaling": (exp_width_scaling, ("n", "D_T")),
    "translation": (exp_translation, None),
    "measurability": (exp_measurability, None),
    "global_conv": (exp_global_conv, None),
    "pde_residual": (exp_pde_residual, None),
}


# ---------------------------------------------------------------------------
# runner


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)

    def values(self, metric: str, seed=None, knob_value=None) -> list:
        return [r[5] for r in self.rows if r[4] == metric
                and (seed is None or r[1] == seed) and (knob_value is None or r[3] == knob_value)]


def _merge(defaults: dict, given: dict) -> dict:
    out = dict(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def resolve_config(cfg: dict, seed_offset: int = 0) -> dict:
    """Fill defaults, apply the seed offset and the MFLAB_SEED override."""
    if not isinstance(cfg, dict) or "experiment" not in cfg:
        raise ConfigError("config must be an object with an 'experiment' field")
    name = cfg["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    params = _merge(DEFAULTS[name], cfg.get("params", {}))
    if name == "global_conv":
        ConvergenceConfig(**{k: tuple(v) if k == "widths" else v for k, v in params.items() if k != "record_stride"})
    seeds = cfg.get("seeds", [0])
    env = os.environ.get("MFLAB_SEED")
    if env:
        seeds = [int(s) for s in env.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("seeds list must be nonempty")
    return {"experiment": name, "seeds": [int(s) + int(seed_offset) for s in seeds], "params": params}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_experiment(cfg: dict, out_dir=None, seed_offset: int = 0, threads: int = 1) -> MetricReport:
    """Run every seed of the configured experiment and write results.csv and manifest.json."""
    start = time.time()
    resolved = resolve_config(cfg, seed_offset)
    name, params = resolved["experiment"], resolved["params"]
    fn, agg = EXPERIMENTS[name]

    def one(seed):
        return fn(params, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(one, resolved["seeds"]))
    else:
        outputs = [one(s) for s in resolved["seeds"]]
    rows, trajs = [], {}
    for seed, (seed_rows, seed_trajs) in zip(resolved["seeds"], outputs):
        for knob, kv, metric, value in seed_rows:
            value = float(value)
            if not math.isfinite(value):
                raise FloatingPointError(f"metric {metric} is not finite for seed {seed}")
            rows.append((name, seed, knob, kv, metric, value))
        trajs.update(seed_trajs)
    if agg is not None:
        rows += _median_rows(name, rows, agg[0], agg[1], agg[1] + "_median")
    manifest = {"config": resolved, "code_version": VERSION, "python": platform.python_version(),
                "numpy": np.__version__, "wall_time_s": time.time() - start}
    report = MetricReport(rows, manifest, trajs)
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def write_outputs(report: MetricReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(report.rows))
    (out / "manifest.json").write_text(json.dumps(report.manifest, indent=2, sort_keys=True) + "\n")
    for tid, traj in report.trajectories.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(traj["columns"])
        for row in traj["rows"]:
            w.writerow([repr(float(x)) for x in row])
        (out / f"traj_{tid}.csv").write_text(buf.getvalue())
