"""Acceptance suite: criteria 1 to 11 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line (visible with ``pytest -s``
or in the summary when run as a script) and then asserts the same condition.
Run standalone with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from meanfield_lab.architecture import FcConfig, make_fc_architecture
from meanfield_lab.convergence import ConvergenceConfig, build_convergence_system
from meanfield_lab.coupling import InitLawSpec, couple, log_distance, sample_embedding, traj_distance
from meanfield_lab.experiments import fit_loglog_slope, run_experiment
from meanfield_lab.forward_backward import backward, forward
from meanfield_lab.norms import norm_W
from meanfield_lab.state import Dataset, State, TrajectoryLog

SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail, elapsed=None):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
        if elapsed is not None:
            line += f"  [{elapsed:.1f}s]"
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line
    return emit


def timed(cfg):
    start = time.perf_counter()
    rep = run_experiment(cfg)
    return rep, time.perf_counter() - start


def medians(rep, metric):
    by = {}
    for r in rep.rows:
        if r[4] == metric and r[1] != "median":
            by.setdefault(r[3], []).append(r[5])
    return {k: float(np.median(v)) for k, v in sorted(by.items())}


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def test_criterion_01_gradient_oracle(report):
    rep, dt = timed({"experiment": "gradcheck", "seeds": [0],
                     "params": {"instances": 20, "max_width": 5, "step": 1e-3}})
    worst = rep.values("max_rel_error")[0]
    report(1, worst <= 1e-5 and dt < 10, f"max rel error {worst:.2e} (tol 1e-5) over 20 instances", dt)


def test_criterion_02_picard(report):
    rep, dt = timed({"experiment": "picard", "seeds": [0],
                     "params": {"T": 1.0, "dt": 1e-3, "k_max": 25, "tol": 1e-8}})
    res = rep.values("residual")
    ratios = np.array(res[1:]) / np.array(res[:-1])
    tail = ratios[len(ratios) // 2:]
    iters, err = int(rep.values("iterations_used")[0]), rep.values("err_vs_exact")[0]
    ok = (rep.values("converged")[0] == 1.0 and res[-1] <= 1e-8 and iters <= 25 and err <= 1e-6
          and bool(np.all(np.diff(tail) < 0)) and dt < 5)
    report(2, ok, f"{iters} iterations, residual {res[-1]:.1e}, err vs exp(-t) {err:.1e}, "
                  f"tail ratios {np.round(tail, 3).tolist()}", dt)


def test_criterion_03_eps_scaling(report):
    rep, dt = timed({"experiment": "eps_scaling", "seeds": SEEDS,
                     "params": {"n": 200, "T": 1.0, "eps": [1e-2, 2.5e-3, 6.25e-4]}})
    med = medians(rep, "D_T")
    slope, _ = fit_loglog_slope(list(med.items()))
    by_eps_desc = [med[e] for e in sorted(med, reverse=True)]
    ok = 0.35 <= slope <= 1.1 and strictly_decreasing(by_eps_desc) and dt < 600
    report(3, ok, f"slope {slope:.3f} in [0.35, 1.1], median D_T by decreasing eps "
                  f"{[f'{v:.2e}' for v in by_eps_desc]}", dt)


@pytest.fixture(scope="module")
def width_runs():
    return timed({"experiment": "width_scaling", "seeds": SEEDS,
                  "params": {"widths": [100, 200, 400, 800], "n_ref": 3200, "T": 1.0, "dt": 1e-2}})


def test_criterion_04_width_scaling(report, width_runs):
    rep, dt = width_runs
    med = medians(rep, "D_T")
    slope, _ = fit_loglog_slope(list(med.items()))
    ok = -0.75 <= slope <= -0.3 and strictly_decreasing(list(med.values())) and dt < 1200
    report(4, ok, f"slope {slope:.3f} in [-0.75, -0.3], median D_T by n "
                  f"{[f'{v:.2e}' for v in med.values()]}, n_ref 3200", dt)


def test_criterion_05_test_function_gap(report, width_runs):
    rep, _ = width_runs
    ratios, full = [], []
    for seed in SEEDS:
        for n in (100, 200, 400, 800):
            D = rep.values("D_T", seed, n)[0]
            ratios.append(rep.values("psi_gap_coupled", seed, n)[0] / D)
            full.append(rep.values("psi_gap", seed, n)[0] / D)
    ok = max(ratios) <= 2.0
    report(5, ok, f"max gap/D_T {max(ratios):.3f} (tol 2) over 5 seeds x 4 widths; "
                  f"whole-population mean, informational: max {max(full):.2f}")


def test_criterion_06_translation(report):
    rep, dt = timed({"experiment": "translation", "seeds": SEEDS,
                     "params": {"L": 5, "widths": [100, 200], "t": 0.5, "T": 0.5, "layers": [2, 3]}})
    below = all(rep.values("spread_layer3", s, n)[0] < rep.values("spread_layer2", s, n)[0]
                for s in SEEDS for n in (100, 200))
    shrink = sum(rep.values("spread_layer3", s, 200)[0] < rep.values("spread_layer3", s, 100)[0] for s in SEEDS)
    ok = below and shrink >= 4 and dt < 600
    s3 = [f"{rep.values('spread_layer3', s, 100)[0]:.4f}->{rep.values('spread_layer3', s, 200)[0]:.4f}" for s in SEEDS]
    report(6, ok, f"layer-3 spread below layer-2 on every seed: {below}; spread3 shrinks on {shrink}/5 "
                  f"(need 4): {s3}", dt)


def test_criterion_07_reduced_dynamics(report):
    rep, dt = timed({"experiment": "measurability", "seeds": SEEDS,
                     "params": {"L": 5, "widths": [100, 200], "layers": [3]}})
    wins = sum(rep.values("gap_layer3", s, 200)[0] < rep.values("gap_layer3", s, 100)[0] for s in SEEDS)
    dup = max(rep.values("duplication_gap"))
    ok = wins >= 4 and dup <= 1e-10
    report(7, ok, f"gap(200) < gap(100) on {wins}/5 seeds (need 4); duplication gap {dup:.1e}", dt)


def test_criterion_08_weak_pde(report):
    rep, dt = timed({"experiment": "pde_residual", "seeds": SEEDS,
                     "params": {"n": 500, "dt": 1e-3, "t": 0.5, "dt_probes": [1e-2, 5e-3]}})
    coarse = [rep.values("residual", s, 1e-2)[0] for s in SEEDS]
    fine = [rep.values("residual", s, 5e-3)[0] for s in SEEDS]
    ok = max(coarse) <= 1e-2 and all(f < c for f, c in zip(fine, coarse))
    report(8, ok, f"residual at 1e-2: max {max(coarse):.1e} (tol 1e-2); smaller at 5e-3 on every seed: "
                  f"{all(f < c for f, c in zip(fine, coarse))}", dt)


def test_criterion_09_global_two_layer(report):
    rep, dt = timed({"experiment": "global_conv", "seeds": SEEDS,
                     "params": {"which": "two_layer", "widths": [500, 1], "init_w1": "gaussian(0,1)",
                                "init_w2": "epigraph(negnorm,1)", "teacher": "net(3)", "loss": "huber(1)",
                                "T": 50.0, "dt": 1e-2, "scheme": "rk4", "record_stride": 1}})
    final = max(rep.values("final_loss"))
    rise = max(rep.values("max_loss_increase"))
    drift = all(v == 1.0 for v in rep.values("drift_tail_decreasing"))
    ok = rise <= 1e-8 and final <= 1e-3 and drift and dt < 900
    report(9, ok, f"max per-step loss increase {rise:.1e} (tol 1e-8), worst final loss {final:.1e} (tol 1e-3), "
                  f"drift tail decreasing on all seeds: {drift}", dt)


def test_criterion_10_global_three_layer(report):
    params = {"which": "three_layer", "widths": [100, 100, 1], "phi2": "tanh", "phi3": "linear",
              "freeze_w3": True, "init_w2": "gaussian(0,1)", "init_w3": "uniform(0.5,1.5)", "teacher": "net(3)",
              "T": 50.0, "dt": 1e-2, "record_stride": 1}
    rep, dt = timed({"experiment": "global_conv", "seeds": SEEDS, "params": params})
    cfg = ConvergenceConfig(**{k: tuple(v) if k == "widths" else v for k, v in params.items() if k != "record_stride"})
    w3_ok = all(np.all(np.abs(build_convergence_system(cfg, s)[0].w[1]) >= 0.5) for s in SEEDS)
    final = max(rep.values("final_loss"))
    below = all(v == 1.0 for v in rep.values("stays_below_baseline"))
    started = sum(i < b for i, b in zip(rep.values("initial_loss"), rep.values("baseline_loss")))
    ok = w3_ok and final <= 1e-2 and below and dt < 1800
    report(10, ok, f"|w3(0)| >= 0.5: {w3_ok}; worst final loss {final:.1e} (tol 1e-2); stays below baseline: "
                   f"{below} ({started}/5 seeds start below it)", dt)


def _structural_checks():
    rng = np.random.default_rng(0)
    errs = {}
    # permutation and duplication invariance of the forward and backward passes
    spec = make_fc_architecture(FcConfig(d=2, widths=(3, 4, 1)))
    s = State(rng.normal(size=(3, 3)), (rng.normal(size=(3, 4)), rng.normal(size=(4, 1))),
              (rng.normal(size=4), rng.normal(size=1)))
    X, Y = rng.normal(size=(6, 2)), rng.normal(size=6)
    p = rng.permutation(4)
    sp = State(s.w1, (s.w[0][:, p], s.w[1][p]), (s.b[0][p], s.b[1]))
    c, cp = forward(s, spec, X), forward(sp, spec, X)
    b, bp = backward(s, spec, (X, Y), c), backward(sp, spec, (X, Y), cp)
    errs["permutation"] = max(np.max(np.abs(cp.yhat - c.yhat)), np.max(np.abs(cp.H[1] - c.H[1][:, p])),
                              np.max(np.abs(bp.deltaH[1] - b.deltaH[1][:, p])))
    sd = State(np.concatenate([s.w1, s.w1]), (np.concatenate([s.w[0], s.w[0]]), s.w[1]), s.b)
    spec2 = make_fc_architecture(FcConfig(d=2, widths=(6, 4, 1)))
    cd = forward(sd, spec2, X)
    bd = backward(sd, spec2, (X, Y), cd)
    errs["duplication"] = max(np.max(np.abs(cd.yhat - c.yhat)), np.max(np.abs(bd.deltaH[-1] - b.deltaH[-1])),
                              np.max(np.abs(bd.deltaW1[:, 3:] - b.deltaW1)))
    # norm definitions
    log = TrajectoryLog()
    for t in (0.0, 1.0):
        log.append(t, State(np.array([[3.0], [4.0]]), (np.array([[-2.0], [1.0]]),), (np.zeros(1),), t))
    errs["norm"] = abs(norm_W(log, 1.0, 2) - math.sqrt(12.5))
    log2 = TrajectoryLog()
    log2.append(0.0, State(np.zeros((2, 1)), (np.array([[-2.0], [1.0]]),), (np.zeros(1),)))
    errs["norm_sup"] = abs(norm_W(log2, 0.0, 2) - 2.0)
    # distance axioms on random logs
    law = InitLawSpec.iid(3, b="point(0)")
    times = [0.0, 0.5, 1.0]
    logs = []
    for k in range(3):
        base = sample_embedding(law, (3, 2, 1), k, 2).state()
        lg = TrajectoryLog()
        for t in times:
            lg.append(t, base.from_arrays([a + rng.normal(size=a.shape) for a in base.arrays()], time=t))
        logs.append(lg)
    a, bb, cc = logs
    errs["metric_zero"] = log_distance(a, a, 1.0)
    errs["metric_symmetry"] = abs(log_distance(a, bb, 1.0) - log_distance(bb, a, 1.0))
    errs["metric_triangle"] = max(0.0, log_distance(a, cc, 1.0) - log_distance(a, bb, 1.0) - log_distance(bb, cc, 1.0))
    errs["metric_monotone"] = max(0.0, log_distance(a, bb, 0.5) - log_distance(a, bb, 1.0))
    pair = couple(sample_embedding(law, (4, 3, 1), 5, 2), (4, 3, 1))
    one = TrajectoryLog()
    one.append(0.0, pair.mf_init)
    errs["traj_distance_zero"] = traj_distance(one, one, pair, 1.0, 0.0)
    # sub-block consistency of embedding tables
    big = sample_embedding(law, (40, 30, 1), 9, 2).state()
    errs["sub_block"] = max(big.restrict(w).sup_distance(sample_embedding(law, w, 9, 2).state())
                            for w in ((1, 1, 1), (7, 3, 1), (40, 1, 1), (13, 30, 1)))
    return errs


def test_criterion_11_structural(report):
    start = time.perf_counter()
    errs = _structural_checks()
    dt = time.perf_counter() - start
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= 1e-12 and dt < 60
    report(11, ok, f"{len(errs)} exact checks, worst {worst} = {errs[worst]:.1e} (tol 1e-12)", dt)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
