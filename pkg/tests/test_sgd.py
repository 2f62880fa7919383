import math

import numpy as np
import pytest

from meanfield_lab.architecture import FcConfig, make_decay_architecture, make_fc_architecture
from meanfield_lab.sgd import SgdConfig, population_loss, train_sgd
from meanfield_lab.state import Dataset, State

DUMMY = Dataset(np.zeros((1, 1)), np.zeros(1))


def unit_state():
    return State(np.ones((1, 1)), (np.ones((1, 1)),), (np.ones(1),))


def test_zero_horizon_keeps_only_init():
    log = train_sgd(unit_state(), make_decay_architecture(), DUMMY, SgdConfig(1e-2, 0.0))
    assert len(log) == 1 and log.final.equals(unit_state())


def test_decay_matches_closed_form():
    eps = 1e-3
    log = train_sgd(unit_state(), make_decay_architecture(), DUMMY, SgdConfig(eps, 1.0))
    assert log.times[-1] == pytest.approx(1.0)
    expected = (1 - eps) ** 1000
    assert log.final.max_abs() == pytest.approx(expected, abs=1e-13)
    assert abs(expected - math.exp(-1)) < 1e-3


def test_step_count_and_stride():
    cfg = SgdConfig(0.01, 1.0)
    assert cfg.steps == 100 and cfg.stride == 1
    assert SgdConfig(1e-3, 1.0).stride == 10
    log = train_sgd(unit_state(), make_decay_architecture(), DUMMY, SgdConfig(1e-3, 1.0))
    assert len(log) == 101


def test_invalid_epsilon():
    with pytest.raises(ValueError):
        SgdConfig(0.0, 1.0)


def test_determinism():
    rng = np.random.default_rng(0)
    spec = make_fc_architecture(FcConfig(d=2, widths=(4, 1)))
    ds = Dataset(rng.normal(size=(8, 2)), rng.normal(size=8))
    s = State(rng.normal(size=(4, 3)), (rng.normal(size=(4, 1)),), (np.zeros(1),))
    a = train_sgd(s, spec, ds, SgdConfig(0.05, 1.0, data_seed=3))
    b = train_sgd(s, spec, ds, SgdConfig(0.05, 1.0, data_seed=3))
    assert all(x.equals(y) for x, y in zip(a.states, b.states))
    assert a.diagnostics == b.diagnostics
    norms = a.series("norm_W")
    assert np.all(np.diff(norms) >= 0)


def test_population_loss_huber_branches():
    spec = make_fc_architecture(FcConfig(d=1, widths=(1, 1), activations="linear", input_bias=False))
    zero = State(np.zeros((1, 1)), (np.zeros((1, 1)),), (np.zeros(1),))
    X = np.zeros((4, 1))
    assert population_loss(zero, spec, Dataset(X, np.full(4, 0.5))) == pytest.approx(0.125)
    assert population_loss(zero, spec, Dataset(X, np.full(4, 2.0))) == pytest.approx(1.5)
    assert population_loss(zero, spec, Dataset(X, np.zeros(4))) == 0.0
