import math

import numpy as np
import pytest

from meanfield_lab.architecture import (FcConfig, Schedule, audit_assumptions, make_activation,
                                        make_decay_architecture, make_fc_architecture, make_loss, parse_call)


def fc(**kw):
    base = dict(d=2, widths=(3, 1), activations="tanh", loss="huber(1)")
    base.update(kw)
    return make_fc_architecture(FcConfig(**base))


def test_parse_call():
    assert parse_call("huber(1.5)") == ("huber", [1.5])
    assert parse_call("tanh") == ("tanh", [])
    assert parse_call("lindecay(1, 2)") == ("lindecay", [1.0, 2.0])
    with pytest.raises(ValueError):
        parse_call("bad name(")


def test_phi1_affine():
    spec = fc()
    assert spec.phi1(np.array([2.0, 1.0, 3.0]), np.array([1.0, 2.0])) == pytest.approx(7.0)


def test_phi_zero_weight_returns_bias():
    spec = fc()
    for h in (-3.0, 0.0, 2.5):
        assert spec.phi[0](0.0, 0.4, h) == pytest.approx(0.4)


def test_sigma_w_independent_of_w_and_b_without_regularizer():
    spec = fc()
    assert spec.sigma_w[0](2.0, 5.0, 9.0, None, 0.0) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        dl, g, h = rng.normal(size=3)
        w, w2, b, b2 = rng.normal(size=4) * 10
        assert spec.sigma_w[0](dl, w, b, g, h) == spec.sigma_w[0](dl, w2, b2, g, h)
        assert spec.sigma_b[0](dl, w, b, g, h) == spec.sigma_b[0](dl, w2, b2, g, h)
    x = rng.normal(size=2)
    assert np.array_equal(spec.sigma_w1(1.3, rng.normal(size=3), x), spec.sigma_w1(1.3, rng.normal(size=3), x))


def test_dimension_mismatch():
    spec = fc()
    with pytest.raises(ValueError):
        spec.phi1(np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("name", ["nope", "relu"])
def test_unknown_activation(name):
    with pytest.raises(ValueError):
        make_activation(name)


def test_unknown_loss():
    with pytest.raises(ValueError):
        make_loss("hinge")


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "gauss", "sleaky(0.2)", "linear"])
def test_activation_derivative_matches_finite_difference(name):
    act = make_activation(name)
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    fd = (act.f(x + h) - act.f(x - h)) / (2 * h)
    assert np.max(np.abs(fd - act.df(x))) < 1e-8


def test_sleaky_slopes():
    act = make_activation("sleaky(0.1)")
    assert act.df(np.array(-50.0)) == pytest.approx(0.1)
    assert act.df(np.array(50.0)) == pytest.approx(1.0)
    assert np.all(act.df(np.linspace(-10, 10, 101)) >= 0.1)


def test_huber_values():
    loss = make_loss("huber(1)")
    assert loss.value(0.0, 0.5) == pytest.approx(0.125)
    assert loss.value(0.0, 2.0) == pytest.approx(1.5)
    assert loss.d2(0.0, 5.0) == 1.0 and loss.d2(0.0, -5.0) == -1.0


def test_schedules():
    assert Schedule("const(2)")(7.0) == 2.0
    assert Schedule("lindecay(1,2)")(1.0) == pytest.approx(0.5)
    assert Schedule("lindecay(1,2)")(5.0) == 0.0
    assert Schedule("zero").is_zero and Schedule("const(0)").is_zero
    with pytest.raises(ValueError):
        Schedule("cosine(1)")


def test_per_layer_length_checked():
    with pytest.raises(ValueError):
        fc(widths=(3, 2, 1), activations=["tanh"])


def test_invalid_widths():
    with pytest.raises(ValueError):
        fc(widths=(3, 2))
    with pytest.raises(ValueError):
        fc(widths=(0, 1))


def test_shape_closure():
    spec = fc(widths=(3, 4, 1))
    rng = np.random.default_rng(1)
    w, x = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    assert spec.phi1(w, x).shape == (5,)
    assert spec.sigma_w1(rng.normal(size=5), w, x).shape == (5, 3)
    args = rng.normal(size=(5, 5))
    for f in (spec.phi[0],):
        assert np.shape(f(*args[:3])) == (5,)
    for f in spec.sigma_w + spec.sigma_b + spec.sigma_H:
        assert np.shape(f(*args)) == (5,)


def test_decay_architecture_rhs():
    spec = make_decay_architecture(rate=2.0)
    assert spec.fc.loss.value(1.0, 3.0) == 0.0
    assert spec.sigma_w1(0.0, np.array([1.5]), np.array([0.3]))[0] == pytest.approx(3.0)


def test_audit_tanh_huber_passes():
    report = audit_assumptions(fc(), 500, 1.0, 0)
    for p in report.probes:
        if p.assumption in ("forward", "backward"):
            assert p.passed, p
            assert all(math.isfinite(c) for c in p.constants)


def test_audit_squared_loss_fails_output_bound():
    report = audit_assumptions(fc(loss="squared"), 500, 1.0, 0)
    assert not report.probe("sigma_2^H bound").passed


def test_audit_flags_kink_of_hard_leaky():
    spec = fc(widths=(3, 3, 1), activations=["tanh", "leaky(0.1)"])
    report = audit_assumptions(spec, 10_000, 1.0, 0)
    assert report.probe("sigma_1^H lipschitz").passed
    assert "varphi_2" in report.kinks and abs(report.kinks["varphi_2"]) < 1e-3


def test_audit_deterministic():
    a = audit_assumptions(fc(), 200, 1.0, 5)
    b = audit_assumptions(fc(), 200, 1.0, 5)
    assert [p.constants for p in a.probes] == [p.constants for p in b.probes]


def test_audit_rejects_zero_samples():
    with pytest.raises(ValueError):
        audit_assumptions(fc(), 0, 1.0, 0)
