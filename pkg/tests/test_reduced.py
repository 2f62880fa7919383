import math

import numpy as np
import pytest

from meanfield_lab.architecture import FcConfig, make_decay_architecture, make_fc_architecture
from meanfield_lab.mf_solver import TimeGrid, integrate_particle
from meanfield_lab.reduced import (QuadratureMeasure, duplicate_neuron, duplication_gap, iid_atom_init,
                                   integrate_reduced, reduced_init, reduced_vs_particle_gap, translation_profile)
from meanfield_lab.state import Dataset, State

RNG = np.random.default_rng(0)
DATA = Dataset(RNG.normal(size=(16, 2)), np.tanh(RNG.normal(size=16)))


def tanh_spec(widths, **kw):
    return make_fc_architecture(FcConfig(d=2, widths=tuple(widths), activations="tanh", loss="huber(1)", **kw))


def measures(counts, seed=0, dw=3):
    rng = np.random.default_rng(seed)
    ms = [QuadratureMeasure.uniform(rng.normal(size=(counts[0], dw)))]
    for m in counts[1:]:
        ms.append(QuadratureMeasure.uniform(np.linspace(0.5, 1.5, m) if m > 1 else [1.0]))
    return ms


BIASES = [0.1, 0.2, -0.1, 0.0]


def test_quadrature_measure_validation():
    with pytest.raises(ValueError):
        QuadratureMeasure(np.array([1.0, 2.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        QuadratureMeasure(np.array([1.0]), np.array([-1.0]))
    assert QuadratureMeasure.uniform([1.0, 3.0]).mean() == 2.0


def test_reduced_preconditions():
    with pytest.raises(ValueError):
        reduced_init(measures([2, 2, 2, 2]), BIASES[:3], tanh_spec((3, 3, 3, 1)))
    with pytest.raises(ValueError):
        reduced_init(measures([2, 2, 2, 2, 2]), BIASES[:3], tanh_spec((3, 3, 3, 3, 1)))


def test_zero_schedule_keeps_reduced_state_constant():
    ms = measures([3, 2, 2, 2, 2])
    spec = tanh_spec((4, 4, 4, 4, 1), xi_w="zero", xi_b="zero")
    log = integrate_reduced(ms, BIASES, spec, DATA, TimeGrid(0.5, 0.1))
    init = log.states[0]
    for s in log.states:
        assert all(np.array_equal(a, b) for a, b in zip(s.arrays(), init.arrays()))


def test_single_atoms_match_width_one_particle_system():
    ms = measures([1, 1, 1, 1, 1])
    spec = tanh_spec((1, 1, 1, 1, 1))
    grid = TimeGrid(0.5, 1e-2)
    red = integrate_reduced(ms, BIASES, spec, DATA, grid)
    part = integrate_particle(iid_atom_init(ms, BIASES, (1, 1, 1, 1, 1), 0), spec, DATA, grid)
    for layer in range(1, 6):
        assert reduced_vs_particle_gap(red, part, ms, layer, 0.5) <= 1e-12
    rs, ps = red.final, part.final
    assert abs(rs.bmid[0] - ps.b[0][0]) <= 1e-12 and abs(rs.bL[0] - ps.b[-1][0]) <= 1e-12


def test_decay_closed_form():
    ms = measures([3, 2, 3, 2, 2])
    spec = make_fc_architecture(FcConfig(d=3, widths=(2, 2, 2, 2, 1), loss="const", Phi="quad(1)", Psi="quad(1)",
                                         input_bias=False))
    ds = Dataset(np.zeros((1, 3)), np.zeros(1))
    log = integrate_reduced(ms, BIASES, spec, ds, TimeGrid(1.0, 1e-3))
    init, final = log.states[0], log.final
    for a, b in zip(init.arrays(), final.arrays()):
        assert np.max(np.abs(b - a * math.exp(-1))) <= 1e-9


def test_one_particle_per_atom_identification():
    P = 4
    ms = measures([P, 1, 1, 1, 1])
    widths = (P, 1, 1, 1, 1)
    spec = tanh_spec(widths)
    init = State(ms[0].atoms.copy(), tuple(np.ones((widths[i], widths[i + 1])) for i in range(4)),
                 tuple(np.full(widths[i + 1], BIASES[i]) for i in range(4)))
    grid = TimeGrid(0.5, 1e-2)
    red = integrate_reduced(ms, BIASES, spec, DATA, grid)
    part = integrate_particle(init, spec, DATA, grid)
    for layer in range(1, 6):
        assert reduced_vs_particle_gap(red, part, ms, layer, 0.5) <= 1e-12


def test_gap_rejects_foreign_atoms():
    ms = measures([2, 2, 2, 2, 2])
    spec = tanh_spec((3, 3, 3, 3, 1))
    grid = TimeGrid(0.1, 0.05)
    red = integrate_reduced(ms, BIASES, spec, DATA, grid)
    init = iid_atom_init(ms, BIASES, (3, 3, 3, 3, 1), 1)
    arrays = [a.copy() for a in init.arrays()]
    arrays[2][0, 0] = 7.0
    part = integrate_particle(init.from_arrays(arrays), spec, DATA, grid)
    with pytest.raises(ValueError):
        reduced_vs_particle_gap(red, part, ms, 3, 0.1)


def test_iid_atom_init_uses_atoms():
    ms = measures([3, 4, 4, 4, 2])
    s = iid_atom_init(ms, BIASES, (20, 20, 20, 20, 1), 5)
    for i in range(2, 6):
        assert np.all(np.isin(s.weight(i), ms[i - 1].atoms))
    assert s.equals(iid_atom_init(ms, BIASES, (20, 20, 20, 20, 1), 5))


def test_duplication_symmetry_is_exact():
    ms = measures([3, 4, 4, 4, 2])
    widths = (6, 6, 6, 6, 1)
    spec = tanh_spec(widths)
    for layer in (1, 3, 4):
        init = duplicate_neuron(iid_atom_init(ms, BIASES, widths, 2), layer, 0, 3)
        log = integrate_particle(init, spec, DATA, TimeGrid(0.5, 1e-2))
        assert duplication_gap(log, layer, 0, 3) == 0.0
        assert duplication_gap(log, layer, 0, 1) > 0.0


def test_translation_profile():
    ms = measures([3, 4, 4, 4, 2])
    widths = (8, 8, 8, 8, 1)
    init = iid_atom_init(ms, BIASES, widths, 0)
    frozen = integrate_particle(init, tanh_spec(widths, xi_w="zero", xi_b="zero"), DATA, TimeGrid(0.5, 0.1))
    assert translation_profile(frozen, 3, 0.5, tanh_spec(widths)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        translation_profile(frozen, 3, 0.5, tanh_spec(widths, Phi="quad(0.1)"))
    with pytest.raises(ValueError):
        translation_profile(frozen, 1, 0.5, tanh_spec(widths))
