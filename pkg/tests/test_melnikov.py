import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splitlab.frequencies import FrequencyVector, PerturbationSeries
from splitlab.melnikov import (HomoclinicGrid, action_general, action_glued, action_reduced,
                               compute_grid, first_order_grid, fourier_of_grid,
                               melnikov_coefficient, melnikov_general, melnikov_gradient,
                               melnikov_kernel, melnikov_primitive, melnikov_synthesis)
from splitlab.torus import solve_invariant_torus, trivial_torus

# mpmath quadrature, tests/oracles/generate.py
ACTION_UNPERTURBED = 8.0
GAMMA_F0 = 4.0
GAMMA_KW2 = 1.08811621992853265
M_SINQ_COSPHI1 = 1.61317305305514228
RANDOM_X = [2.3506266224249797, 3.2359075631265535, 7.993918027594067, 6.794921240434648,
            3.9719845509588994, 3.394857885877207, 6.023256660513179, 1.9486684374767624,
            6.760284835744751, 9.423848366172377]
RANDOM_GAMMA = [0.73636554860885768, 0.25218821807885537, 0.00035368218821744582,
                0.0019768756776699918, 0.097404308823225343, 0.20611504242844939,
                0.0058890705325045241, 1.1495906867503025, 0.0020767703343257639,
                4.41164153645496653e-05]

OM = FrequencyVector((1.0, (math.sqrt(5) - 1) / 2))
F_FACTOR = PerturbationSeries.cosines({(1, 0): 1.0, (0, 1): 1.0})
SINQ_COS = PerturbationSeries({(1, 0, 1): -0.25j, (-1, 0, 1): -0.25j, (1, 0, -1): 0.25j,
                               (-1, 0, -1): 0.25j}, q_mode="general")


def _gen_two_modes():
    # sin q cos phi_1 + 0.2 sin q cos phi_2
    c = {}
    for k, a in (((1, 0), 1.0), ((0, 1), 0.2)):
        for s in (1, -1):
            kk = (s * k[0], s * k[1])
            c[kk + (1,)] = -0.25j * a
            c[kk + (-1,)] = 0.25j * a
    return PerturbationSeries(c, q_mode="general")


# actions ---------------------------------------------------------------------

def test_unperturbed_actions():
    assert action_glued(0.0, (0.4, 1.0), 0.0, F_FACTOR, OM) == pytest.approx(ACTION_UNPERTURBED, abs=1e-10)
    assert action_reduced(0.0, (0.4, 1.0), 0.0, F_FACTOR, OM) == pytest.approx(ACTION_UNPERTURBED, abs=1e-10)


def test_time_translation_identity():
    theta = 0.37
    A = np.array([0.5, 2.0])
    a = action_glued(1e-2, A, theta, F_FACTOR, OM)
    b = action_glued(1e-2, A + OM.array * theta, 0.0, F_FACTOR, OM)
    assert a == pytest.approx(b, abs=1e-9)


def test_glued_first_order_coefficient_is_minus_gamma():
    A = (0.9, 2.1)
    gam = float(melnikov_synthesis(np.array(A), F_FACTOR, OM))
    res = [abs((action_glued(mu, A, 0.0, F_FACTOR, OM) - 8.0) / mu + gam) for mu in (2e-3, 1e-3)]
    # the remainder is O(mu)
    assert res[1] < 0.6 * res[0]
    assert res[1] < 5e-2


def test_reduced_and_glued_agree_to_second_order():
    A = (1.3, 0.2)
    mu = 1e-3
    d = action_glued(mu, A, 0.0, F_FACTOR, OM) - action_reduced(mu, A, 0.0, F_FACTOR, OM)
    assert abs(d) < 50 * mu**2


def test_general_matches_glued_for_factor_perturbation():
    A = (0.9, 2.0)
    g = action_glued(1e-3, A, 0.0, F_FACTOR, OM)
    h = action_general(1e-3, A, 0.0, trivial_torus(OM), F_FACTOR, OM)
    assert g == pytest.approx(h, abs=1e-10)


def test_general_first_order_difference_tracks_minus_M():
    f = _gen_two_modes()
    A = np.array([0.9, 2.1])
    zero = np.zeros(2)
    m = melnikov_general(A, OM, f) - melnikov_general(zero, OM, f)
    resid = []
    for mu in (2e-3, 1e-3):
        tor = solve_invariant_torus(mu, f, OM, 8)
        d = (action_general(mu, A, 0.0, tor, f, OM) - action_general(mu, zero, 0.0, tor, f, OM)) / mu
        resid.append(abs(d + m))
    assert resid[1] < 0.6 * resid[0]
    assert resid[1] < 5e-3


# Melnikov potential -------------------------------------------------------------

def test_constant_perturbation_gives_four():
    f0 = PerturbationSeries({(0, 0): 1.0})
    assert melnikov_primitive((0.3, 1.0), OM, f0) == pytest.approx(GAMMA_F0, abs=1e-11)
    assert melnikov_kernel(0.0) == 4.0


def test_kernel_against_quadrature_oracle():
    assert melnikov_kernel(2.0) == pytest.approx(GAMMA_KW2, rel=1e-14)
    np.testing.assert_allclose(melnikov_kernel(np.array(RANDOM_X)), RANDOM_GAMMA, rtol=1e-12)


def test_kernel_is_even_and_finite_far_out():
    x = np.linspace(0, 50, 501)
    assert np.array_equal(melnikov_kernel(x), melnikov_kernel(-x))
    assert np.isfinite(melnikov_kernel(1e4)) and melnikov_kernel(1e4) >= 0.0


@given(st.floats(-5, 5), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
def test_primitive_matches_synthesis(c2, a1, a2):
    f = PerturbationSeries.cosines({(1, 0): 1.0, (1, -1): c2})
    A = (a1, a2)
    assert melnikov_primitive(A, OM, f) == pytest.approx(float(melnikov_synthesis(np.array(A), f, OM)), abs=1e-10)


def test_conjugate_symmetry():
    g = melnikov_coefficient((2, -1), OM, 0.3 + 0.4j)
    h = melnikov_coefficient((-2, 1), OM, 0.3 - 0.4j)
    assert g == pytest.approx(h.conjugate(), abs=1e-15)


def test_shift_identity():
    theta = 0.8
    A = np.array([0.1, 4.0])
    a = melnikov_synthesis(A + OM.array * theta, F_FACTOR, OM)
    assert melnikov_primitive(A + OM.array * theta, OM, F_FACTOR) == pytest.approx(float(a), abs=1e-10)


def test_gradient_matches_finite_difference():
    A = np.array([0.7, 2.5])
    h = 1e-6
    g = melnikov_gradient(A, F_FACTOR, OM)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (melnikov_synthesis(A + e, F_FACTOR, OM) - melnikov_synthesis(A - e, F_FACTOR, OM)) / (2 * h)
        assert g[j] == pytest.approx(fd, abs=1e-8)


def test_general_potential_reduces_to_gamma():
    A = (1.1, 0.4)
    assert melnikov_general(A, OM, F_FACTOR) == pytest.approx(float(melnikov_synthesis(np.array(A), F_FACTOR, OM)), abs=1e-10)


def test_q_independent_part_drops_out():
    f = PerturbationSeries({(1, 0, 0): 0.5, (-1, 0, 0): 0.5}, q_mode="general")
    assert abs(melnikov_general((0.3, 0.9), OM, f)) < 1e-12


def test_sinq_potential_oracle():
    om1 = FrequencyVector((1.0,))
    f = PerturbationSeries({(1, 1): -0.25j, (-1, 1): -0.25j, (1, -1): 0.25j, (-1, -1): 0.25j},
                           q_mode="general")
    assert melnikov_general((0.7,), om1, f) == pytest.approx(M_SINQ_COSPHI1, abs=1e-10)
    assert melnikov_general((0.7, 0.3), OM, SINQ_COS) == pytest.approx(M_SINQ_COSPHI1, abs=1e-10)


# grids -----------------------------------------------------------------------

def test_fourier_recovers_modes():
    g = first_order_grid(F_FACTOR, OM, (16, 16))
    rep = fourier_of_grid(g, cutoff=1e-12)
    assert set(rep.coefficients) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    expected = -0.5 * melnikov_kernel(OM.array[1])
    assert rep.coefficients[(0, 1)] == pytest.approx(expected, abs=1e-13)
    assert rep.aliasing_bound < 1e-14


def test_fourier_of_constant_grid():
    rep = fourier_of_grid(HomoclinicGrid(np.full((8, 8), 3.0), "test", 0.0), cutoff=1e-14)
    assert rep.coefficients == {(0, 0): pytest.approx(3.0)}


def test_interpolated_minimum_matches_grid_minimum():
    g = first_order_grid(F_FACTOR, OM, (16, 16))
    fine = first_order_grid(F_FACTOR, OM, (256, 256))
    dense = g.evaluate(fine.points())
    np.testing.assert_allclose(dense, fine.samples, atol=1e-12)
    assert abs(dense.min() - fine.samples.min()) < 1e-6


def test_evaluate_box_matches_evaluate():
    g = first_order_grid(F_FACTOR, OM, (16, 16))
    axes, vals = g.evaluate_box((1.0, 2.0), 0.3, 0.1)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    np.testing.assert_allclose(vals, g.evaluate(pts), atol=1e-12)


def test_grid_text_round_trip():
    g = first_order_grid(F_FACTOR, OM, (6, 5))
    h = HomoclinicGrid.from_text(g.to_text())
    assert np.array_equal(g.samples, h.samples)
    assert h.kind == g.kind and h.mu == g.mu


def test_unperturbed_grid_is_eight():
    g = compute_grid("glued", 0.0, F_FACTOR, OM, (3, 3))
    np.testing.assert_allclose(g.samples, 8.0, atol=1e-10)


def test_grid_independent_of_worker_count():
    a = compute_grid("glued", 1e-3, F_FACTOR, OM, (3, 2), workers=1)
    b = compute_grid("glued", 1e-3, F_FACTOR, OM, (3, 2), workers=2)
    assert np.array_equal(a.samples, b.samples)
    assert a.meta == b.meta


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        compute_grid("bogus", 0.0, F_FACTOR, OM, (2, 2))
