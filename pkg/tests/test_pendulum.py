import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from splitlab.errors import RefusalError
from splitlab.frequencies import FrequencyVector, PerturbationSeries
from splitlab.pendulum import (SolverOptions, psi_qdot_integral, separatrix,
                               solve_constrained_heteroclinic, solve_general_heteroclinic,
                               solve_glued_heteroclinic)
from splitlab.torus import solve_invariant_torus, trivial_torus

PSI_QDOT = 0.8  # mpmath quadrature, tests/oracles/generate.py
OM = FrequencyVector((1.0, (math.sqrt(5) - 1) / 2))
F_FACTOR = PerturbationSeries.cosines({(1, 0): 1.0, (0, 1): 1.0})
F0 = PerturbationSeries({(0, 0): 1.0})


def test_separatrix_at_theta():
    q, qd = separatrix(1.3, 1.3)
    assert q == pytest.approx(math.pi, abs=1e-15)
    assert qd == pytest.approx(2.0, abs=1e-15)


def test_separatrix_asymptotics():
    q, qd = separatrix(60.0)
    assert q == pytest.approx(2 * math.pi, abs=1e-12)
    assert qd < 1e-20


@given(st.floats(-30, 30), st.floats(-5, 5))
def test_separatrix_zero_energy(t, theta):
    q, qd = separatrix(t, theta)
    assert abs(qd**2 / 2 + math.cos(q) - 1) < 1e-12


def test_separatrix_solves_pendulum_equation():
    sol = solve_ivp(lambda t, y: [y[1], math.sin(y[0])], (0, 8), [math.pi, 2.0],
                    rtol=1e-12, atol=1e-12, dense_output=True)
    t = np.linspace(0, 8, 50)
    np.testing.assert_allclose(sol.sol(t)[0], separatrix(t)[0], atol=1e-8)


def test_unperturbed_glued_orbit_is_separatrix():
    orb = solve_glued_heteroclinic(0.0, (0.2, 0.4), 0.7, F_FACTOR, OM)
    ref, _ = separatrix(orb.t, 0.7)
    assert np.abs(orb.q - ref).max() < 1e-9
    assert abs(orb.jump) < 1e-8
    assert orb.multiplier is None


def test_f0_perturbation_residual_and_boundary():
    opts = SolverOptions()
    orb = solve_glued_heteroclinic(1e-3, (0.0, 0.0), 0.0, F0, OM, opts)
    assert orb.residual < 1e-9
    lo, hi = orb.boundary_values()
    assert abs(lo) < opts.eps_bc and abs(hi - 2 * math.pi) < opts.eps_bc
    assert orb(np.array([0.0]))[0] == pytest.approx(math.pi, abs=1e-14)


def test_theta_derivative_matches_time_translation():
    h = 1e-3
    t = np.linspace(-3, 3, 13)
    plus = solve_glued_heteroclinic(0.0, (0, 0), h, F_FACTOR, OM)(t)
    minus = solve_glued_heteroclinic(0.0, (0, 0), -h, F_FACTOR, OM)(t)
    _, qd = separatrix(t)
    np.testing.assert_allclose((plus - minus) / (2 * h), -qd, atol=1e-6)


def test_psi_qdot_integral_oracle():
    assert psi_qdot_integral() == pytest.approx(PSI_QDOT, abs=1e-12)


def test_constrained_unperturbed():
    orb = solve_constrained_heteroclinic(0.0, (0, 0), 0.3, F_FACTOR, OM)
    assert abs(orb.multiplier) < 1e-12
    ref, _ = separatrix(orb.t, 0.3)
    assert np.abs(orb.q - ref).max() < 1e-9


def test_constrained_multiplier_is_order_mu():
    ratios = []
    for mu in (1e-2, 1e-3, 1e-4):
        orb = solve_constrained_heteroclinic(mu, (0.4, 1.1), 0.0, F_FACTOR, OM)
        assert abs(orb.extra["constraint"]) < 1e-10
        ratios.append(abs(orb.multiplier) / mu)
    assert max(ratios) < 2 * min(ratios)


def test_general_orbit_reduces_to_glued_for_factor_f():
    A = (0.9, 2.0)
    glued = solve_glued_heteroclinic(1e-3, A, 0.0, F_FACTOR, OM)
    gen = solve_general_heteroclinic(1e-3, A, 0.0, trivial_torus(OM), F_FACTOR, OM)
    assert np.abs(glued.q - gen.q).max() < 1e-10


def test_general_orbit_unperturbed():
    f = PerturbationSeries({(1, 0, 1): -0.25j, (-1, 0, 1): -0.25j, (1, 0, -1): 0.25j,
                            (-1, 0, -1): 0.25j}, q_mode="general")
    orb = solve_general_heteroclinic(0.0, (0, 0), 0.0, trivial_torus(OM), f, OM)
    assert np.abs(orb.q - separatrix(orb.t)[0]).max() < 1e-9


def test_general_orbit_sinq_defect():
    # sin q cos phi_1 in general form
    f = PerturbationSeries({(1, 0, 1): -0.25j, (-1, 0, 1): -0.25j, (1, 0, -1): 0.25j,
                            (-1, 0, -1): 0.25j}, q_mode="general")
    tor = solve_invariant_torus(1e-3, f, OM, 8)
    orb = solve_general_heteroclinic(1e-3, (0.5, 0.2), 0.0, tor, f, OM)
    assert orb.residual < 1e-9


def test_large_mu_refused():
    with pytest.raises(RefusalError):
        solve_glued_heteroclinic(5.0, (0, 0), 0.0, F_FACTOR, OM)


def test_doubling_cutoff_changes_little():
    from splitlab.melnikov import orbit_action
    a = orbit_action(solve_glued_heteroclinic(1e-2, (0.3, 0.3), 0.0, F_FACTOR, OM,
                                              SolverOptions(t_cut=12.0)), F_FACTOR, OM)
    b = orbit_action(solve_glued_heteroclinic(1e-2, (0.3, 0.3), 0.0, F_FACTOR, OM,
                                              SolverOptions(t_cut=24.0)), F_FACTOR, OM)
    assert abs(a - b) < 10 * math.exp(-12.0)


def test_orbit_table_lists_every_node():
    orb = solve_glued_heteroclinic(0.0, (0, 0), 0.0, F_FACTOR, OM)
    lines = orb.to_table().splitlines()
    assert len(lines) == orb.mesh.size + 2
