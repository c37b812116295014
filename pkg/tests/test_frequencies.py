import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splitlab.errors import BudgetError, ResolutionError
from splitlab.frequencies import (FrequencyVector, PerturbationSeries, QMode, diophantine_margin,
                                  ergodization_time, evaluate_perturbation, format_mode_table,
                                  parse_mode_table, read_perturbation, write_perturbation)

PHI = (1 + math.sqrt(5)) / 2

# brute-force loops in tests/oracles/generate.py
MARGIN_GOLDEN = 0.6180339887498949
MARGIN_3TS = 0.01
ERGODIZATION_GOLDEN_HALF = 18.744


def test_resonant_margin_is_zero():
    margin, k = diophantine_margin(FrequencyVector((1.0, 1.0), tau=1.0), 2)
    assert margin == 0.0
    assert k == (1, -1)


def test_golden_margin_matches_exhaustive_scan():
    margin, k = diophantine_margin(FrequencyVector((1.0, PHI), tau=1.0), 100)
    assert margin == pytest.approx(MARGIN_GOLDEN, rel=1e-14)
    assert k == (1, -1)


def test_three_time_scale_margin():
    om = FrequencyVector.three_time_scale(0.01, 1.0)
    assert om.omega == pytest.approx((10.0, 0.01))
    margin, k = diophantine_margin(FrequencyVector(om.omega, tau=2.0), 50)
    assert margin == pytest.approx(MARGIN_3TS, rel=1e-12)
    assert k == (0, 1)


def test_margin_budget_guard():
    with pytest.raises(BudgetError):
        diophantine_margin(FrequencyVector((1.0, PHI, 2.0)), 100, budget=1000)


@given(st.floats(0.05, 3.0), st.integers(1, 20))
def test_margin_nonincreasing_in_K(w2, K):
    om = FrequencyVector((1.0, w2))
    assert diophantine_margin(om, K + 1)[0] <= diophantine_margin(om, K)[0]


def test_ergodization_one_rotation():
    res = ergodization_time(math.pi, FrequencyVector((1.0,)))
    assert res.covered and res.time <= 2 * math.pi


def test_ergodization_golden_against_covering_oracle():
    res = ergodization_time(0.5, FrequencyVector((1.0, PHI)))
    # oracle steps of 1e-3 against half-cell steps here
    assert res.time == pytest.approx(ERGODIZATION_GOLDEN_HALF, abs=0.05)
    assert res.proxy == pytest.approx(2.0)


def test_ergodization_halving_alpha_never_faster():
    om = FrequencyVector((1.0, PHI))
    times = [ergodization_time(a, om).time for a in (1.0, 0.5, 0.25)]
    assert times[0] <= times[1] <= times[2]


def test_ergodization_resolution_guard():
    with pytest.raises(ResolutionError):
        ergodization_time(1e-3, FrequencyVector((1.0, PHI)), max_cells=2**16)


def test_perturbation_trivial_values():
    f0 = PerturbationSeries({(0, 0): 1.0})
    assert evaluate_perturbation(f0, (0.3, 0.1), math.pi) == pytest.approx(2.0)
    assert evaluate_perturbation(f0, (0.3, 0.1), 0.0) == 0.0
    f1 = PerturbationSeries.cosines({(1, 0): 1.0})
    assert evaluate_perturbation(f1, (0.0, 0.0), math.pi) == pytest.approx(2.0)


def test_real_series_has_no_imaginary_part():
    rng = np.random.default_rng(3)
    f = PerturbationSeries.cosines({(1, 0): 0.7, (2, -1): 0.2, (0, 3): -0.4, (0, 0): 1.0})
    phi = rng.uniform(0, 2 * math.pi, (10_000, 2))
    q = rng.uniform(0, 2 * math.pi, 10_000)
    z = evaluate_perturbation(f, phi, q, complex_out=True)
    assert np.abs(z.imag).max() < 1e-12
    assert f.reality_defect() == 0.0


def test_general_and_factor_forms_agree():
    f = PerturbationSeries.cosines({(1, 1): 0.5, (0, 0): 0.25})
    g = f.as_general()
    assert g.q_mode is QMode.GENERAL
    rng = np.random.default_rng(0)
    phi = rng.uniform(0, 6, (50, 2))
    q = rng.uniform(0, 6, 50)
    np.testing.assert_allclose(f.value(phi, q), g.value(phi, q), atol=1e-14)
    np.testing.assert_allclose(f.dq(phi, q), g.dq(phi, q), atol=1e-14)
    np.testing.assert_allclose(f.dphi(phi, q), g.dphi(phi, q), atol=1e-14)


def test_mode_table_round_trip(tmp_path):
    f = PerturbationSeries({(1, -2): 0.3 - 0.1j, (-1, 2): 0.3 + 0.1j}, widths=(0.5, 0.5))
    path = tmp_path / "modes.txt"
    write_perturbation(f, path)
    g = read_perturbation(path)
    assert g.coefficients == f.coefficients
    assert g.widths == f.widths
    coefs, header = parse_mode_table(format_mode_table(f.coefficients, {"n": 2}))
    assert coefs == f.coefficients and header == {"n": "2"}


def test_malformed_mode_line():
    with pytest.raises(ValueError):
        parse_mode_table("1 2\n")


def test_frequency_vector_validation():
    with pytest.raises(ValueError):
        FrequencyVector((1.0, float("nan")))
    with pytest.raises(ValueError):
        FrequencyVector((1.0, 2.0), gamma=-1.0)
