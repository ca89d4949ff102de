import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvcontrol.errors import TruncationError
from gvcontrol.grid import ScalarField2, make_grid
from gvcontrol.gronwall import (
    check_comparison,
    gronwall_bound,
    gronwall_coeffs,
    gronwall_eval,
)
from gvcontrol.gvlinalg import KernelTriple, solve_linear

I0_AT_2 = 2.2795853023360673  # modified Bessel I0(2), frozen from mpmath


def test_coeff_recursion_base_cases():
    co = gronwall_coeffs(1.0, 0.7, 0.4, 0.9, 4, 4)
    assert co.C[0, 0] == 1.0
    assert np.allclose(co.C[:, 0], [0.7 ** k / math.factorial(k)
                                    for k in range(5)])
    assert np.allclose(co.C[0, :], [0.4 ** l / math.factorial(l)
                                    for l in range(5)])
    # C[1,1] = B1 B2 + B2 B1 + B12
    assert co.C[1, 1] == pytest.approx(2 * 0.7 * 0.4 + 0.9, rel=1e-15)
    assert co.kmax == 4 and co.lmax == 4


def test_coeff_validation():
    with pytest.raises(ValueError):
        gronwall_coeffs(1.0, 1.0, 1.0, 1.0, -1, 4)
    with pytest.raises(ValueError):
        gronwall_coeffs(-1.0, 1.0, 1.0, 1.0, 4, 4)


def test_single_variable_collapse():
    # B2 = B12 = 0 leaves the one-variable wall A0 e^{B1 ds}
    co = gronwall_coeffs(2.0, 0.8, 0.0, 0.0, 40, 40)
    assert not co.C[1:, 1:].any()
    for ds in (0.0, 0.5, 1.3):
        got = gronwall_eval(co, ds, 7.0)  # dt value is inert here
        assert got == pytest.approx(2.0 * math.exp(0.8 * ds), rel=1e-13)


def test_bessel_diagonal_series():
    # B1 = B2 = 0, B12 = 1: zeta(s,t) = I0(2 sqrt(s t))
    co = gronwall_coeffs(1.0, 0.0, 0.0, 1.0, 40, 40)
    off = co.C.copy()
    np.fill_diagonal(off, 0.0)
    assert not off.any()
    assert gronwall_eval(co, 1.0, 1.0) == pytest.approx(I0_AT_2, abs=1e-13)


def test_eval_raises_on_uncertified_tail():
    co = gronwall_coeffs(1.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(TruncationError) as ei:
        gronwall_eval(co, 3.0, 3.0)
    assert ei.value.tail_bound > 0
    with pytest.raises(ValueError):
        gronwall_eval(co, -1.0, 0.0)


def test_series_matches_constant_kernel_solve():
    # the extremal series is the solution of the constant-kernel linear
    # equation, so solve_linear must reproduce it to quadrature order
    A0, B1, B2, B12 = 1.0, 0.5, 0.3, 0.4
    co = gronwall_coeffs(A0, B1, B2, B12, 40, 40)
    want = gronwall_eval(co, 1.0, 1.0)
    errs = []
    for n in (16, 32):
        g = make_grid(1.0, 1.0, n, n)
        K = KernelTriple.constants(g, B1, B2, B12)
        z = solve_linear(K, ScalarField2.full(g, A0), g, 1e-12)
        errs.append(abs(float(z.values[-1, -1, 0]) - want))
    assert errs[0] <= 5e-3
    assert errs[1] <= errs[0] / 3.0


def test_bound_dominates_series_inside_regime(rng):
    # product form A0 exp(3 B ds dt) dominates once 1/ds + 1/dt <= 1
    for _ in range(20):
        B1, B2 = rng.uniform(0.0, 1.0, 2)
        B12 = rng.uniform(0.0, 1.0)
        co = gronwall_coeffs(1.0, B1, B2, B12, 48, 48)
        for ds in (2.0, 3.0):
            for dt in (2.0, 2.5):
                val = gronwall_eval(co, ds, dt)
                bnd = gronwall_bound(1.0, B1, B2, B12, ds, dt)
                assert val <= bnd * (1 + 1e-12)


def test_bound_fails_outside_regime():
    # at (ds, dt) = (1, 0) the series is e^{B1} but the product form
    # degenerates to A0; the regime restriction is not an artifact
    co = gronwall_coeffs(1.0, 1.0, 0.0, 0.0, 30, 30)
    val = gronwall_eval(co, 1.0, 0.0)
    assert val == pytest.approx(math.e, rel=1e-13)
    assert gronwall_bound(1.0, 1.0, 0.0, 0.0, 1.0, 0.0) == 1.0
    assert gronwall_bound(1.0, 1.0, 0.0, 0.0, 1.0, 0.0) < val


def test_bound_validation():
    with pytest.raises(ValueError):
        gronwall_bound(1.0, 1.0, 1.0, 1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        gronwall_bound(-1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@settings(deadline=None, max_examples=40)
@given(
    B1=st.floats(min_value=-1.5, max_value=1.5),
    B2=st.floats(min_value=-1.5, max_value=1.5),
    B12=st.floats(min_value=-2.0, max_value=2.0),
)
def test_coefficient_bound_holds(B1, B2, B12):
    # |C[k,l]| <= (3B)^{k+l} / (k! l!), B = max(|B1|,|B2|,sqrt(|B12|/3))
    co = gronwall_coeffs(1.0, B1, B2, B12, 12, 12)
    B = max(abs(B1), abs(B2), math.sqrt(abs(B12) / 3.0))
    for k in range(13):
        for l in range(13):
            cap = (3.0 * B) ** (k + l) / (
                math.factorial(k) * math.factorial(l))
            assert abs(co.C[k, l]) <= cap * (1 + 1e-12) + 1e-300


def test_comparison_check_on_random_nonnegative(rng):
    g = make_grid(1.0, 1.0, 8, 8)
    for _ in range(5):
        n1s, n1t = g.shape
        phi = KernelTriple(
            rng.uniform(0.0, 0.6, (n1s, n1t, n1s)),
            rng.uniform(0.0, 0.6, (n1s, n1t, n1t)),
            rng.uniform(0.0, 0.6, (n1s, n1t, n1s, n1t)),
        )
        zf = ScalarField2(rng.uniform(0.0, 2.0, (n1s, n1t, 1)))
        ok, margin = check_comparison(zf, phi, g)
        assert ok
        assert margin >= -1e-10


def test_comparison_check_rejects_signed_input(rng):
    g = make_grid(1.0, 1.0, 4, 4)
    phi = KernelTriple.constants(g, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        check_comparison(ScalarField2.full(g, -1.0), phi, g)
    bad = KernelTriple.constants(g, -0.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        check_comparison(ScalarField2.full(g, 1.0), bad, g)
