import numpy as np
import pytest

from gvcontrol.costate import solve_costate
from gvcontrol.forward import ForwardOptions, solve_forward
from gvcontrol.gradient import (
    control_inner,
    cost,
    fd_directional,
    first_variation_raw,
    gradient,
    linearized_state_variation,
)
from gvcontrol.grid import ScalarField2, cum_integral_st, make_grid
from gvcontrol.problem import (
    ControlBoxes,
    ControlField,
    ProblemDef,
    UJac,
)

from conftest import random_linear_problem


def _no_controls(g):
    return ControlField.constant(g, ControlBoxes.bounds(-1, 1, 0, 0, 0))


def test_cost_is_weighted_quadrature():
    g = make_grid(1.0, 2.0, 4, 6)
    p = ProblemDef(
        n=1, p1=0, p2=0, p12=0,
        f0=lambda s, t, u1, u2, u12: s * t,
        F0=lambda y, u1, u2, u12: 10.0 * float(y[0]),
        F1=lambda s, y, u1, u2, u12: s,
        F2=lambda t, y, u1, u2, u12: np.ones_like(t),
        F12=lambda s, t, y, u1, u2, u12: y[..., 0],
    )
    u = _no_controls(g)
    y = solve_forward(p, u, g).y
    J = cost(p, y, u, g)
    # F0 = 10 A B; int s ds = A^2/2 (exact for trapezoid); int 1 dt = B;
    # int int s t = (A^2/2)(B^2/2), again exact
    expect = 10.0 * g.A * g.B + g.A ** 2 / 2 + g.B \
        + (g.A ** 2 / 2) * (g.B ** 2 / 2)
    assert J == pytest.approx(expect, rel=1e-13)


def _quadratic_u12(c: float = 0.4, rho: float = 2.0):
    return ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        F12=lambda s, t, y, u1, u2, u12: 0.5 * rho * (u12[..., 0] - c) ** 2,
        du_F12=UJac(u12=lambda s, t, y, u1, u2, u12: rho * (u12 - c)),
    )


def test_pure_control_cost_gradient_is_pointwise():
    g = make_grid(1.0, 1.0, 5, 7)
    c, rho = 0.4, 2.0
    p = _quadratic_u12(c, rho)
    boxes = ControlBoxes.bounds(-3.0, 3.0, 0, 0, 1)
    rng = np.random.default_rng(3)
    u = ControlField(np.zeros((6, 0)), np.zeros((8, 0)),
                     rng.uniform(-1, 1, (6, 8, 1)), boxes)
    y = solve_forward(p, u, g).y
    psi = solve_costate(p, y, u, g)
    G = gradient(p, y, u, psi, g)
    assert np.allclose(G.g_u12, rho * (u.u12 - c), atol=1e-14)
    assert G.g_u1.shape == (6, 0) and G.g_u2.shape == (8, 0)
    # stationary exactly at u12 = c
    uc = ControlField.constant(g, boxes, v12=(c,))
    yc = solve_forward(p, uc, g).y
    Gc = gradient(p, yc, uc, solve_costate(p, yc, uc, g), g)
    assert not Gc.g_u12.any()


def test_fd_matches_exactly_for_quadratic_cost():
    g = make_grid(1.0, 1.0, 4, 4)
    p = _quadratic_u12()
    boxes = ControlBoxes.bounds(-3.0, 3.0, 0, 0, 1)
    u = ControlField.constant(g, boxes, v12=(0.9,))
    y = solve_forward(p, u, g).y
    G = gradient(p, y, u, solve_costate(p, y, u, g), g)
    rng = np.random.default_rng(11)
    du = (np.zeros((5, 0)), np.zeros((5, 0)), rng.uniform(-1, 1, (5, 5, 1)))
    chk = fd_directional(p, u, du, g, eps=1e-3)
    want = control_inner(G, du, g)
    # J is exactly quadratic in the step, so the central difference is
    # exact up to rounding and Richardson changes nothing
    assert chk.d == pytest.approx(want, rel=1e-10)
    assert chk.richardson == pytest.approx(want, rel=1e-9)
    assert chk.eps == 1e-3


def _lq_tracking(g):
    """f12 = u12, J = 1/2 int int y^2; state is the double integral of
    the control."""
    p = ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        f12=lambda s, t, sig, tau, y, u1, u2, u12: u12[..., :1],
        du_f12=UJac(u12=lambda s, t, sig, tau, y, u1, u2, u12: np.ones(
            np.broadcast_shapes(np.shape(sig), np.shape(tau)) + (1, 1))),
        F12=lambda s, t, y, u1, u2, u12: 0.5 * y[..., 0] ** 2,
        dy_F12=lambda s, t, y, u1, u2, u12: y,
        L12=0.0,
    )
    boxes = ControlBoxes.bounds(-4.0, 4.0, 0, 0, 1)
    rng = np.random.default_rng(5)
    u = ControlField(np.zeros((g.Ns + 1, 0)), np.zeros((g.Nt + 1, 0)),
                     rng.uniform(-1, 1, (g.Ns + 1, g.Nt + 1, 1)), boxes)
    return p, u


def test_gradient_through_dynamics_closed_form():
    # psi12 = y (row covector) and the u12 gradient is its reflected
    # double cumulative, folded with no edge terms for this cost
    g = make_grid(1.0, 1.0, 6, 5)
    p, u = _lq_tracking(g)
    y = solve_forward(p, u, g, ForwardOptions(tol=1e-13)).y
    psi = solve_costate(p, y, u, g, tol=1e-13)
    assert np.allclose(psi.psi12.values, y.values, atol=1e-12)
    G = gradient(p, y, u, psi, g)
    expect = np.einsum("ia,jb,abn->ijn", g.Wus, g.Wut, psi.psi12.values)
    assert np.allclose(G.g_u12, expect, atol=1e-12)


def test_gradient_matches_fd_through_dynamics(rng):
    g = make_grid(1.0, 1.0, 6, 6)
    p, u = _lq_tracking(g)
    y = solve_forward(p, u, g, ForwardOptions(tol=1e-13)).y
    psi = solve_costate(p, y, u, g, tol=1e-13)
    G = gradient(p, y, u, psi, g)
    for _ in range(3):
        du = (np.zeros((7, 0)), np.zeros((7, 0)),
              rng.uniform(-1, 1, (7, 7, 1)))
        want = control_inner(G, du, g)
        chk = fd_directional(p, u, du, g, eps=1e-3)
        assert chk.richardson == pytest.approx(want, rel=1e-9)


def test_linearized_state_is_double_cumulative():
    g = make_grid(1.0, 1.0, 5, 6)
    p, u = _lq_tracking(g)
    y = solve_forward(p, u, g, ForwardOptions(tol=1e-13)).y
    rng = np.random.default_rng(7)
    du12 = rng.uniform(-1, 1, (6, 7, 1))
    du = (np.zeros((6, 0)), np.zeros((7, 0)), du12)
    dy = linearized_state_variation(p, y, u, du, g)
    expect = cum_integral_st(ScalarField2(du12.copy()), g)
    assert np.allclose(dy.values, expect.values, atol=1e-13)


def test_first_variation_routes_agree(rng):
    g = make_grid(1.0, 1.0, 6, 6)
    p, u = _lq_tracking(g)
    y = solve_forward(p, u, g, ForwardOptions(tol=1e-13)).y
    psi = solve_costate(p, y, u, g, tol=1e-13)
    G = gradient(p, y, u, psi, g)
    for _ in range(4):
        du = (np.zeros((7, 0)), np.zeros((7, 0)),
              rng.uniform(-1, 1, (7, 7, 1)))
        a = control_inner(G, du, g)
        b = first_variation_raw(p, y, u, du, g)
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_first_variation_on_random_linear_state_costs(rng):
    # no controls at all: both routes must see zero variation
    g = make_grid(1.0, 1.0, 5, 5)
    p, mk = random_linear_problem(rng)
    u = mk(g)
    y = solve_forward(p, u, g, ForwardOptions(tol=1e-12)).y
    du = (np.zeros((6, 0)), np.zeros((6, 0)), np.zeros((6, 6, 0)))
    assert first_variation_raw(p, y, u, du, g) == 0.0
    G = gradient(p, y, u, solve_costate(p, y, u, g), g)
    assert control_inner(G, du, g) == 0.0


def test_control_inner_weights_and_forms():
    g = make_grid(1.5, 2.0, 3, 4)
    boxes = ControlBoxes.bounds(-2.0, 2.0, 1, 1, 1)
    ones = ControlField.constant(g, boxes, v1=(1.0,), v2=(1.0,), v12=(1.0,))
    val = control_inner(ones, ones, g)
    assert val == pytest.approx(g.A + g.B + g.A * g.B, rel=1e-13)
    tup = (ones.u1, ones.u2, ones.u12)
    assert control_inner(tup, ones, g) == pytest.approx(val, rel=1e-15)


def test_endpoint_cost_folds_into_last_node():
    # J = 1/2 u1(A)^2 has a pure endpoint gradient
    g = make_grid(1.0, 1.0, 4, 4)
    p = ProblemDef(
        n=1, p1=1, p2=0, p12=0,
        F0=lambda y, u1, u2, u12: 0.5 * float(u1[0]) ** 2,
        du_F0=UJac(u1=lambda y, u1, u2, u12: u1),
    )
    boxes = ControlBoxes.bounds(-2.0, 2.0, 1, 0, 0)
    u = ControlField.constant(g, boxes, v1=(0.8,))
    y = solve_forward(p, u, g).y
    psi = solve_costate(p, y, u, g)
    G = gradient(p, y, u, psi, g)
    assert not G.g_u1[:-1].any()
    assert G.g_u1[-1, 0] == pytest.approx(0.8 / g.ws[-1], rel=1e-13)
    assert G.g_end.u1[0] == pytest.approx(0.8, rel=1e-13)
    # pairing against any direction reproduces dJ = u1(A) du1(A)
    du = (np.full((5, 1), 0.3), np.zeros((5, 0)), np.zeros((5, 5, 0)))
    assert control_inner(G, du, g) == pytest.approx(0.8 * 0.3, rel=1e-12)
    chk = fd_directional(p, u, du, g, eps=1e-3)
    assert chk.d == pytest.approx(0.8 * 0.3, rel=1e-10)


def test_density_cost_gradient_is_identity():
    # J = 1/2 int u1(s)^2 ds: the density gradient equals u1 itself
    g = make_grid(1.0, 1.0, 5, 5)
    p = ProblemDef(
        n=1, p1=1, p2=0, p12=0,
        F1=lambda s, y, u1, u2, u12: 0.5 * u1[:, 0] ** 2,
        du_F1=UJac(u1=lambda s, y, u1, u2, u12: u1),
    )
    boxes = ControlBoxes.bounds(-2.0, 2.0, 1, 0, 0)
    rng = np.random.default_rng(9)
    u = ControlField(rng.uniform(-1, 1, (6, 1)), np.zeros((6, 0)),
                     np.zeros((6, 6, 0)), boxes)
    y = solve_forward(p, u, g).y
    G = gradient(p, y, u, solve_costate(p, y, u, g), g)
    assert np.allclose(G.g_u1, u.u1, atol=1e-14)
