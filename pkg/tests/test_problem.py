import numpy as np
import pytest

from gvcontrol.errors import NumericalError
from gvcontrol.grid import make_grid
from gvcontrol.problem import (
    Box,
    ControlBoxes,
    ControlField,
    IndependenceFlags,
    ProblemDef,
    UJac,
    eval_f0,
    eval_f1,
    eval_f2,
    eval_f12,
    eval_F0,
    eval_F1,
    eval_F2,
    eval_F12,
    eval_dy_f1,
    eval_map,
    validate_problem,
)


# ------------------------------------------------------------------ boxes


def test_box_construction_and_clip():
    b = Box.bounds(-1.0, 2.0, 3)
    assert b.dim == 3
    assert np.array_equal(b.clip(np.array([-5.0, 0.5, 9.0])), [-1.0, 0.5, 2.0])
    assert b.contains(np.array([0.0, 0.0, 0.0]))
    assert not b.contains(np.array([0.0, 0.0, 2.5]))
    assert b.contains(np.array([0.0, 0.0, 2.5]), slack=1.0)


def test_box_rejects_inverted_and_mismatched():
    with pytest.raises(ValueError):
        Box(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        Box(np.zeros(2), np.ones(3))


def test_box_sample_respects_bounds(rng):
    b = Box.bounds(0.5, 0.75, 4)
    x = b.sample(rng, lead_shape=(10,))
    assert x.shape == (10, 4)
    assert b.contains(x)
    # infinite sides fall back to a finite window, never nan/inf
    u = Box.unbounded(2).sample(rng, lead_shape=(5,))
    assert np.isfinite(u).all()
    half = Box(np.array([3.0]), np.array([np.inf])).sample(rng, (20,))
    assert (half >= 3.0).all() and np.isfinite(half).all()


def test_control_field_constant_and_validation():
    g = make_grid(1.0, 1.0, 3, 4)
    boxes = ControlBoxes.bounds(-1.0, 1.0, 1, 2, 1)
    u = ControlField.constant(g, boxes, v1=(0.5,), v2=(0.1, -0.2), v12=(0.0,))
    assert u.u1.shape == (4, 1)
    assert u.u2.shape == (5, 2)
    assert u.u12.shape == (4, 5, 1)
    assert u.grid_shape == g.shape
    u.check_grid(g)
    with pytest.raises(ValueError):
        u.check_grid(make_grid(1.0, 1.0, 4, 4))
    c = u.copy()
    c.u12[0, 0, 0] = 0.9
    assert u.u12[0, 0, 0] == 0.0

    with pytest.raises(ValueError):  # sample outside the box
        ControlField(np.full((4, 1), 2.0), u.u2, u.u12, boxes)
    with pytest.raises(ValueError):  # lattice mismatch between blocks
        ControlField(np.zeros((3, 1)), u.u2, u.u12, boxes)
    with pytest.raises(ValueError):  # block dim vs box dim
        ControlField(np.zeros((4, 2)), u.u2, u.u12, boxes)


def test_independence_flags_lookup():
    fl = IndependenceFlags(f1_u12=True)
    assert fl.independent("f1", "u12")
    assert not fl.independent("f2", "u12")
    assert not fl.independent("f0", "u1")


def test_problem_def_validation():
    with pytest.raises(ValueError):
        ProblemDef(n=0, p1=0, p2=0, p12=0)
    with pytest.raises(ValueError):
        ProblemDef(n=1, p1=-1, p2=0, p12=0)
    with pytest.raises(ValueError):
        ProblemDef(n=1, p1=0, p2=0, p12=0, L1=-0.5)
    p = ProblemDef(n=2, p1=1, p2=0, p12=3)
    assert p.pdims == {"u1": 1, "u2": 0, "u12": 3}


# ------------------------------------------------------------- evaluation


def _empty_controls(g):
    return ControlField.constant(g, ControlBoxes.bounds(-1, 1, 0, 0, 0))


def test_eval_map_zero_and_scalar_convenience():
    out = eval_map(None, (), (3, 4), (2,), "f1")
    assert out.shape == (3, 4, 2) and not out.any()
    # an n = 1 problem may return plain lattice-shaped arrays
    out = eval_map(lambda: np.ones((3, 4)), (), (3, 4), (1,), "f12")
    assert out.shape == (3, 4, 1)
    with pytest.raises(NumericalError, match="f2 returned shape"):
        eval_map(lambda: np.ones((3, 5)), (), (3, 4), (1,), "f2")
    with pytest.raises(NumericalError, match="evaluation of f1 failed"):
        eval_map(lambda: 1 / 0, (), (3,), (1,), "f1")


def test_dynamics_state_argument_conventions():
    # f1 sees y(sig, t), f2 sees y(s, tau), f12 sees y(sig, tau)
    g = make_grid(1.0, 1.0, 3, 4)
    u = _empty_controls(g)
    yv = (g.s_nodes[:, None] + 10.0 * g.t_nodes[None, :])[:, :, None]
    echo = lambda *args: args[-4]  # the y slot for each kernel signature
    p = ProblemDef(n=1, p1=0, p2=0, p12=0,
                   f1=lambda s, t, sig, y, u1, u2, u12: y,
                   f2=lambda s, t, tau, y, u1, u2, u12: y,
                   f12=lambda s, t, sig, tau, y, u1, u2, u12: y)
    del echo
    F1 = eval_f1(p, yv, u, g)
    F2 = eval_f2(p, yv, u, g)
    F12 = eval_f12(p, yv, u, g)
    s, t = g.s_nodes, g.t_nodes
    assert np.allclose(F1, (s[None, None, :] + 10.0 * t[None, :, None])[..., None])
    assert np.allclose(F2, (s[:, None, None] + 10.0 * t[None, None, :])[..., None])
    assert np.allclose(
        F12,
        (s[None, None, :, None] + 10.0 * t[None, None, None, :])
        [..., None] * np.ones((4, 5, 1, 1, 1)),
    )


def test_dynamics_control_argument_conventions():
    # u12 reaches f1 at (sig, t), f2 at (s, tau), f12 at (sig, tau)
    g = make_grid(1.0, 1.0, 2, 3)
    boxes = ControlBoxes.bounds(-100.0, 100.0, 0, 0, 1)
    u12 = (np.arange(3)[:, None] + 10.0 * np.arange(4)[None, :])[:, :, None]
    u = ControlField(np.zeros((3, 0)), np.zeros((4, 0)), u12, boxes)
    yv = np.zeros((3, 4, 1))
    p = ProblemDef(n=1, p1=0, p2=0, p12=1,
                   f1=lambda s, t, sig, y, u1, u2, u12: u12,
                   f2=lambda s, t, tau, y, u1, u2, u12: u12,
                   f12=lambda s, t, sig, tau, y, u1, u2, u12: u12)
    F1 = eval_f1(p, yv, u, g)
    F2 = eval_f2(p, yv, u, g)
    F12 = eval_f12(p, yv, u, g)
    for i in range(3):
        for j in range(4):
            for a in range(3):
                assert F1[i, j, a, 0] == a + 10.0 * j
            for b in range(4):
                assert F2[i, j, b, 0] == i + 10.0 * b
            assert np.array_equal(
                F12[i, j, :, :, 0], u12[:, :, 0])


def test_eval_shapes_multicomponent():
    g = make_grid(1.0, 2.0, 2, 3)
    u = _empty_controls(g)
    n = 2
    yv = np.ones((3, 4, n))
    p = ProblemDef(
        n=n, p1=0, p2=0, p12=0,
        f0=lambda s, t, u1, u2, u12: np.stack(
            [s + 0 * t, 0 * s + t], axis=-1),
        f1=lambda s, t, sig, y, u1, u2, u12: y,
        dy_f1=lambda s, t, sig, y, u1, u2, u12: np.broadcast_to(
            np.eye(2), y.shape[:-1] + (2, 2)),
        F0=lambda y, u1, u2, u12: float(y[0]),
        F1=lambda s, y, u1, u2, u12: y[:, 0],
        F2=lambda t, y, u1, u2, u12: y[:, 1],
        F12=lambda s, t, y, u1, u2, u12: y[..., 0] * y[..., 1],
    )
    assert eval_f0(p, u, g).shape == (3, 4, n)
    assert eval_f1(p, yv, u, g).shape == (3, 4, 3, n)
    assert eval_dy_f1(p, yv, u, g).shape == (3, 4, 3, n, n)
    assert eval_F0(p, yv, u, g) == 1.0
    assert eval_F1(p, yv, u, g).shape == (3,)
    assert eval_F2(p, yv, u, g).shape == (4,)
    assert eval_F12(p, yv, u, g).shape == (3, 4)


# ------------------------------------------------------------- validation


def _linear_problem(slope: float, declared: float, with_dy: bool = True):
    return ProblemDef(
        n=1, p1=0, p2=0, p12=0,
        f1=lambda s, t, sig, y, u1, u2, u12: slope * y,
        dy_f1=(lambda s, t, sig, y, u1, u2, u12:
               np.full(y.shape[:-1] + (1, 1), slope)) if with_dy else None,
        F12=lambda s, t, y, u1, u2, u12: y[..., 0],
        dy_F12=lambda s, t, y, u1, u2, u12: np.ones(y.shape[:-1] + (1,)),
        L1=declared,
    )


def test_validator_accepts_consistent_problem():
    g = make_grid(1.0, 1.0, 4, 4)
    rep = validate_problem(_linear_problem(1.0, 1.0), g, trials=20)
    assert rep.ok()
    assert not rep.lipschitz_violations
    assert rep.max_jacobian_error <= 1e-8
    assert rep.lipschitz_observed["f1"] == pytest.approx(1.0, abs=1e-12)
    assert "observed Lipschitz" in rep.summary()


def test_validator_flags_lipschitz_violation():
    g = make_grid(1.0, 1.0, 4, 4)
    rep = validate_problem(_linear_problem(2.0, 1.0), g, trials=20)
    assert rep.lipschitz_violations == ["f1"]
    assert rep.lipschitz_observed["f1"] == pytest.approx(2.0, abs=1e-12)
    assert not rep.ok()
    assert "VIOLATION" in rep.summary()


def test_validator_flags_wrong_jacobian():
    g = make_grid(1.0, 1.0, 4, 4)
    # declaring dy_f1 = None claims the derivative is zero; it is 1
    rep = validate_problem(_linear_problem(1.0, 1.0, with_dy=False), g,
                           trials=10)
    assert rep.jacobian_errors["dy_f1"] == pytest.approx(1.0, rel=1e-6)
    assert not rep.ok()


def test_validator_checks_control_derivatives():
    g = make_grid(1.0, 1.0, 4, 4)
    good = ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        f12=lambda s, t, sig, tau, y, u1, u2, u12: u12[..., :1],
        du_f12=UJac(u12=lambda s, t, sig, tau, y, u1, u2, u12:
                    np.ones(np.broadcast_shapes(
                        np.shape(s), np.shape(tau)) + (1, 1))),
        F12=lambda s, t, y, u1, u2, u12: 0.5 * u12[..., 0] ** 2,
        du_F12=UJac(u12=lambda s, t, y, u1, u2, u12: u12),
    )
    rep = validate_problem(good, g, trials=15)
    assert rep.ok()
    bad = ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        f12=lambda s, t, sig, tau, y, u1, u2, u12: u12[..., :1],
        F12=lambda s, t, y, u1, u2, u12: 0.5 * u12[..., 0] ** 2,
    )
    repb = validate_problem(bad, g, trials=15)
    assert repb.jacobian_errors["du_f12.u12"] == pytest.approx(1.0, rel=1e-5)
    assert not repb.ok()


def test_validator_is_deterministic():
    g = make_grid(1.0, 1.0, 3, 3)
    p = _linear_problem(1.0, 1.0)
    a = validate_problem(p, g, trials=8, seed=7)
    b = validate_problem(p, g, trials=8, seed=7)
    assert a.lipschitz_observed == b.lipschitz_observed
    assert a.jacobian_errors == b.jacobian_errors
    with pytest.raises(ValueError):
        validate_problem(p, g, trials=0)
