import numpy as np
import pytest

from gvcontrol.grid import Grid
from gvcontrol.gvlinalg import KernelTriple

# One line per acceptance criterion, collected by tests/test_acceptance.py
# and printed after the terminal summary.
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


def random_triple(grid: Grid, m: int, rng: np.random.Generator,
                  scale: float = 1.0) -> KernelTriple:
    """Random causal kernel triple with entries in [-scale, scale]."""
    n1s, n1t = grid.shape
    return KernelTriple(
        rng.uniform(-scale, scale, (n1s, n1t, n1s, m, m)),
        rng.uniform(-scale, scale, (n1s, n1t, n1t, m, m)),
        rng.uniform(-scale, scale, (n1s, n1t, n1s, n1t, m, m)),
    )


def _rand_smooth(rng: np.random.Generator, scale: float):
    """Random smooth function of up to 4 coordinates, sup-bounded by scale."""
    a = rng.uniform(-1.0, 1.0, 5)
    a *= scale / np.abs(a).sum()

    def f(x, y, z, w=0.0):
        return (
            a[0]
            + a[1] * np.sin(x + y - w)
            + a[2] * np.cos(y + 2.0 * z)
            + a[3] * np.sin(3.0 * z - x + w)
            + a[4] * np.cos(x * y + z * w)
        )

    return f


class SmoothTripleMaker:
    """Random smooth scalar kernel functions, evaluable on any grid.

    The same instance produces matching kernel triples on refined grids,
    which is what quadrature-convergence checks need. Entries are
    sup-bounded by scale by construction.
    """

    def __init__(self, rng: np.random.Generator, scale: float = 1.0):
        self.scale = scale
        self.f1 = _rand_smooth(rng, scale)
        self.f2 = _rand_smooth(rng, scale)
        self.f12 = _rand_smooth(rng, scale)

    def on_grid(self, g: Grid) -> KernelTriple:
        s = g.s_nodes
        t = g.t_nodes
        K1 = self.f1(s[:, None, None], t[None, :, None], s[None, None, :])
        K2 = self.f2(s[:, None, None], t[None, :, None], t[None, None, :])
        K12 = self.f12(
            s[:, None, None, None],
            t[None, :, None, None],
            s[None, None, :, None],
            t[None, None, None, :],
        )
        n1s, n1t = g.shape
        return KernelTriple(
            np.broadcast_to(K1, (n1s, n1t, n1s)).copy(),
            np.broadcast_to(K2, (n1s, n1t, n1t)).copy(),
            np.broadcast_to(K12, (n1s, n1t, n1s, n1t)).copy(),
        )


def random_linear_problem(rng: np.random.Generator, n: int = 2,
                          scale: float = 0.4):
    """Random linear-dynamics problem with linear costs and exact
    derivatives; empty control blocks. Returns (problem, controls)."""
    from gvcontrol.problem import ControlBoxes, ControlField, ProblemDef

    M1 = rng.uniform(-scale, scale, (n, n))
    M2 = rng.uniform(-scale, scale, (n, n))
    M12 = rng.uniform(-scale, scale, (n, n))
    b = rng.uniform(-1.0, 1.0, (4, n))
    c0, c1, c2, c12 = rng.uniform(-1.0, 1.0, (4, n))

    def lin(M):
        def f(*args):
            y = args[-4]
            return y @ M.T

        def dy(*args):
            y = args[-4]
            return np.broadcast_to(M, y.shape[:-1] + (n, n))

        return f, dy

    f1, dy_f1 = lin(M1)
    f2, dy_f2 = lin(M2)
    f12, dy_f12 = lin(M12)

    def f0(s, t, u1, u2, u12):
        base = np.broadcast_shapes(np.shape(s), np.shape(t))
        out = np.empty(base + (n,))
        for k in range(n):
            out[..., k] = b[0, k] + b[1, k] * np.sin(s + 2 * t) \
                + b[2, k] * np.cos(s - t) + b[3, k] * s * t
        return out

    cov = lambda c: (lambda *args: np.broadcast_to(
        c, np.asarray(args[-4]).shape))
    p = ProblemDef(
        n=n, p1=0, p2=0, p12=0,
        f0=f0, f1=f1, f2=f2, f12=f12,
        dy_f1=dy_f1, dy_f2=dy_f2, dy_f12=dy_f12,
        F0=lambda y, u1, u2, u12: float(y @ c0),
        F1=lambda s, y, u1, u2, u12: y @ c1,
        F2=lambda t, y, u1, u2, u12: y @ c2,
        F12=lambda s, t, y, u1, u2, u12: y @ c12,
        dy_F0=cov(c0), dy_F1=cov(c1), dy_F2=cov(c2), dy_F12=cov(c12),
        L1=float(np.abs(M1).sum(axis=1).max()),
        L2=float(np.abs(M2).sum(axis=1).max()),
        L12=float(np.abs(M12).sum(axis=1).max()),
    )
    return p, lambda g: ControlField.constant(
        g, ControlBoxes.bounds(-1.0, 1.0, 0, 0, 0))


def adjoint_amplification(K: KernelTriple, grid: Grid,
                          max_terms: int = 300) -> float:
    """Certified sup-operator-norm bound on (I - T)^{-1} for the
    discrete adjoint map T z = z (*)~ K.

    T is entrywise dominated by |T| (the same map with |K|, all
    quadrature weights being nonnegative), so ||T^k|| <= || |T|^k 1 ||
    and summing the iterates of the all-ones field bounds the Neumann
    series. Any two approximate solutions of z = z0 + Tz then satisfy
    ||z_a - z_b|| <= M (||r_a|| + ||r_b||) with their residuals r.
    """
    from gvcontrol.grid import ScalarField2
    from gvcontrol.gvlinalg import gv_adjoint_apply

    absK = KernelTriple(np.abs(K.K1), np.abs(K.K2), np.abs(K.K12))
    z = ScalarField2(np.ones(grid.shape + (K.m,)))
    M = 1.0
    for _ in range(max_terms):
        z = gv_adjoint_apply(z, absK, grid)
        term = float(z.values.max())
        M += term
        if term < 1e-15:
            return M
    raise RuntimeError("amplification series did not settle")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260822)
