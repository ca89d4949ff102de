"""Uniform tensor-product grid on [0,A]x[0,B] with trapezoid quadrature.

Every solver in this package discretizes integrals with the product
trapezoid rule on a uniform node lattice. This module owns the node
coordinates, the cumulative quadrature weight matrices, and the field
helpers (cumulative integrals, weighted norms and inner products)
shared by the other modules.

Weight conventions, used throughout:

``Ws[i, a]``
    weight of node a in the trapezoid rule for the integral over
    [0, s_i]; row 0 is identically zero.
``ws = Ws[Ns]``
    the full-interval weights, so ``sum(ws) == A``.
``Wus[a, i] = ws[i] * Ws[i, a] / ws[a]``
    the reflected upper weights realizing integrals over [s_a, A].
    They satisfy ``ws[i]*Ws[i,a] == ws[a]*Wus[a,i]`` exactly in
    floating point (the ratio ws[i]/ws[a] is a power of two), which
    makes every adjoint application in this package the exact
    transpose of its forward counterpart under the weighted inner
    product. The price is a perturbation of the two diagonal corners
    relative to the plain upper trapezoid rule: Wus[0,0] is 0 and
    Wus[Ns,Ns] is hs/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "ScalarField2",
    "make_grid",
    "trap_weights",
    "lower_cumulative",
    "reflected_upper",
    "cum_integral_s",
    "cum_integral_t",
    "cum_integral_st",
    "inner_w",
    "norm_sup",
    "norm_weighted",
]


def trap_weights(n_steps: int, h: float) -> np.ndarray:
    """Trapezoid weights for n_steps uniform steps of size h.

    Returns w of length n_steps+1 with w[0] = w[-1] = h/2 and interior
    entries h, so that sum(w) equals n_steps*h exactly up to rounding.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    w = np.full(n_steps + 1, float(h))
    w[0] = w[-1] = h / 2.0
    return w


def lower_cumulative(n_steps: int, h: float) -> np.ndarray:
    """Matrix W with W[i] = trapezoid weights on [0, s_i], row 0 zero."""
    W = np.zeros((n_steps + 1, n_steps + 1))
    for i in range(1, n_steps + 1):
        W[i, : i + 1] = trap_weights(i, h)
    return W


def reflected_upper(W: np.ndarray) -> np.ndarray:
    """Upper counterpart of a lower cumulative weight matrix.

    out[a, i] = w[i]*W[i, a]/w[a] with w = W[-1]. Computed through the
    exact power-of-two ratio w[i]/w[a] so that w[i]*W[i,a] equals
    w[a]*out[a,i] exactly in floating point.
    """
    n1 = W.shape[0]
    ex = np.zeros(n1)
    ex[0] = ex[-1] = -1.0  # w = h * 2**ex
    ratio = np.exp2(ex[None, :] - ex[:, None])  # ratio[a,i] = w[i]/w[a]
    return W.T * ratio


@dataclass(frozen=True)
class Grid:
    """Uniform grid over [0, A] x [0, B] with Ns x Nt steps."""

    A: float
    B: float
    Ns: int
    Nt: int

    @property
    def hs(self) -> float:
        return self.A / self.Ns

    @property
    def ht(self) -> float:
        return self.B / self.Nt

    @cached_property
    def s_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.A, self.Ns + 1)

    @cached_property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.B, self.Nt + 1)

    @cached_property
    def Ws(self) -> np.ndarray:
        return lower_cumulative(self.Ns, self.hs)

    @cached_property
    def Wt(self) -> np.ndarray:
        return lower_cumulative(self.Nt, self.ht)

    @cached_property
    def ws(self) -> np.ndarray:
        return self.Ws[-1]

    @cached_property
    def wt(self) -> np.ndarray:
        return self.Wt[-1]

    @cached_property
    def Wus(self) -> np.ndarray:
        return reflected_upper(self.Ws)

    @cached_property
    def Wut(self) -> np.ndarray:
        return reflected_upper(self.Wt)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Ns + 1, self.Nt + 1)


def make_grid(A: float, B: float, Ns: int, Nt: int) -> Grid:
    """Build a uniform grid; extents must be positive, steps >= 1."""
    if not (A > 0 and B > 0):
        raise ValueError(f"extents must be positive, got A={A}, B={B}")
    if Ns < 1 or Nt < 1:
        raise ValueError(f"step counts must be >= 1, got Ns={Ns}, Nt={Nt}")
    if Ns != int(Ns) or Nt != int(Nt):
        raise ValueError("step counts must be integers")
    return Grid(float(A), float(B), int(Ns), int(Nt))


class ScalarField2:
    """Node samples of an m-vector field over the full rectangle.

    values has shape (Ns+1, Nt+1, m). 2-D input is promoted to m = 1.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError(
                f"field values must have shape (Ns+1, Nt+1, m), got {v.shape}"
            )
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def full(cls, grid: Grid, fill: float, dim: int = 1) -> "ScalarField2":
        return cls(np.full((grid.Ns + 1, grid.Nt + 1, dim), float(fill)))

    @classmethod
    def zeros(cls, grid: Grid, dim: int = 1) -> "ScalarField2":
        return cls.full(grid, 0.0, dim)

    def copy(self) -> "ScalarField2":
        return ScalarField2(self.values.copy())

    def check_grid(self, grid: Grid) -> None:
        if self.values.shape[:2] != grid.shape:
            raise ValueError(
                f"field shape {self.values.shape[:2]} does not match "
                f"grid shape {grid.shape}"
            )


def _values(field) -> np.ndarray:
    if isinstance(field, ScalarField2):
        return field.values
    return ScalarField2(field).values


def cum_integral_s(field, grid: Grid) -> ScalarField2:
    """out[i, j] = trapezoid approximation of the integral of
    field(sigma, t_j) for sigma in [0, s_i]; row i = 0 is zero.

    Exact to rounding when the integrand is linear in sigma.
    """
    v = _values(field)
    if v.shape[0] != grid.Ns + 1 or v.shape[1] != grid.Nt + 1:
        raise ValueError(f"field shape {v.shape} does not match grid {grid.shape}")
    return ScalarField2(np.einsum("ia,ajm->ijm", grid.Ws, v))


def cum_integral_t(field, grid: Grid) -> ScalarField2:
    """Same as cum_integral_s but over tau in [0, t_j]."""
    v = _values(field)
    if v.shape[0] != grid.Ns + 1 or v.shape[1] != grid.Nt + 1:
        raise ValueError(f"field shape {v.shape} does not match grid {grid.shape}")
    return ScalarField2(np.einsum("jb,ibm->ijm", grid.Wt, v))


def cum_integral_st(field, grid: Grid) -> ScalarField2:
    """Double cumulative integral over [0, s_i] x [0, t_j].

    Agrees with the composition cum_integral_t(cum_integral_s(.)) to
    rounding (the same products are summed in a different order).
    """
    v = _values(field)
    if v.shape[0] != grid.Ns + 1 or v.shape[1] != grid.Nt + 1:
        raise ValueError(f"field shape {v.shape} does not match grid {grid.shape}")
    return ScalarField2(np.einsum("ia,jb,abm->ijm", grid.Ws, grid.Wt, v, optimize=True))


def inner_w(z1, z2, grid: Grid) -> float:
    """Trapezoid-weighted inner product over the grid, summing over
    vector components as well."""
    v1, v2 = _values(z1), _values(z2)
    return float(np.einsum("i,j,ijm,ijm->", grid.ws, grid.wt, v1, v2, optimize=True))


def norm_sup(z) -> float:
    """Unweighted sup norm over nodes and components."""
    v = z.values if isinstance(z, ScalarField2) else np.asarray(z, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.abs(v).max())


def norm_weighted(z, grid: Grid, mu: float) -> float:
    """Weighted sup norm: max over nodes of exp(-mu(s+t)) * |z(s,t)|,
    with |.| the max-abs over components."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    v = _values(z)
    damp = np.exp(-mu * (grid.s_nodes[:, None] + grid.t_nodes[None, :]))
    return float((np.abs(v).max(axis=2) * damp).max())
