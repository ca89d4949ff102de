"""Forward solver: Picard iteration for the two-variable state equation

    y(s,t) = f0(s,t,...) + int_0^s f1(s,t,sig, y(sig,t), ...) dsig
           + int_0^t f2(s,t,tau, y(s,tau), ...) dtau
           + int_0^s int_0^t f12(s,t,sig,tau, y(sig,tau), ...) dtau dsig

discretized with cumulative trapezoid weights. The fixed-point map is a
contraction in the mu-exponentially-weighted sup norm once mu is large
enough; contraction_factor/choose_mu quantify that and pick mu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalError
from .grid import Grid, ScalarField2, norm_weighted
from .problem import (
    ControlField,
    ProblemDef,
    eval_f0,
    eval_f1,
    eval_f2,
    eval_f12,
)

__all__ = [
    "ForwardOptions",
    "ForwardResult",
    "solve_forward",
    "contraction_factor",
    "choose_mu",
]


@dataclass
class ForwardOptions:
    """tol: sup-norm fixed-point residual target. mu: when set, the
    iteration additionally logs mu-weighted update norms."""

    tol: float = 1e-10
    max_iters: int = 200
    mu: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass
class ForwardResult:
    y: ScalarField2
    iterations: int
    deltas: list[float] = field(default_factory=list)
    deltas_weighted: list[float] | None = None


def _sweep(p: ProblemDef, yv: np.ndarray, u: ControlField, g: Grid,
           f0v: np.ndarray) -> np.ndarray:
    out = f0v.copy()
    if p.f1 is not None:
        out += np.einsum("ia,ijan->ijn", g.Ws, eval_f1(p, yv, u, g))
    if p.f2 is not None:
        out += np.einsum("jb,ijbn->ijn", g.Wt, eval_f2(p, yv, u, g))
    if p.f12 is not None:
        out += np.einsum("ia,jb,ijabn->ijn", g.Ws, g.Wt,
                         eval_f12(p, yv, u, g), optimize=True)
    return out


def solve_forward(p: ProblemDef, u: ControlField, g: Grid,
                  opts: ForwardOptions | None = None,
                  y_init: ScalarField2 | None = None) -> ForwardResult:
    """Picard-iterate to a fixed point; the returned iterate has
    verified residual ||S(y) - y||_sup = deltas[-1] <= tol.

    Starts from y = f0 values unless y_init is given. Non-finite sweep
    output raises NumericalError naming a lattice node; hitting
    max_iters raises ConvergenceError carrying the last update size.
    """
    if opts is None:
        opts = ForwardOptions()
    u.check_grid(g)
    f0v = eval_f0(p, u, g)
    if y_init is None:
        yv = f0v.copy()
    else:
        y_init.check_grid(g)
        if y_init.dim != p.n:
            raise ValueError("y_init component count does not match problem")
        yv = y_init.values.copy()
    deltas: list[float] = []
    wdeltas: list[float] | None = [] if opts.mu is not None else None
    delta = math.inf
    for it in range(1, opts.max_iters + 1):
        y_new = _sweep(p, yv, u, g, f0v)
        if not np.isfinite(y_new).all():
            i, j, _ = np.unravel_index(
                int(np.argmin(np.isfinite(y_new))), y_new.shape)
            raise NumericalError(
                f"non-finite state update at node ({i}, {j})", node=(i, j))
        diff = y_new - yv
        delta = float(np.abs(diff).max())
        deltas.append(delta)
        if wdeltas is not None:
            wdeltas.append(norm_weighted(diff, g, opts.mu))
        if delta <= opts.tol:
            # yv (not y_new) carries the certified residual delta <= tol
            return ForwardResult(ScalarField2(yv), it, deltas, wdeltas)
        yv = y_new
    raise ConvergenceError(
        f"forward iteration did not reach tol={opts.tol} in "
        f"{opts.max_iters} sweeps",
        last_delta=delta,
        iterations=opts.max_iters,
    )


def contraction_factor(L1: float, L2: float, L12: float, A: float, B: float,
                       mu: float) -> float:
    """Contraction constant of the Picard map in the norm
    sup |y(s,t)| exp(-mu (s+t)):

        q = (L1 + L2) (1 - e^{-mu (A+B)}) / mu
          + L12 (2 - e^{-mu A} - e^{-mu B}) / mu^2
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    for name, v in (("L1", L1), ("L2", L2), ("L12", L12), ("A", A), ("B", B)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative")
    r1 = -math.expm1(-mu * (A + B)) / mu
    r12 = (2.0 - math.exp(-mu * A) - math.exp(-mu * B)) / (mu * mu)
    return (L1 + L2) * r1 + L12 * r12


def choose_mu(L1: float, L2: float, L12: float, A: float, B: float,
              q_target: float) -> float:
    """Smallest mu (within absolute tolerance 1e-6) with
    contraction_factor(...) <= q_target; doubling then bisection."""
    if not 0 < q_target < 1:
        raise ValueError("q_target must lie in (0, 1)")
    lo = 1e-6
    if contraction_factor(L1, L2, L12, A, B, lo) <= q_target:
        return lo
    hi = lo
    for _ in range(200):
        hi *= 2.0
        if contraction_factor(L1, L2, L12, A, B, hi) <= q_target:
            break
    else:  # pragma: no cover - q -> 0 as mu -> inf, so unreachable
        raise ConvergenceError("no contraction weight found")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if contraction_factor(L1, L2, L12, A, B, mid) <= q_target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-7 * max(1.0, hi):
            break
    return hi
