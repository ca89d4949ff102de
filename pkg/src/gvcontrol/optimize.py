"""Projected-gradient minimization over box controls and the
partial-extremum-principle verifier.

optimize runs u_{k+1} = project(u_k - alpha_k G_k) with the density
gradient G_k as primal direction (it is the Riesz representative of dJ
in the trapezoid-weighted inner product) and Armijo backtracking
J(u_k) - J(u_try) >= armijo_c * <G_k, u_k - u_try>_w. The trial step is
a clipped Barzilai-Borwein quotient with step0 as fallback.

check_extremum_principle audits a converged iterate against the eight
partial-minimization claims (sampling, not solving):

  1. u12(s,t) minimizes h12(s,t; .) pointwise          [needs f0, f1, f2
     independent of u12]
  2. u1(s) minimizes h1(s; .) + int_0^B h12(s,t; .) dt [f0, f2 indep of u1]
  3. u2(t) minimizes h2(t; .) + int_0^A h12(s,t; .) ds [f0, f1 indep of u2]
  4. u12(s,B) minimizes h1(s; .)                       [f0 indep of u12]
  5. u12(A,t) minimizes h2(t; .)                       [f0 indep of u12]
  6. u1(A)  minimizes h0(.) + int_0^B F2(t, y(A,t), ., u2, u12(A,t)) dt
  7. u2(B)  minimizes h0(.) + int_0^A F1(s, y(s,B), u1, ., u12(s,B)) ds
  8. u12(A,B) minimizes h0(.)

Claims 6-8 carry no independence condition. Inapplicable claims are
reported as such, never as passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costate import (
    CoState,
    HamiltonianLattices,
    h0_value,
    h1_field,
    h2_field,
    h12_field,
    solve_costate,
)
from .errors import (
    ConvergenceError,
    LineSearchStallError,
    NumericalError,
    OptimizeError,
)
from .forward import ForwardOptions, solve_forward
from .gradient import GradientField, control_inner, cost, gradient
from .grid import Grid, ScalarField2
from .problem import ControlField, ProblemDef, eval_map

__all__ = [
    "OptimizeOptions",
    "OptimizeResult",
    "project",
    "optimize",
    "ClaimResult",
    "ExtremumReport",
    "check_extremum_principle",
]


@dataclass
class OptimizeOptions:
    max_outer: int = 500
    step0: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    stat_tol: float = 1e-6

    def __post_init__(self):
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_outer < 0:
            raise ValueError("max_outer must be nonnegative")
        if not self.stat_tol > 0:
            raise ValueError("stat_tol must be positive")


def project(u: ControlField) -> ControlField:
    """Componentwise clamp of every block to its box."""
    return ControlField(
        u.boxes.u1.clip(u.u1),
        u.boxes.u2.clip(u.u2),
        u.boxes.u12.clip(u.u12),
        u.boxes,
    )


@dataclass
class OptimizeResult:
    u: ControlField
    history: list[tuple[float, float, float]]
    converged: bool
    iterations: int
    J: float
    stationarity: float
    y: ScalarField2
    psi: CoState
    grad: GradientField

    def __iter__(self):
        # allows `u_star, history = optimize(...)`
        return iter((self.u, self.history))


def _stationarity(u: ControlField, G: GradientField) -> float:
    out = 0.0
    for arr, garr, box in (
        (u.u1, G.g_u1, u.boxes.u1),
        (u.u2, G.g_u2, u.boxes.u2),
        (u.u12, G.g_u12, u.boxes.u12),
    ):
        if arr.size:
            step = arr - box.clip(arr - garr)
            out = max(out, float(np.abs(step).max()))
    return out


def optimize(p: ProblemDef, u0: ControlField, g: Grid,
             opts: OptimizeOptions | None = None,
             forward_opts: ForwardOptions | None = None,
             costate_tol: float = 1e-10) -> OptimizeResult:
    """Minimize J over the boxes from u0. History rows are
    (J_k, stationarity_k, alpha_k) per outer iteration; the terminal row
    carries alpha = 0. Reaching max_outer returns converged=False;
    a 60-halving line-search failure raises LineSearchStallError; a
    solver failure mid-iteration raises OptimizeError with the current
    iterate attached.
    """
    if opts is None:
        opts = OptimizeOptions()
    if forward_opts is None:
        forward_opts = ForwardOptions(tol=1e-11, max_iters=400)
    u = project(u0)

    def solve_at(uc: ControlField, k: int):
        try:
            y = solve_forward(p, uc, g, forward_opts).y
            return y, cost(p, y, uc, g)
        except (ConvergenceError, NumericalError) as e:
            raise OptimizeError(
                f"forward solve failed at outer iteration {k}: {e}",
                iterate=uc, iteration=k) from e

    def adjoint_at(uc: ControlField, y: ScalarField2, k: int):
        try:
            psi = solve_costate(p, y, uc, g, tol=costate_tol)
            return psi, gradient(p, y, uc, psi, g)
        except (ConvergenceError, NumericalError) as e:
            raise OptimizeError(
                f"co-state solve failed at outer iteration {k}: {e}",
                iterate=uc, iteration=k) from e

    y, J = solve_at(u, 0)
    psi, G = adjoint_at(u, y, 0)
    history: list[tuple[float, float, float]] = []
    prev: tuple[ControlField, GradientField] | None = None

    for k in range(opts.max_outer):
        stat = _stationarity(u, G)
        if stat <= opts.stat_tol:
            history.append((J, stat, 0.0))
            return OptimizeResult(u, history, True, k, J, stat, y, psi, G)

        alpha = opts.step0
        if prev is not None:
            du = (u.u1 - prev[0].u1, u.u2 - prev[0].u2, u.u12 - prev[0].u12)
            dG = (G.g_u1 - prev[1].g_u1, G.g_u2 - prev[1].g_u2,
                  G.g_u12 - prev[1].g_u12)
            num = control_inner(du, du, g)
            den = control_inner(du, dG, g)
            if den > 0 and np.isfinite(den) and np.isfinite(num):
                alpha = float(np.clip(num / den, 1e-10, 1e10))

        accepted = None
        for _ in range(60):
            u_try = ControlField(
                u.boxes.u1.clip(u.u1 - alpha * G.g_u1),
                u.boxes.u2.clip(u.u2 - alpha * G.g_u2),
                u.boxes.u12.clip(u.u12 - alpha * G.g_u12),
                u.boxes,
            )
            pred = control_inner(G, (u.u1 - u_try.u1, u.u2 - u_try.u2,
                                     u.u12 - u_try.u12), g)
            y_try, J_try = solve_at(u_try, k)
            if J - J_try >= opts.armijo_c * pred and pred > 0:
                accepted = (u_try, y_try, J_try, alpha)
                break
            alpha *= opts.backtrack
        if accepted is None:
            raise LineSearchStallError(
                f"no Armijo step after 60 halvings at outer iteration {k} "
                f"(J={J:.6e}, stationarity={stat:.3e})")

        history.append((J, stat, accepted[3]))
        prev = (u, G)
        u, y, J = accepted[0], accepted[1], accepted[2]
        psi, G = adjoint_at(u, y, k + 1)

    stat = _stationarity(u, G)
    history.append((J, stat, 0.0))
    return OptimizeResult(u, history, stat <= opts.stat_tol, opts.max_outer,
                          J, stat, y, psi, G)


# ------------------------------------------------- extremum verification


@dataclass
class ClaimResult:
    applicable: bool
    fraction: float
    worst_violation: float
    n_points: int
    n_candidates: int
    note: str = ""
    argmin: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "fraction": self.fraction,
            "worst_violation": self.worst_violation,
            "n_points": self.n_points,
            "n_candidates": self.n_candidates,
            "note": self.note,
        }


@dataclass
class ExtremumReport:
    claims: dict[str, ClaimResult] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.claims.items()}

    def applicable_pass_fraction(self) -> float:
        """Minimum pass fraction over applicable claims (1.0 if none)."""
        fr = [c.fraction for c in self.claims.values() if c.applicable]
        return min(fr) if fr else 1.0


def _candidate_values(box, current: np.ndarray, n_samples: int) -> np.ndarray:
    """(S, pc) candidate array: per-component uniform lattice including
    the box corners; components <= 2 take the full product lattice,
    otherwise coordinate sweeps anchored at the per-component midpoint.
    Unbounded components sweep a window spanning the current values +- 1.
    """
    lo = np.array(box.lo, dtype=float, copy=True)
    hi = np.array(box.hi, dtype=float, copy=True)
    pc = lo.shape[0]
    cur = current.reshape(-1, pc)
    for c in range(pc):
        if not np.isfinite(lo[c]):
            lo[c] = float(cur[:, c].min()) - 1.0
        if not np.isfinite(hi[c]):
            hi[c] = float(cur[:, c].max()) + 1.0
    axes = [np.linspace(lo[c], hi[c], n_samples) for c in range(pc)]
    if pc == 1:
        return axes[0][:, None]
    if pc == 2:
        aa, bb = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([aa.ravel(), bb.ravel()])
    mid = 0.5 * (lo + hi)
    rows = [mid]
    for c in range(pc):
        for v in axes[c]:
            r = mid.copy()
            r[c] = v
            rows.append(r)
    return np.array(rows)


def _score(cur_vals: np.ndarray, cand_vals: np.ndarray, tol: float):
    """cur_vals (...,), cand_vals (S, ...) -> fraction, worst, argmin."""
    mins = cand_vals.min(axis=0)
    gap = cur_vals - mins
    frac = float(np.mean(gap <= tol))
    worst = float(max(0.0, gap.max())) if gap.size else 0.0
    return frac, worst, cand_vals.argmin(axis=0)


def check_extremum_principle(p: ProblemDef, u: ControlField, y: ScalarField2,
                             psi: CoState, g: Grid, n_samples: int = 33,
                             tol: float = 1e-4) -> ExtremumReport:
    """Sample-audit the eight partial-minimization claims at (u, y, psi).

    Each applicable claim's objective is evaluated at the current
    control and at candidate values over the box (uniform lattice with
    corners; see _candidate_values); a point passes when the current
    value is within tol of the sampled minimum. Ties in the sampled
    argmin go to the first candidate index.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    fl = p.flags
    n1s, n1t = g.shape
    rep = ExtremumReport()
    yv = y.values

    lat_cur = HamiltonianLattices(yv, u.u1, u.u2, u.u12, g)
    h1_cur = h1_field(p, lat_cur, psi, g)
    h2_cur = h2_field(p, lat_cur, psi, g)
    h12_cur = h12_field(p, lat_cur, psi, g)
    h0_cur = float(h0_value(p, lat_cur, psi))

    def fields_at(U1, U2, U12, want):
        lat = HamiltonianLattices(yv, U1, U2, U12, g)
        out = {}
        if "h0" in want:
            out["h0"] = float(h0_value(p, lat, psi))
        if "h1" in want:
            out["h1"] = h1_field(p, lat, psi, g)
        if "h2" in want:
            out["h2"] = h2_field(p, lat, psi, g)
        if "h12" in want:
            out["h12"] = h12_field(p, lat, psi, g)
        return out

    def const12(v):
        return np.broadcast_to(v, (n1s, n1t, p.p12)).copy()

    def const1(v):
        return np.broadcast_to(v, (n1s, p.p1)).copy()

    def const2(v):
        return np.broadcast_to(v, (n1t, p.p2)).copy()

    # ---- claim 1: u12 pointwise (interior of the closure lines)
    ok12 = fl.independent("f0", "u12") and fl.independent("f1", "u12") \
        and fl.independent("f2", "u12")
    if p.p12 == 0:
        rep.claims["u12_pointwise"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                                  "no u12 block")
    elif not ok12:
        rep.claims["u12_pointwise"] = ClaimResult(
            False, 1.0, 0.0, 0, 0,
            "needs f0, f1, f2 independent of u12")
    else:
        cands = _candidate_values(u.boxes.u12, u.u12, n_samples)
        vals = np.stack([
            fields_at(u.u1, u.u2, const12(v), ("h12",))["h12"][:-1, :-1]
            for v in cands
        ])
        frac, worst, am = _score(h12_cur[:-1, :-1], vals, tol)
        rep.claims["u12_pointwise"] = ClaimResult(
            True, frac, worst, (n1s - 1) * (n1t - 1), len(cands), "", am)

    # ---- claim 2: u1 aggregated
    ok1 = fl.independent("f0", "u1") and fl.independent("f2", "u1")
    if p.p1 == 0:
        rep.claims["u1_aggregated"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                                  "no u1 block")
    elif not ok1:
        rep.claims["u1_aggregated"] = ClaimResult(
            False, 1.0, 0.0, 0, 0, "needs f0, f2 independent of u1")
    else:
        cands = _candidate_values(u.boxes.u1, u.u1, n_samples)
        cur_obj = (h1_cur + h12_cur @ g.wt)[:-1]
        rows = []
        for v in cands:
            f = fields_at(const1(v), u.u2, u.u12, ("h1", "h12"))
            rows.append((f["h1"] + f["h12"] @ g.wt)[:-1])
        frac, worst, am = _score(cur_obj, np.stack(rows), tol)
        rep.claims["u1_aggregated"] = ClaimResult(
            True, frac, worst, n1s - 1, len(cands), "", am)

    # ---- claim 3: u2 aggregated
    ok2 = fl.independent("f0", "u2") and fl.independent("f1", "u2")
    if p.p2 == 0:
        rep.claims["u2_aggregated"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                                  "no u2 block")
    elif not ok2:
        rep.claims["u2_aggregated"] = ClaimResult(
            False, 1.0, 0.0, 0, 0, "needs f0, f1 independent of u2")
    else:
        cands = _candidate_values(u.boxes.u2, u.u2, n_samples)
        cur_obj = (h2_cur + g.ws @ h12_cur)[:-1]
        rows = []
        for v in cands:
            f = fields_at(u.u1, const2(v), u.u12, ("h2", "h12"))
            rows.append((f["h2"] + g.ws @ f["h12"])[:-1])
        frac, worst, am = _score(cur_obj, np.stack(rows), tol)
        rep.claims["u2_aggregated"] = ClaimResult(
            True, frac, worst, n1t - 1, len(cands), "", am)

    # ---- claims 4/5: u12 along the closure lines (need f0 indep of u12)
    ok_edge = fl.independent("f0", "u12")
    for key, which, count in (("u12_edge_tB", "h1", n1s - 1),
                              ("u12_edge_sA", "h2", n1t - 1)):
        if p.p12 == 0:
            rep.claims[key] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                          "no u12 block")
            continue
        if not ok_edge:
            rep.claims[key] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                          "needs f0 independent of u12")
            continue
        cands = _candidate_values(u.boxes.u12, u.u12, n_samples)
        cur_obj = (h1_cur if which == "h1" else h2_cur)[:-1]
        rows = [fields_at(u.u1, u.u2, const12(v), (which,))[which][:-1]
                for v in cands]
        frac, worst, am = _score(cur_obj, np.stack(rows), tol)
        rep.claims[key] = ClaimResult(True, frac, worst, count, len(cands),
                                      "", am)

    # ---- claims 6/7/8: corner controls, unconditional
    t = g.t_nodes
    s = g.s_nodes

    def F2_sum(U1):
        args = (t, yv[-1], U1[None, -1], u.u2, u.u12[-1])
        return float(g.wt @ eval_map(p.F2, args, (n1t,), (), "F2"))

    def F1_sum(U2):
        args = (s, yv[:, -1], u.u1, U2[None, -1], u.u12[:, -1])
        return float(g.ws @ eval_map(p.F1, args, (n1s,), (), "F1"))

    if p.p1 == 0:
        rep.claims["u1_corner"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                              "no u1 block")
    else:
        cands = _candidate_values(u.boxes.u1, u.u1[-1:], n_samples)
        cur_obj = h0_cur + F2_sum(u.u1)
        vals = []
        for v in cands:
            U1 = u.u1.copy()
            U1[-1] = v
            vals.append(fields_at(U1, u.u2, u.u12, ("h0",))["h0"]
                        + F2_sum(U1))
        frac, worst, am = _score(np.array(cur_obj), np.array(vals), tol)
        rep.claims["u1_corner"] = ClaimResult(True, frac, worst, 1,
                                              len(cands), "", am)

    if p.p2 == 0:
        rep.claims["u2_corner"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                              "no u2 block")
    else:
        cands = _candidate_values(u.boxes.u2, u.u2[-1:], n_samples)
        cur_obj = h0_cur + F1_sum(u.u2)
        vals = []
        for v in cands:
            U2 = u.u2.copy()
            U2[-1] = v
            vals.append(fields_at(u.u1, U2, u.u12, ("h0",))["h0"]
                        + F1_sum(U2))
        frac, worst, am = _score(np.array(cur_obj), np.array(vals), tol)
        rep.claims["u2_corner"] = ClaimResult(True, frac, worst, 1,
                                              len(cands), "", am)

    if p.p12 == 0:
        rep.claims["u12_corner"] = ClaimResult(False, 1.0, 0.0, 0, 0,
                                               "no u12 block")
    else:
        cands = _candidate_values(u.boxes.u12, u.u12[-1:, -1], n_samples)
        vals = []
        for v in cands:
            U12 = u.u12.copy()
            U12[-1, -1] = v
            vals.append(fields_at(u.u1, u.u2, U12, ("h0",))["h0"])
        frac, worst, am = _score(np.array(h0_cur), np.array(vals), tol)
        rep.claims["u12_corner"] = ClaimResult(True, frac, worst, 1,
                                               len(cands), "", am)

    return rep
