"""Co-state (adjoint) system and Hamiltonian assembly.

Given a state field y and control u, the co-state is the quadruple
(psi0, psi1(s), psi2(t), psi12(s,t)) of row covectors solving the
backward equations

    psi0    = dy_F0(y(A,B), ...)
    psi1(s) = dy_F1(s,...) + psi0 dy_f1(A,B,s,...)
              + int_s^A psi1(sig) dy_f1(sig,B,s,...) dsig
    psi2(t) = symmetric in t
    psi12   = zeta0 + psi12 (~*) K,   K = linearized kernels,
    zeta0(s,t) = dy_F12(s,t,...) + psi1(s) dy_f2(s,B,t,...)
               + psi2(t) dy_f1(A,t,s,...) + psi0 dy_f12(A,B,s,t,...)
               + int_s^A psi1(sig) dy_f12(sig,B,s,t,...) dsig
               + int_t^B psi2(tau) dy_f12(A,tau,s,t,...) dtau.

The discretization is the exact weighted transpose of the forward
discretization (reflected upper weights), so the assembled control
gradient is the exact gradient of the discrete cost. Two independent
solution paths are provided: direct backward substitution plus
backward Picard (solve_costate) and Neumann-series resolvents
(costate_via_resolvent).

The Hamiltonians h0, h1(s), h2(t), h12(s,t) are functionals (they
integrate the co-state against the dynamics); h12(s,t) depends on the
controls only through (u1(s), u2(t), u12(s,t)), which the extremum
verifier exploits. Each h includes a psi-weighted f0 term so that
control dependence in the forcing f0 is differentiated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericalError
from .grid import Grid, ScalarField2
from .gvlinalg import KernelTriple, gv_adjoint_apply, solve_adjoint
from .problem import (
    ControlField,
    ProblemDef,
    eval_dy_F0,
    eval_dy_F1,
    eval_dy_F2,
    eval_dy_F12,
    eval_dy_f1,
    eval_dy_f2,
    eval_dy_f12,
    eval_map,
)

__all__ = [
    "CoState",
    "linearized_kernels",
    "solve_costate",
    "costate_via_resolvent",
    "costate_residuals",
    "hamiltonians",
    "HamiltonianLattices",
    "h_fields",
    "h_block_fields",
]


@dataclass
class CoState:
    """psi0 (n,), psi1 (Ns+1, n), psi2 (Nt+1, n), psi12 grid field of
    row covectors."""

    psi0: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    psi12: ScalarField2

    def __post_init__(self):
        if not (
            np.isfinite(self.psi0).all()
            and np.isfinite(self.psi1).all()
            and np.isfinite(self.psi2).all()
            and np.isfinite(self.psi12.values).all()
        ):
            raise NumericalError("non-finite co-state entry")


def linearized_kernels(p: ProblemDef, y: ScalarField2, u: ControlField,
                       g: Grid) -> KernelTriple:
    """Kernel triple of y-Jacobians along (y, u); causality enforced."""
    yv = y.values
    return KernelTriple(
        eval_dy_f1(p, yv, u, g),
        eval_dy_f2(p, yv, u, g),
        eval_dy_f12(p, yv, u, g),
    )


def _backward_1d(base: np.ndarray, A1: np.ndarray, Wu: np.ndarray) -> np.ndarray:
    """Solve psi[a] = base[a] + sum_i Wu[a,i] psi[i] A1[i,a] by backward
    substitution; the diagonal term makes each node a small linear solve."""
    n1, n = base.shape
    psi = np.zeros_like(base)
    eye = np.eye(n)
    for a in range(n1 - 1, -1, -1):
        acc = base[a].copy()
        if a + 1 < n1:
            acc += np.einsum("i,ip,ipq->q", Wu[a, a + 1 :], psi[a + 1 :],
                             A1[a + 1 :, a])
        M = eye - Wu[a, a] * A1[a, a]
        psi[a] = np.linalg.solve(M.T, acc)
    return psi


def _neumann_1d_covector(base: np.ndarray, A1: np.ndarray, Wu: np.ndarray,
                         tol: float, max_terms: int = 400) -> np.ndarray:
    """Same equation as _backward_1d, solved as psi = base sum_m T^m with
    T[(i,p),(a,q)] = Wu[a,i] A1[i,a][p,q] (row-covector convention)."""
    n1, n = base.shape
    T = np.einsum("ai,iapq->ipaq", Wu, A1).reshape(n1 * n, n1 * n)
    f = base.reshape(-1)
    acc = f.copy()
    term = f.copy()
    for _ in range(max_terms):
        term = term @ T
        acc += term
        if np.abs(term).max() <= tol:
            return acc.reshape(n1, n)
    raise ConvergenceError(
        f"covector Neumann series did not reach {tol} in {max_terms} terms",
        last_delta=float(np.abs(term).max()),
    )


def _costate_pieces(p: ProblemDef, y: ScalarField2, u: ControlField, g: Grid):
    yv = y.values
    K = linearized_kernels(p, y, u, g)
    psi0 = eval_dy_F0(p, yv, u, g)
    # 1-D kernels: A1[i,a] = dy_f1(s_i, B, sig_a, ...), A2[j,b] = dy_f2(A, t_j, tau_b, ...)
    A1 = K.K1[:, -1, :, :, :]
    A2 = K.K2[-1, :, :, :, :]
    base1 = eval_dy_F1(p, yv, u, g) + np.einsum("p,apq->aq", psi0, A1[-1])
    base2 = eval_dy_F2(p, yv, u, g) + np.einsum("p,bpq->bq", psi0, A2[-1])
    return K, psi0, A1, A2, base1, base2


def _psi12_forcing(p, y, u, g, K, psi0, psi1, psi2) -> ScalarField2:
    yv = y.values
    z0 = eval_dy_F12(p, yv, u, g)
    z0 = z0 + np.einsum("ap,abpq->abq", psi1, K.K2[:, -1])
    z0 = z0 + np.einsum("bp,bapq->abq", psi2, K.K1[-1])
    z0 = z0 + np.einsum("p,abpq->abq", psi0, K.K12[-1, -1])
    z0 = z0 + np.einsum("ai,ip,iabpq->abq", g.Wus, psi1, K.K12[:, -1],
                        optimize=True)
    z0 = z0 + np.einsum("bj,jp,jabpq->abq", g.Wut, psi2, K.K12[-1],
                        optimize=True)
    return ScalarField2(z0)


def solve_costate(p: ProblemDef, y: ScalarField2, u: ControlField, g: Grid,
                  tol: float = 1e-10) -> CoState:
    """Direct path: backward substitution for psi1/psi2, backward Picard
    iteration for psi12."""
    u.check_grid(g)
    y.check_grid(g)
    K, psi0, A1, A2, base1, base2 = _costate_pieces(p, y, u, g)
    psi1 = _backward_1d(base1, A1, g.Wus)
    psi2 = _backward_1d(base2, A2, g.Wut)
    z0 = _psi12_forcing(p, y, u, g, K, psi0, psi1, psi2)
    psi12 = solve_adjoint(K, z0, g, tol, method="picard")
    return CoState(psi0, psi1, psi2, psi12)


def costate_via_resolvent(p: ProblemDef, y: ScalarField2, u: ControlField,
                          g: Grid, tol: float = 1e-10) -> CoState:
    """Resolvent path: Neumann series for psi1/psi2 and the kernel
    resolvent for psi12. Same discrete objects as solve_costate up to
    series truncation for psi1/psi2 and quadrature-level composition
    error for psi12."""
    u.check_grid(g)
    y.check_grid(g)
    K, psi0, A1, A2, base1, base2 = _costate_pieces(p, y, u, g)
    psi1 = _neumann_1d_covector(base1, A1, g.Wus, tol)
    psi2 = _neumann_1d_covector(base2, A2, g.Wut, tol)
    z0 = _psi12_forcing(p, y, u, g, K, psi0, psi1, psi2)
    psi12 = solve_adjoint(K, z0, g, tol, method="resolvent")
    return CoState(psi0, psi1, psi2, psi12)


def costate_residuals(p: ProblemDef, y: ScalarField2, u: ControlField,
                      psi: CoState, g: Grid) -> dict[str, float]:
    """Sup-norm residuals of the four backward equations at the given
    co-state; diagnostics for cross-validation."""
    K, psi0, A1, A2, base1, base2 = _costate_pieces(p, y, u, g)
    r0 = float(np.abs(psi.psi0 - psi0).max()) if psi0.size else 0.0
    r1 = psi.psi1 - base1 - np.einsum("ai,ip,iapq->aq", g.Wus, psi.psi1, A1)
    r2 = psi.psi2 - base2 - np.einsum("bj,jp,jbpq->bq", g.Wut, psi.psi2, A2)
    z0 = _psi12_forcing(p, y, u, g, K, psi0, psi.psi1, psi.psi2)
    r12 = (psi.psi12.values - z0.values
           - gv_adjoint_apply(psi.psi12, K, g).values)
    return {
        "psi0": r0,
        "psi1": float(np.abs(r1).max()),
        "psi2": float(np.abs(r2).max()),
        "psi12": float(np.abs(r12).max()),
    }


# ------------------------------------------------------------- Hamiltonians


class HamiltonianLattices:
    """Prebuilt argument tuples for every dynamics evaluation a
    Hamiltonian field needs.

    Controls are passed as the effective per-point arrays (U1, U2, U12):
    the Hamiltonian at lattice point (i, j) sees (U1[i], U2[j],
    U12[i,j]); h1 at i sees (U1[i], U2[-1], U12[i,-1]); h2 and h0
    analogously. Every argument tuple here can be fed to the dynamics
    callables or to their control-derivative callables alike.
    """

    def __init__(self, yv: np.ndarray, U1: np.ndarray, U2: np.ndarray,
                 U12: np.ndarray, g: Grid):
        s = g.s_nodes
        t = g.t_nodes
        A, B = g.A, g.B
        yAB = yv[-1, -1]
        ysB = yv[:, -1, :]
        yAt = yv[-1, :, :]

        # --- h12 lattice: point (i, j), controls (U1[i], U2[j], U12[i,j])
        u1_ij = U1[:, None, :]
        u2_ij = U2[None, :, :]
        su = (u1_ij, u2_ij, U12)
        self.h12_f0 = (s[:, None], t[None, :], *su)
        self.h12_f2B = (s[:, None], B, t[None, :], yv, u1_ij, u2_ij, U12)
        self.h12_f1A = (A, t[None, :], s[:, None], yv, u1_ij, u2_ij, U12)
        self.h12_f12AB = (A, B, s[:, None], t[None, :], yv, u1_ij, u2_ij, U12)
        # band over sig_a: lattice (a, i, j)
        y_b = yv[None, :, :, :]
        u1_b = U1[None, :, None, :]
        u2_b = U2[None, None, :, :]
        u12_b = U12[None, :, :, :]
        self.h12_f1band = (s[:, None, None], t[None, None, :], s[None, :, None],
                           y_b, u1_b, u2_b, u12_b)
        self.h12_f12Bband = (s[:, None, None], B, s[None, :, None],
                             t[None, None, :], y_b, u1_b, u2_b, u12_b)
        # band over tau_b: lattice (b, i, j)
        self.h12_f2band = (s[None, :, None], t[:, None, None], t[None, None, :],
                           y_b, u1_b, u2_b, u12_b)
        self.h12_f12Aband = (A, t[:, None, None], s[None, :, None],
                             t[None, None, :], y_b, u1_b, u2_b, u12_b)
        # double band: lattice (a, b, i, j)
        y_bb = yv[None, None, :, :, :]
        self.h12_f12band2 = (
            s[:, None, None, None], t[None, :, None, None],
            s[None, None, :, None], t[None, None, None, :],
            y_bb, U1[None, None, :, None, :], U2[None, None, None, :, :],
            U12[None, None, :, :, :],
        )
        self.h12_F12 = (s[:, None], t[None, :], yv, u1_ij, u2_ij, U12)

        # --- h1 lattice: point i, controls (U1[i], U2[-1], U12[i,-1])
        u2e = U2[None, -1]
        u12sB = U12[:, -1, :]
        self.h1_f0 = (s, B, U1, u2e, u12sB)
        self.h1_f1A = (A, B, s, ysB, U1, u2e, u12sB)
        self.h1_f1band = (s[:, None], B, s[None, :], ysB[None, :, :],
                          U1[None, :, :], u2e[None, :, :], u12sB[None, :, :])
        self.h1_F1 = (s, ysB, U1, u2e, u12sB)

        # --- h2 lattice: point j, controls (U1[-1], U2[j], U12[-1,j])
        u1e = U1[None, -1]
        u12At = U12[-1, :, :]
        self.h2_f0 = (A, t, u1e, U2, u12At)
        self.h2_f2B = (A, B, t, yAt, u1e, U2, u12At)
        self.h2_f2band = (A, t[:, None], t[None, :], yAt[None, :, :],
                          u1e[None, :, :], U2[None, :, :], u12At[None, :, :])
        self.h2_F2 = (t, yAt, u1e, U2, u12At)

        # --- h0: corner point, controls (U1[-1], U2[-1], U12[-1,-1])
        self.h0_f0 = (A, B, U1[-1], U2[-1], U12[-1, -1])
        self.h0_F0 = (yAB, U1[-1], U2[-1], U12[-1, -1])


def _gather(fn, args, lshape, n: int, pc, name: str) -> np.ndarray:
    """Evaluate a dynamics callable (pc=None) or a control-derivative
    callable (pc=width) and return shape lshape + (n, d)."""
    if pc is None:
        out = eval_map(fn, args, lshape, (n,), name)
        return out[..., None]
    return eval_map(fn, args, lshape, (n, pc), name)


def _gather_F(fn, args, lshape, pc, name: str) -> np.ndarray:
    if pc is None:
        out = eval_map(fn, args, lshape, (), name)
        return out[..., None]
    return eval_map(fn, args, lshape, (pc,), name)


def _selectors(p: ProblemDef, block):
    """(f0, f1, f2, f12, F0, F1, F2, F12, pc) for value or du-block mode."""
    if block is None:
        return (p.f0, p.f1, p.f2, p.f12, p.F0, p.F1, p.F2, p.F12, None)
    pc = p.pdims[block]
    return (
        getattr(p.du_f0, block), getattr(p.du_f1, block),
        getattr(p.du_f2, block), getattr(p.du_f12, block),
        getattr(p.du_F0, block), getattr(p.du_F1, block),
        getattr(p.du_F2, block), getattr(p.du_F12, block), pc,
    )


def h12_field(p: ProblemDef, lat: HamiltonianLattices, psi: CoState,
              g: Grid, block=None) -> np.ndarray:
    """h12 over the full (i, j) lattice; with block set, its control
    derivative instead (trailing axis of that block's width)."""
    f0, f1, f2, f12, _, _, _, F12, pc = _selectors(p, block)
    n = p.n
    n1s, n1t = g.shape
    sfx = "" if block is None else f" du[{block}]"
    h = _gather_F(F12, lat.h12_F12, (n1s, n1t), pc, "F12" + sfx).copy()
    if f0 is not None:
        E = _gather(f0, lat.h12_f0, (n1s, n1t), n, pc, "f0" + sfx)
        h += np.einsum("ijp,ijpd->ijd", psi.psi12.values, E)
    if f2 is not None:
        E = _gather(f2, lat.h12_f2B, (n1s, n1t), n, pc, "f2" + sfx)
        h += np.einsum("ip,ijpd->ijd", psi.psi1, E)
    if f1 is not None:
        E = _gather(f1, lat.h12_f1A, (n1s, n1t), n, pc, "f1" + sfx)
        h += np.einsum("jp,ijpd->ijd", psi.psi2, E)
    if f12 is not None:
        E = _gather(f12, lat.h12_f12AB, (n1s, n1t), n, pc, "f12" + sfx)
        h += np.einsum("p,ijpd->ijd", psi.psi0, E)
    if f1 is not None:
        E = _gather(f1, lat.h12_f1band, (n1s, n1s, n1t), n, pc, "f1" + sfx)
        h += np.einsum("ia,ajp,aijpd->ijd", g.Wus, psi.psi12.values, E,
                       optimize=True)
    if f12 is not None:
        E = _gather(f12, lat.h12_f12Bband, (n1s, n1s, n1t), n, pc, "f12" + sfx)
        h += np.einsum("ia,ap,aijpd->ijd", g.Wus, psi.psi1, E, optimize=True)
    if f2 is not None:
        E = _gather(f2, lat.h12_f2band, (n1t, n1s, n1t), n, pc, "f2" + sfx)
        h += np.einsum("jb,ibp,bijpd->ijd", g.Wut, psi.psi12.values, E,
                       optimize=True)
    if f12 is not None:
        E = _gather(f12, lat.h12_f12Aband, (n1t, n1s, n1t), n, pc, "f12" + sfx)
        h += np.einsum("jb,bp,bijpd->ijd", g.Wut, psi.psi2, E, optimize=True)
        E = _gather(f12, lat.h12_f12band2, (n1s, n1t, n1s, n1t), n, pc,
                    "f12" + sfx)
        h += np.einsum("ia,jb,abp,abijpd->ijd", g.Wus, g.Wut,
                       psi.psi12.values, E, optimize=True)
    return h[..., 0] if block is None else h


def h1_field(p: ProblemDef, lat: HamiltonianLattices, psi: CoState,
             g: Grid, block=None) -> np.ndarray:
    f0, f1, _, _, _, F1, _, _, pc = _selectors(p, block)
    n = p.n
    n1s = g.Ns + 1
    sfx = "" if block is None else f" du[{block}]"
    h = _gather_F(F1, lat.h1_F1, (n1s,), pc, "F1" + sfx).copy()
    if f0 is not None:
        E = _gather(f0, lat.h1_f0, (n1s,), n, pc, "f0" + sfx)
        h += np.einsum("ip,ipd->id", psi.psi1, E)
    if f1 is not None:
        E = _gather(f1, lat.h1_f1A, (n1s,), n, pc, "f1" + sfx)
        h += np.einsum("p,ipd->id", psi.psi0, E)
        E = _gather(f1, lat.h1_f1band, (n1s, n1s), n, pc, "f1" + sfx)
        h += np.einsum("ia,ap,aipd->id", g.Wus, psi.psi1, E, optimize=True)
    return h[..., 0] if block is None else h


def h2_field(p: ProblemDef, lat: HamiltonianLattices, psi: CoState,
             g: Grid, block=None) -> np.ndarray:
    f0, _, f2, _, _, _, F2, _, pc = _selectors(p, block)
    n = p.n
    n1t = g.Nt + 1
    sfx = "" if block is None else f" du[{block}]"
    h = _gather_F(F2, lat.h2_F2, (n1t,), pc, "F2" + sfx).copy()
    if f0 is not None:
        E = _gather(f0, lat.h2_f0, (n1t,), n, pc, "f0" + sfx)
        h += np.einsum("jp,jpd->jd", psi.psi2, E)
    if f2 is not None:
        E = _gather(f2, lat.h2_f2B, (n1t,), n, pc, "f2" + sfx)
        h += np.einsum("p,jpd->jd", psi.psi0, E)
        E = _gather(f2, lat.h2_f2band, (n1t, n1t), n, pc, "f2" + sfx)
        h += np.einsum("jb,bp,bjpd->jd", g.Wut, psi.psi2, E, optimize=True)
    return h[..., 0] if block is None else h


def h0_value(p: ProblemDef, lat: HamiltonianLattices, psi: CoState,
             block=None) -> np.ndarray:
    f0, _, _, _, F0, _, _, _, pc = _selectors(p, block)
    sfx = "" if block is None else f" du[{block}]"
    h = _gather_F(F0, lat.h0_F0, (), pc, "F0" + sfx).copy()
    if f0 is not None:
        E = _gather(f0, lat.h0_f0, (), p.n, pc, "f0" + sfx)
        h += np.einsum("p,pd->d", psi.psi0, E)
    return h[0] if block is None else h


def h_fields(p: ProblemDef, y: ScalarField2, U1, U2, U12, psi: CoState,
             g: Grid):
    """All four Hamiltonian fields for given effective control arrays:
    (h0 scalar, h1 (Ns+1,), h2 (Nt+1,), h12 (Ns+1, Nt+1))."""
    lat = HamiltonianLattices(y.values, U1, U2, U12, g)
    return (
        float(h0_value(p, lat, psi)),
        h1_field(p, lat, psi, g),
        h2_field(p, lat, psi, g),
        h12_field(p, lat, psi, g),
    )


def h_block_fields(p: ProblemDef, y: ScalarField2, u: ControlField,
                   psi: CoState, g: Grid, block: str):
    """Control-derivative fields of the four Hamiltonians for one block:
    (d_h0 (pc,), d_h1 (Ns+1, pc), d_h2 (Nt+1, pc), d_h12 (Ns+1, Nt+1, pc))."""
    lat = HamiltonianLattices(y.values, u.u1, u.u2, u.u12, g)
    return (
        h0_value(p, lat, psi, block=block),
        h1_field(p, lat, psi, g, block=block),
        h2_field(p, lat, psi, g, block=block),
        h12_field(p, lat, psi, g, block=block),
    )


def hamiltonians(p: ProblemDef, y: ScalarField2, u: ControlField,
                 psi: CoState, g: Grid, at, u_override=None) -> float:
    """Hamiltonian value at one location.

    at is ("h0",), ("h1", i), ("h2", j), or ("h12", i, j) (a bare "h0"
    string is accepted). u_override optionally replaces control blocks
    at the location's own evaluation point: a dict with keys among
    {"u1", "u2", "u12"} mapping to block vectors.
    """
    if isinstance(at, str):
        at = (at,)
    if not at or at[0] not in ("h0", "h1", "h2", "h12"):
        raise ValueError(f"invalid location {at!r}")
    kind = at[0]
    U1, U2, U12 = u.u1, u.u2, u.u12
    if u_override:
        for k in u_override:
            if k not in ("u1", "u2", "u12"):
                raise ValueError(f"unknown control block {k!r}")
        n1s, n1t = g.shape
        if kind == "h0":
            i, j = n1s - 1, n1t - 1
        elif kind == "h1":
            i, j = at[1], n1t - 1
        elif kind == "h2":
            i, j = n1s - 1, at[1]
        else:
            i, j = at[1], at[2]
        if "u1" in u_override:
            U1 = U1.copy()
            U1[i] = np.asarray(u_override["u1"], dtype=float)
        if "u2" in u_override:
            U2 = U2.copy()
            U2[j] = np.asarray(u_override["u2"], dtype=float)
        if "u12" in u_override:
            U12 = U12.copy()
            U12[i, j] = np.asarray(u_override["u12"], dtype=float)
    lat = HamiltonianLattices(y.values, U1, U2, U12, g)
    if kind == "h0":
        if len(at) != 1:
            raise ValueError(f"invalid location {at!r}")
        return float(h0_value(p, lat, psi))
    if kind == "h1":
        if len(at) != 2:
            raise ValueError(f"invalid location {at!r}")
        return float(h1_field(p, lat, psi, g)[at[1]])
    if kind == "h2":
        if len(at) != 2:
            raise ValueError(f"invalid location {at!r}")
        return float(h2_field(p, lat, psi, g)[at[1]])
    if len(at) != 3:
        raise ValueError(f"invalid location {at!r}")
    return float(h12_field(p, lat, psi, g)[at[1], at[2]])
