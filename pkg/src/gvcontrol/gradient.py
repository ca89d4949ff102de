"""Cost functional and its exact discrete control gradient.

The cost is

    J = F0(y(A,B), u1(A), u2(B), u12(A,B)) + int_0^A F1(s, y(s,B), ...) ds
      + int_0^B F2(t, y(A,t), ...) dt + int int F12(s,t, y(s,t), ...) dt ds

with every integral trapezoidal. The gradient is assembled from the
control derivatives of the Hamiltonian fields; with the co-state from
solve_costate it is the exact gradient of the discrete cost, reported
in density form:

    dJ = sum_a ws[a] g_u1[a].du1[a] + sum_b wt[b] g_u2[b].du2[b]
       + sum_ab ws[a] wt[b] g_u12[a,b].du12[a,b]

Endpoint Hamiltonian contributions (h0 at the corner, h1 along t = B,
h2 along s = A) are folded into the matching boundary rows of the
density fields by dividing by the trapezoid endpoint weights; the raw
covectors are kept in g_end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costate import CoState, h_block_fields, linearized_kernels
from .errors import ConvergenceError
from .forward import ForwardOptions, solve_forward
from .grid import Grid, ScalarField2
from .gvlinalg import gv_apply
from .problem import (
    ControlField,
    ProblemDef,
    _F0_args,
    _F1_args,
    _F2_args,
    _F12_args,
    _f1_args,
    _f2_args,
    _f12_args,
    eval_F0,
    eval_F1,
    eval_F2,
    eval_F12,
    eval_dy_F0,
    eval_dy_F1,
    eval_dy_F2,
    eval_dy_F12,
    eval_map,
    u_args_f0,
)

__all__ = [
    "EndpointGradients",
    "GradientField",
    "cost",
    "gradient",
    "control_inner",
    "fd_directional",
    "FDCheck",
    "linearized_state_variation",
    "first_variation_raw",
]


def cost(p: ProblemDef, y: ScalarField2, u: ControlField, g: Grid) -> float:
    yv = y.values
    J = eval_F0(p, yv, u, g)
    J += float(g.ws @ eval_F1(p, yv, u, g))
    J += float(g.wt @ eval_F2(p, yv, u, g))
    J += float(g.ws @ eval_F12(p, yv, u, g) @ g.wt)
    return J


@dataclass
class EndpointGradients:
    """Raw endpoint covectors before density folding: the corner
    derivative of h0 plus the weighted endpoint sums of h1/h2, and the
    u12 derivatives along the two boundary Hamiltonian families."""

    u1: np.ndarray
    u2: np.ndarray
    u12_corner: np.ndarray
    u12_s_edge: np.ndarray
    u12_t_edge: np.ndarray


@dataclass
class GradientField:
    g_u1: np.ndarray
    g_u2: np.ndarray
    g_u12: np.ndarray
    g_end: EndpointGradients

    @property
    def u1(self) -> np.ndarray:
        return self.g_u1

    @property
    def u2(self) -> np.ndarray:
        return self.g_u2

    @property
    def u12(self) -> np.ndarray:
        return self.g_u12


def gradient(p: ProblemDef, y: ScalarField2, u: ControlField, psi: CoState,
             g: Grid) -> GradientField:
    """Exact gradient of the discrete cost in density form."""
    n1s, n1t = g.shape
    ws_end = g.ws[-1]
    wt_end = g.wt[-1]

    def block(name: str, pc: int):
        if pc == 0:
            z = np.zeros(0)
            return z, np.zeros((n1s, 0)), np.zeros((n1t, 0)), \
                np.zeros((n1s, n1t, 0))
        return h_block_fields(p, y, u, psi, g, name)

    d0_1, d1_1, d2_1, d12_1 = block("u1", p.p1)
    d0_2, d1_2, d2_2, d12_2 = block("u2", p.p2)
    d0_12, d1_12, d2_12, d12_12 = block("u12", p.p12)

    g1 = d1_1 + np.einsum("j,ijc->ic", g.wt, d12_1)
    end1 = d0_1 + np.einsum("j,jc->c", g.wt, d2_1)
    g1[-1] += end1 / ws_end

    g2 = d2_2 + np.einsum("i,ijc->jc", g.ws, d12_2)
    end2 = d0_2 + np.einsum("i,ic->c", g.ws, d1_2)
    g2[-1] += end2 / wt_end

    g12 = d12_12.copy()
    g12[:, -1] += d1_12 / wt_end
    g12[-1, :] += d2_12 / ws_end
    g12[-1, -1] += d0_12 / (ws_end * wt_end)

    ends = EndpointGradients(end1, end2, d0_12, d1_12, d2_12)
    return GradientField(g1, g2, g12, ends)


def _triple(x):
    if hasattr(x, "u1"):
        return np.asarray(x.u1, float), np.asarray(x.u2, float), \
            np.asarray(x.u12, float)
    a, b, c = x
    return np.asarray(a, float), np.asarray(b, float), np.asarray(c, float)


def control_inner(x, y, g: Grid) -> float:
    """Weighted inner product over control triples. Accepts
    ControlField, GradientField, or a plain (u1, u2, u12) tuple."""
    x1, x2, x12 = _triple(x)
    y1, y2, y12 = _triple(y)
    out = 0.0
    if x1.size:
        out += float(np.einsum("i,ic,ic->", g.ws, x1, y1))
    if x2.size:
        out += float(np.einsum("j,jc,jc->", g.wt, x2, y2))
    if x12.size:
        out += float(np.einsum("i,j,ijc,ijc->", g.ws, g.wt, x12, y12))
    return out


@dataclass
class FDCheck:
    """Central finite-difference data for one direction: estimates at
    eps and eps/2 and their Richardson combination."""

    d: float
    d_half: float
    richardson: float
    eps: float


def _feasible_eps(u: ControlField, du, eps: float) -> float:
    d1, d2, d12 = du
    for _ in range(60):
        ok = True
        for sgn in (1.0, -1.0):
            for arr, dd, box in (
                (u.u1, d1, u.boxes.u1),
                (u.u2, d2, u.boxes.u2),
                (u.u12, d12, u.boxes.u12),
            ):
                if arr.size and not box.contains(arr + sgn * eps * dd,
                                                 slack=0.0):
                    ok = False
        if ok:
            return eps
        eps *= 0.5
    raise ValueError("no feasible finite-difference step inside the boxes")


def fd_directional(p: ProblemDef, u: ControlField, du, g: Grid,
                   eps: float = 1e-5,
                   opts: ForwardOptions | None = None) -> FDCheck:
    """Central difference of J along direction du = (du1, du2, du12),
    with eps halved until u +- eps du stays inside the boxes. Solves
    the state at each probe; the eps/2 re-estimate gives the usual
    Richardson combination (4 d_half - d) / 3.
    """
    du = _triple(du)
    if opts is None:
        opts = ForwardOptions(tol=1e-12, max_iters=400)
    eps = _feasible_eps(u, du, eps)

    def J_at(h: float) -> float:
        up = ControlField(u.u1 + h * du[0], u.u2 + h * du[1],
                          u.u12 + h * du[2], u.boxes)
        res = solve_forward(p, up, g, opts)
        return cost(p, res.y, up, g)

    d = (J_at(eps) - J_at(-eps)) / (2 * eps)
    dh = (J_at(0.5 * eps) - J_at(-0.5 * eps)) / eps
    return FDCheck(d, dh, (4.0 * dh - d) / 3.0, eps)


def linearized_state_variation(p: ProblemDef, y: ScalarField2,
                               u: ControlField, du, g: Grid,
                               tol: float = 1e-12,
                               max_iters: int = 400) -> ScalarField2:
    """Solve the linearized state equation dy = z0 + K (*) dy, where K
    are the y-Jacobian kernels at (y, u) and z0 collects the control
    derivatives of the dynamics against du."""
    d1, d2, d12 = _triple(du)
    yv = y.values
    n1s, n1t = g.shape
    n = p.n
    K = linearized_kernels(p, y, u, g)
    z0 = np.zeros((n1s, n1t, n))

    def add_f0(fn, pat, vec, pc):
        nonlocal z0
        if fn is None or pc == 0 or not vec.size:
            return
        s = g.s_nodes[:, None]
        t = g.t_nodes[None, :]
        E = eval_map(fn, (s, t, *u_args_f0(u)), (n1s, n1t), (n, pc), "du_f0")
        z0 = z0 + np.einsum(pat, E, vec)

    add_f0(p.du_f0.u1, "ijnf,if->ijn", d1, p.p1)
    add_f0(p.du_f0.u2, "ijnf,jf->ijn", d2, p.p2)
    add_f0(p.du_f0.u12, "ijnf,ijf->ijn", d12, p.p12)

    def add_band(fn, args, lshape, pat, vec, pc, w, name):
        nonlocal z0
        if fn is None or pc == 0 or not vec.size:
            return
        E = eval_map(fn, args, lshape, (n, pc), name)
        z0 = z0 + np.einsum(pat, *w, E, vec, optimize=True)

    a1 = _f1_args(u, yv, g)
    add_band(p.du_f1.u1, a1, (n1s, n1t, n1s), "ia,ijanf,af->ijn", d1, p.p1,
             (g.Ws,), "du_f1")
    add_band(p.du_f1.u2, a1, (n1s, n1t, n1s), "ia,ijanf,jf->ijn", d2, p.p2,
             (g.Ws,), "du_f1")
    add_band(p.du_f1.u12, a1, (n1s, n1t, n1s), "ia,ijanf,ajf->ijn", d12,
             p.p12, (g.Ws,), "du_f1")
    a2 = _f2_args(u, yv, g)
    add_band(p.du_f2.u1, a2, (n1s, n1t, n1t), "jb,ijbnf,if->ijn", d1, p.p1,
             (g.Wt,), "du_f2")
    add_band(p.du_f2.u2, a2, (n1s, n1t, n1t), "jb,ijbnf,bf->ijn", d2, p.p2,
             (g.Wt,), "du_f2")
    add_band(p.du_f2.u12, a2, (n1s, n1t, n1t), "jb,ijbnf,ibf->ijn", d12,
             p.p12, (g.Wt,), "du_f2")
    a12 = _f12_args(u, yv, g)
    add_band(p.du_f12.u1, a12, (n1s, n1t, n1s, n1t), "ia,jb,ijabnf,af->ijn",
             d1, p.p1, (g.Ws, g.Wt), "du_f12")
    add_band(p.du_f12.u2, a12, (n1s, n1t, n1s, n1t), "ia,jb,ijabnf,bf->ijn",
             d2, p.p2, (g.Ws, g.Wt), "du_f12")
    add_band(p.du_f12.u12, a12, (n1s, n1t, n1s, n1t), "ia,jb,ijabnf,abf->ijn",
             d12, p.p12, (g.Ws, g.Wt), "du_f12")

    dy = ScalarField2(z0.copy())
    z0f = ScalarField2(z0)
    for _ in range(max_iters):
        nxt = ScalarField2(z0f.values + gv_apply(K, dy, g).values)
        delta = float(np.abs(nxt.values - dy.values).max())
        dy = nxt
        if delta <= tol:
            return dy
    raise ConvergenceError(
        f"linearized state iteration did not reach {tol}",
        last_delta=delta, iterations=max_iters)


def first_variation_raw(p: ProblemDef, y: ScalarField2, u: ControlField,
                        du, g: Grid, tol: float = 1e-12) -> float:
    """First variation of J along du computed from the linearized state
    (chain rule, no co-state). Must agree with
    control_inner(gradient(...), du, g) up to solver tolerances."""
    d1, d2, d12 = _triple(du)
    yv = y.values
    dyv = linearized_state_variation(p, y, u, du, g, tol=tol).values

    out = float(eval_dy_F0(p, yv, u, g) @ dyv[-1, -1])
    out += float(np.einsum("i,in,in->", g.ws, eval_dy_F1(p, yv, u, g),
                           dyv[:, -1]))
    out += float(np.einsum("j,jn,jn->", g.wt, eval_dy_F2(p, yv, u, g),
                           dyv[-1]))
    out += float(np.einsum("i,j,ijn,ijn->", g.ws, g.wt,
                           eval_dy_F12(p, yv, u, g), dyv))

    def addF(fn, args, lshape, pat, vec, pc, w, name):
        nonlocal out
        if fn is None or pc == 0 or not vec.size:
            return
        E = eval_map(fn, args, lshape, (pc,), name)
        out += float(np.einsum(pat, *w, E, vec, optimize=True))

    n1s, n1t = g.shape
    aF0 = _F0_args(u, yv)
    addF(p.du_F0.u1, aF0, (), "f,f->", d1[-1], p.p1, (), "du_F0")
    addF(p.du_F0.u2, aF0, (), "f,f->", d2[-1], p.p2, (), "du_F0")
    addF(p.du_F0.u12, aF0, (), "f,f->", d12[-1, -1], p.p12, (), "du_F0")
    aF1 = _F1_args(u, yv, g)
    addF(p.du_F1.u1, aF1, (n1s,), "i,if,if->", d1, p.p1, (g.ws,), "du_F1")
    addF(p.du_F1.u2, aF1, (n1s,), "i,if,f->", d2[-1], p.p2, (g.ws,), "du_F1")
    addF(p.du_F1.u12, aF1, (n1s,), "i,if,if->", d12[:, -1], p.p12, (g.ws,),
         "du_F1")
    aF2 = _F2_args(u, yv, g)
    addF(p.du_F2.u1, aF2, (n1t,), "j,jf,f->", d1[-1], p.p1, (g.wt,), "du_F2")
    addF(p.du_F2.u2, aF2, (n1t,), "j,jf,jf->", d2, p.p2, (g.wt,), "du_F2")
    addF(p.du_F2.u12, aF2, (n1t,), "j,jf,jf->", d12[-1], p.p12, (g.wt,),
         "du_F2")
    aF12 = _F12_args(u, yv, g)
    addF(p.du_F12.u1, aF12, (n1s, n1t), "i,j,ijf,if->", d1, p.p1,
         (g.ws, g.wt), "du_F12")
    addF(p.du_F12.u2, aF12, (n1s, n1t), "i,j,ijf,jf->", d2, p.p2,
         (g.ws, g.wt), "du_F12")
    addF(p.du_F12.u12, aF12, (n1s, n1t), "i,j,ijf,ijf->", d12, p.p12,
         (g.ws, g.wt), "du_F12")
    return out
