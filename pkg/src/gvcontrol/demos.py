"""Ready-made problem instances.

Manufactured problems with closed-form states (for solver order
checks), a synthetic linear-quadratic tracking family whose optimum is
independently computable, and the gas-chromatography identification
problem (state [phi, phi_s, phi_t], control = flow velocity).

Demo problems are grid-bound: coefficient tables and reference fields
are precomputed on the construction grid and looked up by nearest node,
so evaluate them on the same grid they were built with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forward import ForwardOptions, solve_forward
from .grid import Grid, ScalarField2
from .gvlinalg import neumann_resolvent_1d
from .problem import (
    Box,
    ControlBoxes,
    ControlField,
    IndependenceFlags,
    ProblemDef,
    UJac,
)

__all__ = [
    "DemoInstance",
    "ChromatographyParams",
    "make_manufactured",
    "make_synthetic_lq",
    "make_chromatography",
    "REGISTRY",
]


@dataclass
class DemoInstance:
    problem: ProblemDef
    u0: ControlField
    descriptor: dict = field(default_factory=dict)


def _empty_controls(g: Grid) -> ControlField:
    boxes = ControlBoxes.bounds(-1.0, 1.0, 0, 0, 0)
    return ControlField.constant(g, boxes)


# ------------------------------------------------------- manufactured


def make_manufactured(name: str, g: Grid) -> DemoInstance:
    """Problems with closed-form states:

    - "manufactured-linear": f1 = y, f0 = s t - t s^2/2  -> y = s t
      (trapezoid-exact: the integrand is linear in sigma)
    - "exp-growth": f1 = y, f0 = 1 -> y = e^s
    - "exp-2d": f12 = y, f0 = e^s + e^t - 1 -> y = e^{s+t}
    """
    flags = IndependenceFlags(*([True] * 9))
    if name == "manufactured-linear":
        p = ProblemDef(
            n=1, p1=0, p2=0, p12=0,
            f0=lambda s, t, u1, u2, u12: (s * t - t * s**2 / 2.0),
            f1=lambda s, t, sig, y, u1, u2, u12: y,
            dy_f1=lambda s, t, sig, y, u1, u2, u12: np.ones(y.shape + (1,)),
            F12=lambda s, t, y, u1, u2, u12: y[..., 0],
            dy_F12=lambda s, t, y, u1, u2, u12: np.ones_like(y),
            L1=1.0, flags=flags, name=name,
        )
        exact = lambda s, t: s * t
    elif name == "exp-growth":
        p = ProblemDef(
            n=1, p1=0, p2=0, p12=0,
            f0=lambda s, t, u1, u2, u12: np.broadcast_to(
                1.0, np.broadcast_shapes(np.shape(s), np.shape(t))),
            f1=lambda s, t, sig, y, u1, u2, u12: y,
            dy_f1=lambda s, t, sig, y, u1, u2, u12: np.ones(y.shape + (1,)),
            F12=lambda s, t, y, u1, u2, u12: y[..., 0],
            dy_F12=lambda s, t, y, u1, u2, u12: np.ones_like(y),
            L1=1.0, flags=flags, name=name,
        )
        exact = lambda s, t: np.exp(s) + 0.0 * t
    elif name == "exp-2d":
        p = ProblemDef(
            n=1, p1=0, p2=0, p12=0,
            f0=lambda s, t, u1, u2, u12: np.exp(s) + np.exp(t) - 1.0,
            f12=lambda s, t, sig, tau, y, u1, u2, u12: y,
            dy_f12=lambda s, t, sig, tau, y, u1, u2, u12: np.ones(
                y.shape + (1,)),
            F12=lambda s, t, y, u1, u2, u12: y[..., 0],
            dy_F12=lambda s, t, y, u1, u2, u12: np.ones_like(y),
            L12=1.0, flags=flags, name=name,
        )
        exact = lambda s, t: np.exp(s + t)
    else:
        raise ValueError(f"unknown manufactured problem {name!r}")
    return DemoInstance(p, _empty_controls(g), {"exact": exact})


# ------------------------------------------------------- synthetic LQ


def _nearest_lookup(nodes: np.ndarray):
    h = nodes[1] - nodes[0] if nodes.size > 1 else 1.0
    top = nodes.size - 1

    def ix(x):
        return np.clip(np.rint(np.asarray(x) / h).astype(int), 0, top)

    return ix


def _u_true_field(g: Grid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c = rng.uniform(-0.3, 0.3, size=(3, 3))
    c[0, 0] = 1.0
    s = g.s_nodes[:, None]
    t = g.t_nodes[None, :]
    out = np.zeros(g.shape)
    for k in range(3):
        for l in range(3):
            out += c[k, l] * np.cos((k + 0.5) * math.pi * s / g.A) \
                * np.cos((l + 0.5) * math.pi * t / g.B)
    return out[..., None]


def make_synthetic_lq(g: Grid, seed: int = 0,
                      variant: str = "regularized") -> DemoInstance:
    """Scalar tracking problem with control u12 only.

    variants:
    - "regularized": f12 = 0.1 y + u12, F12 = 1/2 (y - y_ref)^2
      + 1/2 (0.01) u^2; y_ref generated by a known control, box [-4, 4].
      The finite-dimensional optimum is computable by brute force
      (quadratic cost, 289 unknowns at 16x16).
    - "inverse-crime": f12 = u12, no penalty; y_ref generated by u_true
      on the same grid, so J(u_true) = 0 is the global minimum.
    - "decoupled": dynamics-free F12 = 1/2 (u12 - c(s,t))^2 with
      unbounded box; optimum u12 = c pointwise.

    The descriptor carries u_true / y_ref / c for verification.
    """
    flags = IndependenceFlags(*([True] * 9))
    jx_s = _nearest_lookup(g.s_nodes)
    jx_t = _nearest_lookup(g.t_nodes)

    if variant == "decoupled":
        rng = np.random.default_rng(seed)
        amp = rng.uniform(0.4, 1.2, size=3)
        s = g.s_nodes[:, None]
        t = g.t_nodes[None, :]
        cfield = (amp[0] + amp[1] * np.sin(2.0 * s + t)
                  + amp[2] * np.cos(s - t))[..., None]

        def F12(s, t, y, u1, u2, u12):
            c = cfield[jx_s(s), jx_t(t), 0]
            return 0.5 * (u12[..., 0] - c) ** 2

        def du_F12_u12(s, t, y, u1, u2, u12):
            c = cfield[jx_s(s), jx_t(t), 0]
            return (u12[..., 0] - c)[..., None]

        p = ProblemDef(
            n=1, p1=0, p2=0, p12=1,
            F12=F12,
            du_F12=UJac(u12=du_F12_u12),
            flags=flags, name="lq-decoupled",
        )
        boxes = ControlBoxes.bounds(-math.inf, math.inf, 0, 0, 1)
        u0 = ControlField.constant(g, boxes, v12=(0.0,))
        return DemoInstance(p, u0, {"c": cfield, "variant": variant})

    if variant == "regularized":
        a, rho = 0.1, 0.01
    elif variant == "inverse-crime":
        a, rho = 0.0, 0.0
    else:
        raise ValueError(f"unknown variant {variant!r}")

    boxes = ControlBoxes.bounds(-4.0, 4.0, 0, 0, 1)
    u_true = _u_true_field(g, seed)

    def f12(s, t, sig, tau, y, u1, u2, u12):
        return a * y + u12

    def dy_f12(s, t, sig, tau, y, u1, u2, u12):
        return np.full(y.shape + (1,), a)

    def du_f12_u12(s, t, sig, tau, y, u1, u2, u12):
        return np.ones(y.shape + (1,))

    # reference trajectory from the true control under the same dynamics
    p_dyn = ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        f12=f12, dy_f12=dy_f12, du_f12=UJac(u12=du_f12_u12),
        F12=lambda s, t, y, u1, u2, u12: 0.0 * y[..., 0],
        L12=abs(a) if a else 0.0,
        flags=flags,
    )
    u_ref = ControlField(np.zeros((g.Ns + 1, 0)), np.zeros((g.Nt + 1, 0)),
                         u_true.copy(), boxes)
    y_ref = solve_forward(p_dyn, u_ref, g,
                          ForwardOptions(tol=1e-13, max_iters=400)).y.values

    def F12(s, t, y, u1, u2, u12):
        r = y_ref[jx_s(s), jx_t(t), 0]
        return 0.5 * (y[..., 0] - r) ** 2 + 0.5 * rho * u12[..., 0] ** 2

    def dy_F12(s, t, y, u1, u2, u12):
        r = y_ref[jx_s(s), jx_t(t), 0]
        return (y[..., 0] - r)[..., None]

    def du_F12_u12(s, t, y, u1, u2, u12):
        return rho * u12

    p = ProblemDef(
        n=1, p1=0, p2=0, p12=1,
        f12=f12, dy_f12=dy_f12, du_f12=UJac(u12=du_f12_u12),
        F12=F12, dy_F12=dy_F12,
        du_F12=UJac(u12=du_F12_u12) if rho else UJac(),
        L12=abs(a) if a else 0.0,
        flags=flags, name=f"lq-{variant}",
    )
    u0 = ControlField.constant(g, boxes, v12=(0.0,))
    return DemoInstance(p, u0, {
        "u_true": u_true, "y_ref": y_ref, "a": a, "rho": rho,
        "variant": variant,
    })


# ------------------------------------------------------- chromatography


@dataclass
class ChromatographyParams:
    """beta: absorption coefficient (> 0). kernel_K: pair (K, K_t) of
    vectorized callables of (s, t, tau). phi0_profile: target field
    callable of (s, t). mu_reg: velocity penalty weight (>= 0).
    v_box: (lo, hi) velocity bounds, lo > 0. initial/inlet: optional
    (profile, derivative) pairs for phi(s, 0) and phi(0, t); Gaussian
    bumps by default.
    """

    beta: float = 4.0
    kernel_K: tuple = None
    phi0_profile: Callable = None
    mu_reg: float = 1e-3
    v_box: tuple = (0.6, 2.0)
    initial: tuple = None
    inlet: tuple = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.mu_reg < 0:
            raise ValueError("mu_reg must be nonnegative")
        if not 0 < self.v_box[0] <= self.v_box[1]:
            raise ValueError("v_box lower bound must be positive")
        if self.kernel_K is None:
            k0 = 0.8
            self.kernel_K = (
                lambda s, t, tau: k0 * (1.0 + s) * np.exp(-(t - tau)),
                lambda s, t, tau: -k0 * (1.0 + s) * np.exp(-(t - tau)),
            )
        if self.phi0_profile is None:
            self.phi0_profile = lambda s, t: np.exp(
                -((s - 0.45) ** 2 + (t - 0.55) ** 2) / 0.18) \
                + 0.0 * (s + t)
        if self.initial is None:
            self.initial = (
                lambda s: np.exp(-((s - 0.3) ** 2) / 0.08),
                lambda s: -2.0 * (s - 0.3) / 0.08
                * np.exp(-((s - 0.3) ** 2) / 0.08),
            )
        if self.inlet is None:
            self.inlet = (
                lambda t: np.exp(-((t - 0.4) ** 2) / 0.1),
                lambda t: -2.0 * (t - 0.4) / 0.1
                * np.exp(-((t - 0.4) ** 2) / 0.1),
            )


def make_chromatography(g: Grid, params: ChromatographyParams | None = None,
                        resolvent_tol: float = 1e-12) -> DemoInstance:
    """Goursat-Volterra form of the gas flow problem, state
    y = [phi, phi_s, phi_t], control v = u12 in a positive box.

    Construction: ell0 = beta / (beta + K(s,t,t)); per s-slice, ell1 is
    the Neumann resolvent of the causal kernel K_t(s,t,tau)/(beta +
    K(s,t,t)) applied to ell0; coefficient fields

        a0 = -beta (ell0_t + ell1(s,t,t)) / v,  a1 = 0 (the v_t term is
        dropped: the demo treats v as a static design field),
        a2 = -beta (1 - ell0) / v,              a3 = beta / v

    enter the three dynamics components; the double-kernel factor uses
    a3(sig,tau) [ell1(sig,t,tau) - ell1(sig,tau,tau)] (exact once a3 is
    frozen at the inner time) and its t-derivative by centered
    differences on the t-grid (one-sided at the causal edge). These
    coefficient shapes are modeling choices for the demo, not unique.
    Every dynamics term scales as 1/v, so control derivatives are
    -value/v. Cost: (phi - phi0)^2 + mu_reg v^2.
    """
    if params is None:
        params = ChromatographyParams()
    beta = params.beta
    Kfun, Ktfun = params.kernel_K
    n1s, n1t = g.shape
    s = g.s_nodes
    t = g.t_nodes
    ht = g.ht

    Kdiag = np.asarray(Kfun(s[:, None], t[None, :], t[None, :]), dtype=float)
    if Kdiag.min() < 0:
        raise ValueError("K(s,t,t) must be nonnegative")
    denom = beta + Kdiag
    if denom.min() <= 0:
        raise ValueError("beta + K(s,t,t) must be positive everywhere")

    L0 = beta / denom
    L0t = np.gradient(L0, ht, axis=1, edge_order=2 if n1t > 2 else 1)

    # ell1[i, j, b] = resolvent at (t_j, tau_b) applied to ell0(s_i, tau_b)
    Kt_slices = np.asarray(
        Ktfun(s[:, None, None], t[None, :, None], t[None, None, :]),
        dtype=float)
    causal = np.tri(n1t, dtype=bool)
    L1 = np.zeros((n1s, n1t, n1t))
    for i in range(n1s):
        Gker = (Kt_slices[i] / denom[i][:, None]) * causal
        if np.abs(Gker).max() > 0:
            R = neumann_resolvent_1d(Gker, ht, resolvent_tol)
        else:
            R = np.zeros_like(Gker)
        L1[i] = R * L0[i][None, :]
    L1d = np.einsum("ijj->ij", L1)

    # d/dt of ell1 in the middle argument; centered in the causal
    # interior, one-sided on the kink row t = tau
    L1t = np.gradient(L1, ht, axis=1, edge_order=2 if n1t > 2 else 1)
    for b in range(n1t):
        j = b
        if b + 2 < n1t:
            L1t[:, j, b] = (-3.0 * L1[:, j, b] + 4.0 * L1[:, j + 1, b]
                            - L1[:, j + 2, b]) / (2.0 * ht)
        elif b + 1 < n1t:
            L1t[:, j, b] = (L1[:, j + 1, b] - L1[:, j, b]) / ht
        else:
            L1t[:, j, b] = 0.0
        if b + 1 < n1t and b > 0:
            # centered at j = b+1 must not reach below the kink row
            L1t[:, b + 1, b] = (L1[:, min(b + 2, n1t - 1), b]
                                - L1[:, b, b]) / (
                (min(b + 2, n1t - 1) - b) * ht)

    a0_tab = -beta * (L0t + L1d)
    a2_tab = -beta * (1.0 - L0)

    ix = _nearest_lookup(s)
    jx = _nearest_lookup(t)

    phi_s0, dphi_s0 = params.initial
    phi_0t, dphi_0t = params.inlet
    phi00 = float(phi_s0(0.0))

    def f0(s_, t_, u1, u2, u12):
        sh = np.broadcast_shapes(np.shape(s_), np.shape(t_))
        out = np.empty(sh + (3,))
        out[..., 0] = phi_s0(s_) + phi_0t(t_) - phi00
        out[..., 1] = dphi_s0(s_) + 0.0 * t_
        out[..., 2] = dphi_0t(t_) + 0.0 * s_
        return out

    def lam(sig, tmid, tau):
        # ell1(sig, tmid, tau) - ell1(sig, tau, tau)
        a = ix(sig)
        jm = jx(tmid)
        b = jx(tau)
        return L1[a, jm, b] - L1d[a, b]

    # f1(s,t,sig,...): component 3 integrand at (sig, t); u12 arg at (sig, t)
    def _f1_core(sig, t_, y):
        a = ix(sig)
        j = jx(t_)
        return a0_tab[a, j] * y[..., 0] + a2_tab[a, j] * y[..., 2]

    def f1(s_, t_, sig, y, u1, u2, u12):
        v = u12[..., 0]
        core = _f1_core(sig, t_, y)
        out = np.zeros(np.broadcast_shapes(np.shape(core), v.shape) + (3,))
        out[..., 2] = core / v
        return out

    def dy_f1(s_, t_, sig, y, u1, u2, u12):
        a = ix(sig)
        j = jx(t_)
        v = u12[..., 0]
        sh = np.broadcast_shapes(np.shape(a0_tab[a, j]), v.shape,
                                 y[..., 0].shape)
        out = np.zeros(sh + (3, 3))
        out[..., 2, 0] = a0_tab[a, j] / v
        out[..., 2, 2] = a2_tab[a, j] / v
        return out

    def du_f1_u12(s_, t_, sig, y, u1, u2, u12):
        v = u12[..., 0]
        return (-_f1_core(sig, t_, y) / v**2)[..., None, None] \
            * np.array([0.0, 0.0, 1.0])[:, None]

    # f2(s,t,tau,...): component 2 integrand at (s, tau) + double-kernel
    # factor lam(s, t, tau); u12 arg at (s, tau)
    def _f2_core(s_, t_, tau, y):
        a = ix(s_)
        b = jx(tau)
        return (a0_tab[a, b] + beta * lam(s_, t_, tau)) * y[..., 0] \
            + a2_tab[a, b] * y[..., 2]

    def f2(s_, t_, tau, y, u1, u2, u12):
        v = u12[..., 0]
        core = _f2_core(s_, t_, tau, y)
        out = np.zeros(np.broadcast_shapes(core.shape, v.shape) + (3,))
        out[..., 1] = core / v
        return out

    def dy_f2(s_, t_, tau, y, u1, u2, u12):
        a = ix(s_)
        b = jx(tau)
        v = u12[..., 0]
        c0 = (a0_tab[a, b] + beta * lam(s_, t_, tau)) / v
        c2 = a2_tab[a, b] / v
        sh = np.broadcast_shapes(c0.shape, y[..., 0].shape)
        out = np.zeros(sh + (3, 3))
        out[..., 1, 0] = c0
        out[..., 1, 2] = c2
        return out

    def du_f2_u12(s_, t_, tau, y, u1, u2, u12):
        v = u12[..., 0]
        return (-_f2_core(s_, t_, tau, y) / v**2)[..., None, None] \
            * np.array([0.0, 1.0, 0.0])[:, None]

    # f12(s,t,sig,tau,...): component 1 integrand + component 3 depth
    # kernel; u12 arg at (sig, tau)
    def _f12_cores(t_, sig, tau, y):
        a = ix(sig)
        b = jx(tau)
        j = jx(t_)
        c1 = (a0_tab[a, b] + beta * lam(sig, t_, tau)) * y[..., 0] \
            + a2_tab[a, b] * y[..., 2]
        c3 = beta * L1t[a, j, b] * y[..., 0]
        return c1, c3

    def f12(s_, t_, sig, tau, y, u1, u2, u12):
        v = u12[..., 0]
        c1, c3 = _f12_cores(t_, sig, tau, y)
        out = np.zeros(np.broadcast_shapes(c1.shape, c3.shape, v.shape)
                       + (3,))
        out[..., 0] = c1 / v
        out[..., 2] = c3 / v
        return out

    def dy_f12(s_, t_, sig, tau, y, u1, u2, u12):
        a = ix(sig)
        b = jx(tau)
        j = jx(t_)
        v = u12[..., 0]
        sh = np.broadcast_shapes(np.shape(a0_tab[a, b]),
                                 np.shape(L1t[a, j, b]), v.shape,
                                 y[..., 0].shape)
        out = np.zeros(sh + (3, 3))
        out[..., 0, 0] = (a0_tab[a, b] + beta * lam(sig, t_, tau)) / v
        out[..., 0, 2] = a2_tab[a, b] / v
        out[..., 2, 0] = beta * L1t[a, j, b] / v
        return out

    def du_f12_u12(s_, t_, sig, tau, y, u1, u2, u12):
        v = u12[..., 0]
        c1, c3 = _f12_cores(t_, sig, tau, y)
        sh = np.broadcast_shapes(c1.shape, c3.shape, v.shape)
        out = np.zeros(sh + (3, 1))
        out[..., 0, 0] = -c1 / v**2
        out[..., 2, 0] = -c3 / v**2
        return out

    phi0_tab = np.asarray(params.phi0_profile(s[:, None], t[None, :]),
                          dtype=float)
    mu = params.mu_reg

    def F12(s_, t_, y, u1, u2, u12):
        tgt = phi0_tab[ix(s_), jx(t_)]
        return (y[..., 0] - tgt) ** 2 + mu * u12[..., 0] ** 2

    def dy_F12(s_, t_, y, u1, u2, u12):
        tgt = phi0_tab[ix(s_), jx(t_)]
        out = np.zeros(y.shape)
        out[..., 0] = 2.0 * (y[..., 0] - tgt)
        return out

    def du_F12_u12(s_, t_, y, u1, u2, u12):
        return 2.0 * mu * u12

    # Lipschitz constants: sup over the lattice of the induced sup-norm
    # of the y-Jacobians at the smallest admissible velocity
    v_lo = params.v_box[0]
    Lam_full = L1 - L1d[:, None, :]  # lam over (sig_i, t_j, tau_b)
    Lf1 = float((np.abs(a0_tab) + np.abs(a2_tab)).max() / v_lo)
    Lf2 = float((np.abs(a0_tab[:, None, :] + beta * Lam_full)
                 + np.abs(a2_tab[:, None, :])).max() / v_lo)
    Lf12 = float(max(
        (np.abs(a0_tab[:, None, :] + beta * Lam_full)
         + np.abs(a2_tab[:, None, :])).max(),
        (beta * np.abs(L1t)).max(),
    ) / v_lo)

    flags = IndependenceFlags(
        f0_u1=True, f0_u2=True, f0_u12=True,
        f1_u1=True, f1_u2=True, f1_u12=False,
        f2_u1=True, f2_u2=True, f2_u12=False,
    )
    p = ProblemDef(
        n=3, p1=0, p2=0, p12=1,
        f0=f0,
        f1=f1, dy_f1=dy_f1, du_f1=UJac(u12=du_f1_u12),
        f2=f2, dy_f2=dy_f2, du_f2=UJac(u12=du_f2_u12),
        f12=f12, dy_f12=dy_f12, du_f12=UJac(u12=du_f12_u12),
        F12=F12, dy_F12=dy_F12, du_F12=UJac(u12=du_F12_u12),
        L1=Lf1, L2=Lf2, L12=Lf12,
        flags=flags, name="chromatography",
    )
    boxes = ControlBoxes.bounds(params.v_box[0], params.v_box[1], 0, 0, 1)
    u0 = ControlField.constant(g, boxes,
                               v12=(0.5 * (params.v_box[0]
                                           + params.v_box[1]),))
    return DemoInstance(p, u0, {
        "params": params, "ell0": L0, "ell1": L1, "ell1_t": L1t,
        "phi0": phi0_tab,
    })


# ------------------------------------------------------- registry


def _reg_manufactured(name):
    def make(g: Grid, seed: int = 0) -> DemoInstance:
        return make_manufactured(name, g)
    return make


REGISTRY: dict[str, Callable[..., DemoInstance]] = {
    "manufactured-linear": _reg_manufactured("manufactured-linear"),
    "exp-growth": _reg_manufactured("exp-growth"),
    "exp-2d": _reg_manufactured("exp-2d"),
    "lq-regularized": lambda g, seed=0: make_synthetic_lq(
        g, seed, "regularized"),
    "lq-inverse-crime": lambda g, seed=0: make_synthetic_lq(
        g, seed, "inverse-crime"),
    "lq-decoupled": lambda g, seed=0: make_synthetic_lq(g, seed, "decoupled"),
    "chromatography": lambda g, seed=0: make_chromatography(g),
}
