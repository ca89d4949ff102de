"""Linear two-variable Volterra machinery: kernel triples, composition,
Neumann-series resolvents, forward and adjoint linear solves.

A linear Goursat-Volterra operator is described by a kernel triple
K = (K1, K2, K12) acting on a grid field z as

    (K (*) z)(s,t) = int_0^s K1(s,t,sig) z(sig,t) dsig
                   + int_0^t K2(s,t,tau) z(s,tau) dtau
                   + int_0^s int_0^t K12(s,t,sig,tau) z(sig,tau) dtau dsig.

These operators are closed under composition; gv_compose returns the
triple M with M (*) z = L (*) (K (*) z) up to quadrature error. The
resolvent R = sum_k K^(x)k yields the solution of z = z0 + K (*) z as
z = z0 + R (*) z0, and the adjoint equation is solved either through
the same resolvent or by backward Picard iteration.

Discretization notes:

* every integral uses trapezoid weights on the uniform grid; kernel
  tensors store m-by-m blocks indexed by node triples or quadruples
  with exact zeros above the causal diagonal;
* the adjoint application uses the reflected upper weights of the
  grid module, making it the exact transpose of gv_apply under the
  trapezoid-weighted inner product (at rounding accuracy);
* each of the nine composition convolutions is discretized with plain
  trapezoid weights over its own subinterval, so composition identities
  hold at quadrature accuracy O(h^2), not at rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, NumericalError
from .grid import Grid, ScalarField2, inner_w, norm_sup, trap_weights

__all__ = [
    "KernelTriple",
    "Resolvent",
    "gv_apply",
    "gv_adjoint_apply",
    "gv_compose",
    "kernel_power_bound",
    "resolvent",
    "solve_linear",
    "solve_adjoint",
    "neumann_resolvent_1d",
    "weighted_inner",
]

weighted_inner = inner_w


def _as_blocks(arr, node_ndim, name):
    """Normalize a kernel tensor to (...nodes..., m, m) block form."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == node_ndim:  # scalar kernel, promote to 1x1 blocks
        a = a[..., None, None]
    if a.ndim != node_ndim + 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(
            f"{name} must have {node_ndim} node axes plus square blocks, "
            f"got shape {a.shape}"
        )
    return a


@dataclass
class KernelTriple:
    """Causal kernel triple (K1, K2, K12) of m-by-m blocks.

    Shapes: K1 is (Ns+1, Nt+1, Ns+1, m, m) indexed (i, j, a) for
    K1(s_i, t_j, sig_a); K2 is (Ns+1, Nt+1, Nt+1, m, m) indexed
    (i, j, b); K12 is (Ns+1, Nt+1, Ns+1, Nt+1, m, m) indexed
    (i, j, a, b). Entries above the causal diagonal (a > i or b > j)
    are forced to exact zero on construction. Scalar (blockless)
    arrays are promoted to m = 1.
    """

    K1: np.ndarray
    K2: np.ndarray
    K12: np.ndarray

    def __post_init__(self):
        self.K1 = _as_blocks(self.K1, 3, "K1")
        self.K2 = _as_blocks(self.K2, 3, "K2")
        self.K12 = _as_blocks(self.K12, 4, "K12")
        n1s, n1t = self.K1.shape[0], self.K1.shape[1]
        m = self.K1.shape[-1]
        if self.K1.shape != (n1s, n1t, n1s, m, m):
            raise ValueError(f"K1 shape {self.K1.shape} inconsistent")
        if self.K2.shape != (n1s, n1t, n1t, m, m):
            raise ValueError(f"K2 shape {self.K2.shape} inconsistent with K1")
        if self.K12.shape != (n1s, n1t, n1s, n1t, m, m):
            raise ValueError(f"K12 shape {self.K12.shape} inconsistent with K1")
        ms = _causal_mask(n1s)
        mt = _causal_mask(n1t)
        self.K1 = self.K1 * ms[:, None, :, None, None]
        self.K2 = self.K2 * mt[None, :, :, None, None]
        self.K12 = (
            self.K12
            * ms[:, None, :, None, None, None]
            * mt[None, :, None, :, None, None]
        )

    @property
    def m(self) -> int:
        return self.K1.shape[-1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.K1.shape[0], self.K1.shape[1]

    def sup_bound(self) -> float:
        """C = max over the three tensors of the entrywise sup."""
        return max(
            float(np.abs(self.K1).max()),
            float(np.abs(self.K2).max()),
            float(np.abs(self.K12).max()),
        )

    def add(self, other: "KernelTriple") -> "KernelTriple":
        return KernelTriple(self.K1 + other.K1, self.K2 + other.K2,
                            self.K12 + other.K12)

    def copy(self) -> "KernelTriple":
        return KernelTriple(self.K1.copy(), self.K2.copy(), self.K12.copy())

    @classmethod
    def zeros(cls, grid: Grid, m: int = 1) -> "KernelTriple":
        n1s, n1t = grid.shape
        return cls(
            np.zeros((n1s, n1t, n1s, m, m)),
            np.zeros((n1s, n1t, n1t, m, m)),
            np.zeros((n1s, n1t, n1s, n1t, m, m)),
        )

    @classmethod
    def constants(cls, grid: Grid, c1: float, c2: float, c12: float,
                  m: int = 1) -> "KernelTriple":
        """Constant kernels c * identity-block on the causal region."""
        n1s, n1t = grid.shape
        eye = np.eye(m)
        return cls(
            np.broadcast_to(c1 * eye, (n1s, n1t, n1s, m, m)).copy(),
            np.broadcast_to(c2 * eye, (n1s, n1t, n1t, m, m)).copy(),
            np.broadcast_to(c12 * eye, (n1s, n1t, n1s, n1t, m, m)).copy(),
        )


@dataclass
class Resolvent:
    """Truncated Neumann series sum_{k=1}^{truncation_k} K^(x)k.

    tail_bound holds the certified bounds on the dropped tail for the
    three components, from kernel_power_bound.
    """

    kernels: KernelTriple
    truncation_k: int
    tail_bound: np.ndarray


@lru_cache(maxsize=32)
def _causal_mask(n1: int) -> np.ndarray:
    return np.tri(n1)


@lru_cache(maxsize=32)
def _band_lower(n_steps: int, h: float) -> np.ndarray:
    """WB[a, i, u] = trapezoid weight of node u on [s_a, s_i]; zero
    when i <= a (empty or degenerate interval)."""
    WB = np.zeros((n_steps + 1, n_steps + 1, n_steps + 1))
    for a in range(n_steps + 1):
        for i in range(a + 1, n_steps + 1):
            WB[a, i, a : i + 1] = trap_weights(i - a, h)
    return WB


def _check_dims(K: KernelTriple, z: ScalarField2, g: Grid):
    if K.grid_shape != g.shape:
        raise ValueError(f"kernel grid shape {K.grid_shape} != {g.shape}")
    z.check_grid(g)
    if z.dim != K.m:
        raise ValueError(f"field dim {z.dim} != kernel block dim {K.m}")


def gv_apply(K: KernelTriple, z: ScalarField2, g: Grid) -> ScalarField2:
    """Forward application (K (*) z) with product trapezoid quadrature."""
    _check_dims(K, z, g)
    v = z.values
    out = np.zeros_like(v)
    if K.K1.any():
        out += np.einsum("ia,ijaqp,ajp->ijq", g.Ws, K.K1, v, optimize=True)
    if K.K2.any():
        out += np.einsum("jb,ijbqp,ibp->ijq", g.Wt, K.K2, v, optimize=True)
    if K.K12.any():
        out += np.einsum("ia,jb,ijabqp,abp->ijq", g.Ws, g.Wt, K.K12, v,
                         optimize=True)
    return ScalarField2(out)


def gv_adjoint_apply(zeta: ScalarField2, K: KernelTriple, g: Grid) -> ScalarField2:
    """Adjoint application on row-covector fields:

        out(s,t) = int_s^A zeta(sig,t) K1(sig,t,s) dsig
                 + int_t^B zeta(s,tau) K2(s,tau,t) dtau
                 + int_s^A int_t^B zeta(sig,tau) K12(sig,tau,s,t) dtau dsig

    discretized with the reflected upper weights, so that
    inner_w(zeta, gv_apply(K, z)) == inner_w(gv_adjoint_apply(zeta, K), z)
    at rounding accuracy.
    """
    _check_dims(K, zeta, g)
    v = zeta.values
    out = np.zeros_like(v)
    if K.K1.any():
        out += np.einsum("ia,ajp,ajipq->ijq", g.Wus, v, K.K1, optimize=True)
    if K.K2.any():
        out += np.einsum("jb,ibp,ibjpq->ijq", g.Wut, v, K.K2, optimize=True)
    if K.K12.any():
        out += np.einsum("ia,jb,abp,abijpq->ijq", g.Wus, g.Wut, v, K.K12,
                         optimize=True)
    return ScalarField2(out)


def _compose_1212(L12: np.ndarray, K12: np.ndarray, hs: float, ht: float) -> np.ndarray:
    """Band-trapezoid double convolution of two 12-kernels.

    Evaluates M[i,j,a,b] = sum_{u,v} WBs[a,i,u] WBt[b,j,v] L12[i,j,u,v] @ K12[u,v,a,b]
    by splitting each band weight into its full-step part minus half-step
    endpoint corrections: WB[a,i,u] = h*[a<=u<=i] - h/2*(d_{u,a}+d_{u,i})*[a<=i].
    The full-step part collapses to one matrix product over flattened
    (node, node, block) axes because both kernels are causal; the eight
    correction terms are lower-order einsums. Identical to the direct
    band contraction up to rounding.
    """
    n1s, n1t, m = L12.shape[0], L12.shape[1], L12.shape[4]
    Lm = L12.transpose(0, 1, 4, 2, 3, 5).reshape(n1s * n1t * m, n1s * n1t * m)
    Km = K12.transpose(0, 1, 4, 2, 3, 5).reshape(n1s * n1t * m, n1s * n1t * m)
    M = (hs * ht) * (Lm @ Km)
    M = M.reshape(n1s, n1t, m, n1s, n1t, m).transpose(0, 1, 3, 4, 2, 5)
    hh = hs * ht
    M -= 0.5 * hh * np.einsum("ijavqp,avabpr->ijabqr", L12, K12, optimize=True)
    M -= 0.5 * hh * np.einsum("ijivqp,ivabpr->ijabqr", L12, K12, optimize=True)
    M -= 0.5 * hh * np.einsum("ijubqp,ubabpr->ijabqr", L12, K12, optimize=True)
    M -= 0.5 * hh * np.einsum("ijujqp,ujabpr->ijabqr", L12, K12, optimize=True)
    M += 0.25 * hh * np.einsum("ijabqp,ababpr->ijabqr", L12, K12, optimize=True)
    M += 0.25 * hh * np.einsum("ijajqp,ajabpr->ijabqr", L12, K12, optimize=True)
    M += 0.25 * hh * np.einsum("ijibqp,ibabpr->ijabqr", L12, K12, optimize=True)
    M += 0.25 * hh * np.einsum("ijijqp,ijabpr->ijabqr", L12, K12, optimize=True)
    ms = _causal_mask(n1s)
    mt = _causal_mask(n1t)
    M *= ms[:, None, :, None, None, None]
    M *= mt[None, :, None, :, None, None]
    return M


def gv_compose(L: KernelTriple, K: KernelTriple, g: Grid) -> KernelTriple:
    """Kernel triple M of the composed operator: M (*) z = L (*) (K (*) z)
    up to quadrature error.

    M1 and M2 are single-variable convolutions of like kernels; M12
    collects the seven cross terms. Two of those are integral-free
    pointwise block products (the 1,2 and 2,1 pairings); the rest are
    band-trapezoid convolutions over [sig, s] or [tau, t] or both.
    """
    if L.grid_shape != K.grid_shape or L.m != K.m:
        raise ValueError("kernel triples must share grid shape and block dim")
    if L.grid_shape != g.shape:
        raise ValueError(f"kernel grid shape {L.grid_shape} != {g.shape}")
    n1s, n1t = g.shape
    m = L.m
    WBs = _band_lower(g.Ns, g.hs)
    WBt = _band_lower(g.Nt, g.ht)
    l1, l2, l12 = L.K1.any(), L.K2.any(), L.K12.any()
    k1, k2, k12 = K.K1.any(), K.K2.any(), K.K12.any()

    M1 = np.zeros((n1s, n1t, n1s, m, m))
    M2 = np.zeros((n1s, n1t, n1t, m, m))
    M12 = np.zeros((n1s, n1t, n1s, n1t, m, m))

    if l1 and k1:
        M1 = np.einsum("aiu,ijuqp,ujapr->ijaqr", WBs, L.K1, K.K1, optimize=True)
    if l2 and k2:
        M2 = np.einsum("bjv,ijvqp,ivbpr->ijbqr", WBt, L.K2, K.K2, optimize=True)
    if l1 and k2:  # pointwise product: L1(s,t,sig) K2(sig,t,tau)
        M12 += np.einsum("ijaqp,ajbpr->ijabqr", L.K1, K.K2, optimize=True)
    if l2 and k1:  # pointwise product: L2(s,t,tau) K1(s,tau,sig)
        M12 += np.einsum("ijbqp,ibapr->ijabqr", L.K2, K.K1, optimize=True)
    if l1 and k12:
        M12 += np.einsum("aiu,ijuqp,ujabpr->ijabqr", WBs, L.K1, K.K12,
                         optimize=True)
    if l2 and k12:
        M12 += np.einsum("bjv,ijvqp,ivabpr->ijabqr", WBt, L.K2, K.K12,
                         optimize=True)
    if l12 and k1:
        M12 += np.einsum("aiu,ijubqp,ubapr->ijabqr", WBs, L.K12, K.K1,
                         optimize=True)
    if l12 and k2:
        M12 += np.einsum("bjv,ijavqp,avbpr->ijabqr", WBt, L.K12, K.K2,
                         optimize=True)
    if l12 and k12:
        M12 += _compose_1212(L.K12, K.K12, g.hs, g.ht)
    return KernelTriple(M1, M2, M12)


def kernel_power_bound(C: float, k: int, A: float, B: float):
    """Sup-norm bounds for the three parts of the k-th kernel power.

    bound1 = C^k A^(k-1)/(k-1)! and bound2 likewise with B; bound12 is
    C for k = 1 and (3C)^k Q^(2(k-1)) / (m_k! (k-2-m_k)!) with
    Q = max(A, B, 1) and m_k = floor(k/2 - 1) for k >= 2.
    """
    if k < 1:
        raise ValueError(f"power must be >= 1, got {k}")
    if C < 0:
        raise ValueError(f"kernel bound must be >= 0, got {C}")
    if A <= 0 or B <= 0:
        raise ValueError(f"extents must be positive, got A={A}, B={B}")
    if C == 0.0:
        return (0.0, 0.0, 0.0)
    ln_n1 = k * math.log(C) + (k - 1) * math.log(A)
    ln_n2 = k * math.log(C) + (k - 1) * math.log(B)
    if k <= 150 and max(ln_n1, ln_n2) < 600.0:
        fact = math.factorial(k - 1)
        b1 = C**k * A ** (k - 1) / fact
        b2 = C**k * B ** (k - 1) / fact
    else:  # log form; avoids float overflow of the raw powers
        b1 = math.exp(ln_n1 - math.lgamma(k))
        b2 = math.exp(ln_n2 - math.lgamma(k))
    if k == 1:
        b12 = C
    else:
        Q = max(A, B, 1.0)
        mk = (k - 2) // 2
        ln_n12 = k * math.log(3 * C) + 2 * (k - 1) * math.log(Q)
        if k <= 150 and ln_n12 < 600.0:
            b12 = (3 * C) ** k * Q ** (2 * (k - 1)) / (
                math.factorial(mk) * math.factorial(k - 2 - mk)
            )
        else:
            b12 = math.exp(
                ln_n12 - math.lgamma(mk + 1) - math.lgamma(k - 1 - mk)
            )
    return (b1, b2, b12)


def _power_tail(C: float, A: float, B: float, k: int) -> np.ndarray:
    """Rigorous componentwise bound on sum_{j>k} kernel_power_bound(C,j,A,B).

    Terms are summed until consecutive bounds decay by at least half;
    the remainder is then dominated by a geometric series (the decay
    ratios of all three bound families are eventually monotone).
    """
    if C == 0.0:
        return np.zeros(3)
    total = np.zeros(3)
    b = np.array(kernel_power_bound(C, k + 1, A, B))
    j = k + 1
    while True:
        nxt = np.array(kernel_power_bound(C, j + 1, A, B))
        if np.all(nxt <= 0.5 * b):
            total += b + 2.0 * nxt
            return total
        total += b
        b = nxt
        j += 1
        if j > 200000:  # pragma: no cover - factorial decay always wins
            raise ConvergenceError("power-bound tail failed to close", last_delta=b)


def resolvent(K: KernelTriple, g: Grid, tol: float) -> Resolvent:
    """Neumann-series resolvent R = sum_{k=1}^{kmax} K^(x)k.

    Powers are accumulated left-to-right (P <- K (x) P) and truncated at
    the first kmax whose analytic tail bound is below tol in every
    component. A zero kernel returns a zero resolvent at k = 1.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    C = K.sup_bound()
    if C == 0.0:
        return Resolvent(KernelTriple.zeros(g, K.m), 1, np.zeros(3))
    P = K.copy()
    R = K.copy()
    k = 1
    while True:
        tail = _power_tail(C, g.A, g.B, k)
        if np.all(tail < tol):
            return Resolvent(R, k, tail)
        P = gv_compose(K, P, g)
        R = R.add(P)
        k += 1
        if k > 500:  # pragma: no cover - tail always closes for finite C
            raise ConvergenceError(
                "resolvent series exceeded 500 terms without certifying "
                f"tail < {tol}", iterations=k,
            )


def solve_linear(K: KernelTriple, z0: ScalarField2, g: Grid, tol: float) -> ScalarField2:
    """Solution of z = z0 + K (*) z through the resolvent:
    z = z0 + R (*) z0."""
    _check_dims(K, z0, g)
    R = resolvent(K, g, tol)
    applied = gv_apply(R.kernels, z0, g)
    return ScalarField2(z0.values + applied.values)


def solve_adjoint(K: KernelTriple, zeta0: ScalarField2, g: Grid, tol: float,
                  method: str = "resolvent", max_iters: int = 400) -> ScalarField2:
    """Solution of the adjoint equation zeta = zeta0 + zeta (~*) K.

    method="resolvent" evaluates zeta0 + zeta0 (~*) R with the Neumann
    resolvent of K; method="picard" iterates the equation backward
    directly. The two agree within series truncation plus quadrature
    error and are used to cross-check each other.
    """
    _check_dims(K, zeta0, g)
    if method == "resolvent":
        R = resolvent(K, g, tol)
        applied = gv_adjoint_apply(zeta0, R.kernels, g)
        return ScalarField2(zeta0.values + applied.values)
    if method != "picard":
        raise ValueError(f"unknown method {method!r}")
    zeta = zeta0.copy()
    for _ in range(max_iters):
        znew = ScalarField2(
            zeta0.values + gv_adjoint_apply(zeta, K, g).values
        )
        if not np.isfinite(znew.values).all():
            bad = np.argwhere(~np.isfinite(znew.values).all(axis=2))[0]
            raise NumericalError(
                f"non-finite adjoint iterate at node ({bad[0]}, {bad[1]})",
                node=(int(bad[0]), int(bad[1])),
            )
        delta = norm_sup(znew.values - zeta.values)
        zeta = znew
        if delta <= tol:
            return zeta
    raise ConvergenceError(
        f"backward Picard did not reach {tol} in {max_iters} iterations",
        last_delta=delta, iterations=max_iters,
    )


def neumann_resolvent_1d(K: np.ndarray, h: float, tol: float,
                         max_terms: int = 400) -> np.ndarray:
    """Resolvent of a scalar one-variable Volterra kernel on a uniform
    grid: R = sum_{m>=1} K^(m) with

        K^(m+1)(t, tau) = int_tau^t K(t, x) K^(m)(x, tau) dx

    discretized with band trapezoid weights. K is (N+1, N+1), causal
    (zero above the diagonal). Truncated when the analytic tail bound
    C^j ext^(j-1)/(j-1)! certifies the remainder below tol.
    """
    K = np.asarray(K, dtype=float)
    n1 = K.shape[0]
    if K.shape != (n1, n1):
        raise ValueError(f"kernel must be square, got {K.shape}")
    K = K * _causal_mask(n1)
    C = float(np.abs(K).max())
    if C == 0.0:
        return np.zeros_like(K)
    ext = (n1 - 1) * h
    WB = _band_lower(n1 - 1, h)
    P = K.copy()
    R = K.copy()
    k = 1
    while True:
        # tail of sum_{j>k} C^j ext^(j-1)/(j-1)!: geometric closure
        tail = 0.0
        b = C ** (k + 1) * ext**k / math.factorial(k)
        j = k + 1
        while True:
            ratio = C * ext / j
            if ratio <= 0.5:
                tail += b / (1.0 - ratio)
                break
            tail += b
            b *= ratio
            j += 1
        if tail < tol:
            return R
        P = np.einsum("aiu,iu,ua->ia", WB, K, P, optimize=True)
        R += P
        k += 1
        if k > max_terms:  # pragma: no cover
            raise ConvergenceError(
                f"1-D Neumann series exceeded {max_terms} terms", iterations=k
            )
