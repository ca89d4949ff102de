"""Constant-coefficient two-variable Gronwall machinery.

For zeta(s,t) <= A0 + B1 int_0^s zeta + B2 int_0^t zeta
+ B12 int int zeta, the extremal equality solution is the double power
series zeta = A0 sum_{k,l} C[k,l] s^k t^l whose coefficients satisfy

    C[k,0] = B1^k / k!,   C[0,l] = B2^l / l!,
    C[k+1,l+1] = B1/(k+1) C[k,l+1] + B2/(l+1) C[k+1,l]
               + B12/((k+1)(l+1)) C[k,l].

Every coefficient obeys |C[k,l]| <= (3B)^{k+l} / (k! l!) with
B = max(|B1|, |B2|, sqrt(|B12|/3)), which yields a certified truncation
tail for gronwall_eval and the closed-form comparison value
gronwall_bound = A0 exp(3 B ds dt). The latter dominates the series
only when 1/ds + 1/dt <= 1 (e.g. both spans >= 2); use gronwall_eval
with its certified tail when in doubt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TruncationError
from .grid import Grid, ScalarField2
from .gvlinalg import KernelTriple, solve_linear

__all__ = [
    "GronwallCoeffs",
    "gronwall_coeffs",
    "gronwall_eval",
    "gronwall_bound",
    "check_comparison",
]


@dataclass
class GronwallCoeffs:
    """C (kmax+1, lmax+1) with zeta(ds,dt) ~ A0 sum C[k,l] ds^k dt^l."""

    C: np.ndarray
    A0: float
    B1: float
    B2: float
    B12: float

    @property
    def kmax(self) -> int:
        return self.C.shape[0] - 1

    @property
    def lmax(self) -> int:
        return self.C.shape[1] - 1


def gronwall_coeffs(A0: float, B1: float, B2: float, B12: float,
                    kmax: int, lmax: int) -> GronwallCoeffs:
    """Coefficient table of the extremal series. B12 < 0 is allowed
    (the recursion and the tail bound hold with |B12|)."""
    if kmax < 0 or lmax < 0:
        raise ValueError("kmax and lmax must be nonnegative")
    if A0 < 0:
        raise ValueError("A0 must be nonnegative")
    C = np.zeros((kmax + 1, lmax + 1))
    C[0, 0] = 1.0
    for k in range(1, kmax + 1):
        C[k, 0] = C[k - 1, 0] * B1 / k
    for l in range(1, lmax + 1):
        C[0, l] = C[0, l - 1] * B2 / l
    for k in range(1, kmax + 1):
        for l in range(1, lmax + 1):
            C[k, l] = (B1 / k) * C[k - 1, l] + (B2 / l) * C[k, l - 1] \
                + (B12 / (k * l)) * C[k - 1, l - 1]
    return GronwallCoeffs(C, float(A0), float(B1), float(B2), float(B12))


def _exp_tail(x: float, K: int) -> float:
    """Upper bound on sum_{m > K} x^m / m! for x >= 0."""
    if x == 0.0:
        return 0.0
    if x >= K + 2:
        return math.inf
    head = math.exp((K + 1) * math.log(x) - math.lgamma(K + 2))
    return head / (1.0 - x / (K + 2))


def gronwall_eval(coeffs: GronwallCoeffs, ds: float, dt: float) -> float:
    """Series value at spans (ds, dt) with a certified truncation tail;
    raises TruncationError when the tail is not negligible
    (>= 1e-12 * max(|value|, A0))."""
    if ds < 0 or dt < 0:
        raise ValueError("spans must be nonnegative")
    C = coeffs.C
    kmax, lmax = coeffs.kmax, coeffs.lmax
    # Horner in dt inside, then in ds
    row_vals = np.empty(kmax + 1)
    for k in range(kmax + 1):
        acc = 0.0
        for l in range(lmax, -1, -1):
            acc = acc * dt + C[k, l]
        row_vals[k] = acc
    val = 0.0
    for k in range(kmax, -1, -1):
        val = val * ds + row_vals[k]
    val *= coeffs.A0

    B = max(abs(coeffs.B1), abs(coeffs.B2), math.sqrt(abs(coeffs.B12) / 3.0))
    xs, xt = 3.0 * B * ds, 3.0 * B * dt
    tail = coeffs.A0 * (_exp_tail(xs, kmax) * math.exp(xt)
                        + math.exp(xs) * _exp_tail(xt, lmax))
    if tail >= 1e-12 * max(abs(val), abs(coeffs.A0)):
        raise TruncationError(
            f"series tail {tail:.3e} not negligible against value "
            f"{val:.6e}; increase kmax/lmax", tail_bound=tail)
    return float(val)


def gronwall_bound(A0: float, B1: float, B2: float, B12: float,
                   ds: float, dt: float) -> float:
    """Closed-form comparison value A0 exp(3 B ds dt),
    B = max(|B1|, |B2|, sqrt(|B12|/3)). Dominates the series value only
    when 1/ds + 1/dt <= 1; see the module docstring."""
    if ds < 0 or dt < 0:
        raise ValueError("spans must be nonnegative")
    if A0 < 0:
        raise ValueError("A0 must be nonnegative")
    B = max(abs(B1), abs(B2), math.sqrt(abs(B12) / 3.0))
    return float(A0 * math.exp(3.0 * B * ds * dt))


def check_comparison(z_forcing: ScalarField2, phi: KernelTriple, g: Grid,
                     tol: float = 1e-10) -> tuple[bool, float]:
    """Numerical comparison check: solve z = z_forcing + phi (*) z and
    zeta = c + phi (*) zeta with the constant majorant forcing
    c = per-component sup of z_forcing; returns (z <= zeta everywhere
    up to rounding, worst margin min(zeta - z)).

    phi must be a nonnegative kernel triple and z_forcing nonnegative;
    the discrete resolvent of a nonnegative triple is entrywise
    nonnegative, so the margin is nonnegative up to rounding.
    """
    zf = z_forcing.values
    if zf.min() < 0:
        raise ValueError("z_forcing must be nonnegative")
    if phi.K1.min() < 0 or phi.K2.min() < 0 or phi.K12.min() < 0:
        raise ValueError("kernel triple must be nonnegative")
    z = solve_linear(phi, z_forcing, g, tol)
    csup = zf.max(axis=(0, 1))
    cf = ScalarField2(np.broadcast_to(csup, zf.shape).copy())
    zeta = solve_linear(phi, cf, g, tol)
    margin = float((zeta.values - z.values).min())
    scale = max(1.0, float(np.abs(zeta.values).max()))
    return margin >= -1e-12 * scale, margin
