"""Problem container for two-variable Volterra optimal control.

A problem instance bundles the dynamics kernels (f0, f1, f2, f12), the
cost integrands (F0, F1, F2, F12), their derivatives, Lipschitz
constants, and control-independence flags. State y(s,t) is an n-vector;
controls are u1(s), u2(t), u12(s,t) with block dimensions p1, p2, p12.
Gradients of scalar functions are row covectors.

Callable contract (vectorized evaluation):

* coordinate arguments arrive as broadcastable float arrays (scalars
  during validation, lattice-shaped arrays during assembly);
* state/control arguments carry a trailing component axis aligned with
  the same lattice (e.g. y of shape (..., n), u12 of shape (..., p12));
* the return value must broadcast to lattice_shape + tail, where tail
  is (n,) for dynamics, () for cost integrands, (n, n) for y-Jacobians
  with [r, c] = d f_r / d y_c, (n, p) for control Jacobians, and (n,)
  or (p,) for cost gradients;
* as a convenience, problems with n = 1 may return bare lattice-shaped
  arrays from n-valued mappings (a trailing singleton axis is added).

Argument orders and evaluation points:

    f0(s, t, u1, u2, u12)                    u1 at s, u2 at t, u12 at (s,t)
    f1(s, t, sig, y, u1, u2, u12)            y at (sig,t), u1 at sig, u2 at t, u12 at (sig,t)
    f2(s, t, tau, y, u1, u2, u12)            y at (s,tau), u1 at s, u2 at tau, u12 at (s,tau)
    f12(s, t, sig, tau, y, u1, u2, u12)      y at (sig,tau), u1 at sig, u2 at tau, u12 at (sig,tau)
    F0(y, u1, u2, u12)                       y at (A,B), endpoint controls
    F1(s, y, u1, u2, u12)                    y at (s,B), u1 at s, u2 at B, u12 at (s,B)
    F2(t, y, u1, u2, u12)                    y at (A,t), u1 at A, u2 at t, u12 at (A,t)
    F12(s, t, y, u1, u2, u12)                everything at (s,t)

Any mapping may be None, meaning identically zero (and, for derivative
slots, "this derivative is identically zero").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NumericalError
from .grid import Grid

__all__ = [
    "UJac",
    "Box",
    "ControlBoxes",
    "ControlField",
    "IndependenceFlags",
    "ProblemDef",
    "ValidationReport",
    "validate_problem",
    "eval_map",
]


class UJac(NamedTuple):
    """Per-control-block derivative callables; None means zero."""

    u1: Optional[Callable] = None
    u2: Optional[Callable] = None
    u12: Optional[Callable] = None


@dataclass(frozen=True)
class Box:
    """Componentwise bounds lo <= x <= hi; entries may be +-inf."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"box bounds must be 1-D and matching, got "
                             f"{lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @classmethod
    def bounds(cls, lo: float, hi: float, p: int) -> "Box":
        return cls(np.full(p, float(lo)), np.full(p, float(hi)))

    @classmethod
    def unbounded(cls, p: int) -> "Box":
        return cls.bounds(-np.inf, np.inf, p)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def contains(self, x: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack))

    def sample(self, rng: np.random.Generator, lead_shape=()) -> np.ndarray:
        """Uniform samples; infinite sides fall back to a unit-width
        window anchored at the finite bound (or [-1, 1])."""
        lo = np.where(np.isfinite(self.lo), self.lo,
                      np.where(np.isfinite(self.hi), self.hi - 2.0, -1.0))
        hi = np.where(np.isfinite(self.hi), self.hi, lo + 2.0)
        return rng.uniform(lo, hi, lead_shape + (self.dim,))


@dataclass(frozen=True)
class ControlBoxes:
    u1: Box
    u2: Box
    u12: Box

    @classmethod
    def bounds(cls, lo: float, hi: float, p1: int, p2: int, p12: int):
        return cls(Box.bounds(lo, hi, p1), Box.bounds(lo, hi, p2),
                   Box.bounds(lo, hi, p12))


@dataclass
class ControlField:
    """Node samples of the three control blocks plus their boxes.

    u1 has shape (Ns+1, p1), u2 (Nt+1, p2), u12 (Ns+1, Nt+1, p12). The
    endpoint controls u1(A), u2(B), u12(s,B), u12(A,t), u12(A,B) are
    the corresponding edge samples. Samples must lie inside the boxes.
    """

    u1: np.ndarray
    u2: np.ndarray
    u12: np.ndarray
    boxes: ControlBoxes

    def __post_init__(self):
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u2 = np.asarray(self.u2, dtype=float)
        self.u12 = np.asarray(self.u12, dtype=float)
        if self.u1.ndim != 2 or self.u2.ndim != 2 or self.u12.ndim != 3:
            raise ValueError(
                f"control shapes must be (Ns+1,p1), (Nt+1,p2), "
                f"(Ns+1,Nt+1,p12); got {self.u1.shape}, {self.u2.shape}, "
                f"{self.u12.shape}"
            )
        if self.u1.shape[1] != self.boxes.u1.dim:
            raise ValueError("u1 block dim does not match its box")
        if self.u2.shape[1] != self.boxes.u2.dim:
            raise ValueError("u2 block dim does not match its box")
        if self.u12.shape[2] != self.boxes.u12.dim:
            raise ValueError("u12 block dim does not match its box")
        if self.u12.shape[0] != self.u1.shape[0] or self.u12.shape[1] != self.u2.shape[0]:
            raise ValueError("u12 lattice does not match u1/u2 lengths")
        for name, arr, box in (("u1", self.u1, self.boxes.u1),
                               ("u2", self.u2, self.boxes.u2),
                               ("u12", self.u12, self.boxes.u12)):
            if arr.size and not box.contains(arr):
                raise ValueError(f"{name} has samples outside its box")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.u12.shape[0], self.u12.shape[1]

    def copy(self) -> "ControlField":
        return ControlField(self.u1.copy(), self.u2.copy(), self.u12.copy(),
                            self.boxes)

    def check_grid(self, g: Grid) -> None:
        if self.grid_shape != g.shape:
            raise ValueError(
                f"control lattice {self.grid_shape} does not match grid {g.shape}"
            )

    @classmethod
    def constant(cls, g: Grid, boxes: ControlBoxes, v1=(), v2=(), v12=()):
        n1s, n1t = g.shape
        u1 = np.broadcast_to(np.asarray(v1, float), (n1s, boxes.u1.dim)).copy()
        u2 = np.broadcast_to(np.asarray(v2, float), (n1t, boxes.u2.dim)).copy()
        u12 = np.broadcast_to(np.asarray(v12, float),
                              (n1s, n1t, boxes.u12.dim)).copy()
        return cls(u1, u2, u12, boxes)


@dataclass(frozen=True)
class IndependenceFlags:
    """True marks a dynamics term as independent of a control block.

    Used to decide which pointwise extremum claims apply; leaving a
    flag False only disables a check, never enables a wrong one.
    """

    f0_u1: bool = False
    f0_u2: bool = False
    f0_u12: bool = False
    f1_u1: bool = False
    f1_u2: bool = False
    f1_u12: bool = False
    f2_u1: bool = False
    f2_u2: bool = False
    f2_u12: bool = False

    def independent(self, f_name: str, block: str) -> bool:
        return bool(getattr(self, f"{f_name}_{block}"))


@dataclass
class ProblemDef:
    """Dynamics, cost, derivatives, constants, and flags for one problem."""

    n: int
    p1: int
    p2: int
    p12: int
    f0: Optional[Callable] = None
    f1: Optional[Callable] = None
    f2: Optional[Callable] = None
    f12: Optional[Callable] = None
    dy_f1: Optional[Callable] = None
    dy_f2: Optional[Callable] = None
    dy_f12: Optional[Callable] = None
    du_f0: UJac = field(default_factory=UJac)
    du_f1: UJac = field(default_factory=UJac)
    du_f2: UJac = field(default_factory=UJac)
    du_f12: UJac = field(default_factory=UJac)
    F0: Optional[Callable] = None
    F1: Optional[Callable] = None
    F2: Optional[Callable] = None
    F12: Optional[Callable] = None
    dy_F0: Optional[Callable] = None
    dy_F1: Optional[Callable] = None
    dy_F2: Optional[Callable] = None
    dy_F12: Optional[Callable] = None
    du_F0: UJac = field(default_factory=UJac)
    du_F1: UJac = field(default_factory=UJac)
    du_F2: UJac = field(default_factory=UJac)
    du_F12: UJac = field(default_factory=UJac)
    L1: float = 0.0
    L2: float = 0.0
    L12: float = 0.0
    flags: IndependenceFlags = field(default_factory=IndependenceFlags)
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"state dimension must be >= 1, got {self.n}")
        if min(self.p1, self.p2, self.p12) < 0:
            raise ValueError("control dimensions must be >= 0")
        if min(self.L1, self.L2, self.L12) < 0:
            raise ValueError("Lipschitz constants must be >= 0")

    @property
    def pdims(self) -> dict[str, int]:
        return {"u1": self.p1, "u2": self.p2, "u12": self.p12}


# ------------------------------------------------------------- evaluation


def eval_map(fn, args: tuple, lshape: tuple, tail: tuple, name: str) -> np.ndarray:
    """Call fn(*args) and normalize the result to lshape + tail.

    None stands for the zero mapping. Evaluation exceptions are
    re-raised naming the mapping. Finiteness is the caller's concern
    (the forward solver checks its iterates nodewise).
    """
    target = lshape + tail
    if fn is None:
        return np.zeros(target)
    try:
        out = np.asarray(fn(*args), dtype=float)
    except Exception as exc:
        raise NumericalError(f"evaluation of {name} failed: {exc}") from exc
    if out.ndim == len(lshape) and out.shape == lshape and all(d == 1 for d in tail):
        out = out.reshape(lshape + tail)
    try:
        out = np.broadcast_to(out, target)
    except ValueError as exc:
        raise NumericalError(
            f"{name} returned shape {out.shape}, not broadcastable to {target}"
        ) from exc
    # ascontiguousarray promotes 0-d to 1-d; reshape restores the contract
    return np.ascontiguousarray(out).reshape(target)


def u_args_f0(u: ControlField):
    """(u1, u2, u12) arrays broadcast-ready for the (s, t) lattice."""
    return (u.u1[:, None, :], u.u2[None, :, :], u.u12)


def u_args_f1(u: ControlField):
    """For the (s_i, t_j, sig_a) lattice: u1 at sig, u2 at t, u12 at (sig, t)."""
    return (
        u.u1[None, None, :, :],
        u.u2[None, :, None, :],
        u.u12.transpose(1, 0, 2)[None, :, :, :],
    )


def u_args_f2(u: ControlField):
    """For the (s_i, t_j, tau_b) lattice: u1 at s, u2 at tau, u12 at (s, tau)."""
    return (
        u.u1[:, None, None, :],
        u.u2[None, None, :, :],
        u.u12[:, None, :, :],
    )


def u_args_f12(u: ControlField):
    """For the (s_i, t_j, sig_a, tau_b) lattice: blocks at (sig, tau)."""
    return (
        u.u1[None, None, :, None, :],
        u.u2[None, None, None, :, :],
        u.u12[None, None, :, :, :],
    )


def eval_f0(p: ProblemDef, u: ControlField, g: Grid) -> np.ndarray:
    s = g.s_nodes[:, None]
    t = g.t_nodes[None, :]
    return eval_map(p.f0, (s, t, *u_args_f0(u)), g.shape, (p.n,), "f0")


def _f1_args(u: ControlField, y: np.ndarray, g: Grid):
    s = g.s_nodes[:, None, None]
    t = g.t_nodes[None, :, None]
    sig = g.s_nodes[None, None, :]
    y_at = y.transpose(1, 0, 2)[None, :, :, :]  # y(sig_a, t_j)
    return (s, t, sig, y_at, *u_args_f1(u))


def _f2_args(u: ControlField, y: np.ndarray, g: Grid):
    s = g.s_nodes[:, None, None]
    t = g.t_nodes[None, :, None]
    tau = g.t_nodes[None, None, :]
    y_at = y[:, None, :, :]  # y(s_i, tau_b)
    return (s, t, tau, y_at, *u_args_f2(u))


def _f12_args(u: ControlField, y: np.ndarray, g: Grid):
    s = g.s_nodes[:, None, None, None]
    t = g.t_nodes[None, :, None, None]
    sig = g.s_nodes[None, None, :, None]
    tau = g.t_nodes[None, None, None, :]
    y_at = y[None, None, :, :, :]  # y(sig_a, tau_b)
    return (s, t, sig, tau, y_at, *u_args_f12(u))


def eval_f1(p, y: np.ndarray, u: ControlField, g: Grid) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.f1, _f1_args(u, y, g), (n1s, n1t, n1s), (p.n,), "f1")


def eval_f2(p, y: np.ndarray, u: ControlField, g: Grid) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.f2, _f2_args(u, y, g), (n1s, n1t, n1t), (p.n,), "f2")


def eval_f12(p, y: np.ndarray, u: ControlField, g: Grid) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.f12, _f12_args(u, y, g), (n1s, n1t, n1s, n1t), (p.n,), "f12")


def eval_dy_f1(p, y, u, g) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.dy_f1, _f1_args(u, y, g), (n1s, n1t, n1s), (p.n, p.n), "dy_f1")


def eval_dy_f2(p, y, u, g) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.dy_f2, _f2_args(u, y, g), (n1s, n1t, n1t), (p.n, p.n), "dy_f2")


def eval_dy_f12(p, y, u, g) -> np.ndarray:
    n1s, n1t = g.shape
    return eval_map(p.dy_f12, _f12_args(u, y, g), (n1s, n1t, n1s, n1t),
                    (p.n, p.n), "dy_f12")


# Cost integrand lattices: F1 over s (y at (s,B)), F2 over t (y at (A,t)),
# F12 over (s,t). Endpoint control samples stand in for the limits.


def _F0_args(u: ControlField, y: np.ndarray):
    return (y[-1, -1], u.u1[-1], u.u2[-1], u.u12[-1, -1])


def _F1_args(u: ControlField, y: np.ndarray, g: Grid):
    return (g.s_nodes, y[:, -1, :], u.u1, u.u2[None, -1], u.u12[:, -1, :])


def _F2_args(u: ControlField, y: np.ndarray, g: Grid):
    return (g.t_nodes, y[-1, :, :], u.u1[None, -1], u.u2, u.u12[-1, :, :])


def _F12_args(u: ControlField, y: np.ndarray, g: Grid):
    return (g.s_nodes[:, None], g.t_nodes[None, :], y,
            u.u1[:, None, :], u.u2[None, :, :], u.u12)


def eval_F0(p, y, u, g) -> float:
    return float(eval_map(p.F0, _F0_args(u, y), (), (), "F0"))


def eval_F1(p, y, u, g) -> np.ndarray:
    return eval_map(p.F1, _F1_args(u, y, g), (g.Ns + 1,), (), "F1")


def eval_F2(p, y, u, g) -> np.ndarray:
    return eval_map(p.F2, _F2_args(u, y, g), (g.Nt + 1,), (), "F2")


def eval_F12(p, y, u, g) -> np.ndarray:
    return eval_map(p.F12, _F12_args(u, y, g), g.shape, (), "F12")


def eval_dy_F0(p, y, u, g) -> np.ndarray:
    return eval_map(p.dy_F0, _F0_args(u, y), (), (p.n,), "dy_F0")


def eval_dy_F1(p, y, u, g) -> np.ndarray:
    return eval_map(p.dy_F1, _F1_args(u, y, g), (g.Ns + 1,), (p.n,), "dy_F1")


def eval_dy_F2(p, y, u, g) -> np.ndarray:
    return eval_map(p.dy_F2, _F2_args(u, y, g), (g.Nt + 1,), (p.n,), "dy_F2")


def eval_dy_F12(p, y, u, g) -> np.ndarray:
    return eval_map(p.dy_F12, _F12_args(u, y, g), g.shape, (p.n,), "dy_F12")


# ------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    lipschitz_observed: dict[str, float]
    lipschitz_declared: dict[str, float]
    lipschitz_violations: list[str]
    jacobian_errors: dict[str, float]
    trials: int
    seed: int

    @property
    def max_jacobian_error(self) -> float:
        return max(self.jacobian_errors.values(), default=0.0)

    def ok(self, jac_tol: float = 1e-6) -> bool:
        return not self.lipschitz_violations and self.max_jacobian_error <= jac_tol

    def summary(self) -> str:
        lines = []
        for k in sorted(self.lipschitz_observed):
            flag = " VIOLATION" if k in self.lipschitz_violations else ""
            lines.append(
                f"{k}: observed Lipschitz {self.lipschitz_observed[k]:.6g} "
                f"(declared {self.lipschitz_declared[k]:.6g}){flag}"
            )
        lines.append(f"max |jacobian - fd| over {self.trials} trials: "
                     f"{self.max_jacobian_error:.3e}")
        return "\n".join(lines)


def _fd_jac(fn_point, x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference Jacobian columns of fn_point at x."""
    cols = []
    for c in range(x.shape[0]):
        xp = x.copy()
        xm = x.copy()
        xp[c] += eps
        xm[c] -= eps
        cols.append((fn_point(xp) - fn_point(xm)) / (2.0 * eps))
    if not cols:
        return np.zeros(fn_point(x).shape + (0,))
    return np.stack(cols, axis=-1)


def validate_problem(p: ProblemDef, g: Grid, trials: int, seed: int = 0,
                     boxes: Optional[ControlBoxes] = None,
                     y_scale: float = 1.0) -> ValidationReport:
    """Spot-check declared Lipschitz constants and all supplied
    derivatives against central finite differences at random points.

    Control samples come from `boxes` (default [-1,1] per component);
    state samples are uniform in [-y_scale, y_scale]^n. Derivative
    slots set to None are checked to be genuinely zero. Deterministic
    for a fixed seed.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    if boxes is None:
        boxes = ControlBoxes.bounds(-1.0, 1.0, p.p1, p.p2, p.p12)
    eps = 1e-5
    n = p.n

    lip_obs = {"f1": 0.0, "f2": 0.0, "f12": 0.0}
    lip_dec = {"f1": p.L1, "f2": p.L2, "f12": p.L12}
    jac_err: dict[str, float] = {}

    def bump(name: str, err: float):
        jac_err[name] = max(jac_err.get(name, 0.0), err)

    # kernel: (name, fn, dy, du, coordinate builder)
    def coords_f0(s, t, sig, tau):
        return (s, t)

    def coords_f1(s, t, sig, tau):
        return (s, t, sig)

    def coords_f2(s, t, sig, tau):
        return (s, t, tau)

    def coords_f12(s, t, sig, tau):
        return (s, t, sig, tau)

    kernels = [
        ("f0", p.f0, None, p.du_f0, coords_f0, False),
        ("f1", p.f1, p.dy_f1, p.du_f1, coords_f1, True),
        ("f2", p.f2, p.dy_f2, p.du_f2, coords_f2, True),
        ("f12", p.f12, p.dy_f12, p.du_f12, coords_f12, True),
    ]
    costs = [
        ("F0", p.F0, p.dy_F0, p.du_F0, lambda s, t: ()),
        ("F1", p.F1, p.dy_F1, p.du_F1, lambda s, t: (s,)),
        ("F2", p.F2, p.dy_F2, p.du_F2, lambda s, t: (t,)),
        ("F12", p.F12, p.dy_F12, p.du_F12, lambda s, t: (s, t)),
    ]

    for _ in range(trials):
        s = rng.uniform(0.0, g.A)
        t = rng.uniform(0.0, g.B)
        sig = rng.uniform(0.0, s)
        tau = rng.uniform(0.0, t)
        y = rng.uniform(-y_scale, y_scale, n)
        y2 = rng.uniform(-y_scale, y_scale, n)
        u1 = boxes.u1.sample(rng)
        u2 = boxes.u2.sample(rng)
        u12 = boxes.u12.sample(rng)
        ublocks = {"u1": u1, "u2": u2, "u12": u12}

        for name, fn, dy, du, coords, has_y in kernels:
            cs = coords(s, t, sig, tau)

            def fval(yv, uvs, _fn=fn, _cs=cs, _has_y=has_y, _name=name):
                args = _cs + ((yv,) if _has_y else ()) + (
                    uvs["u1"], uvs["u2"], uvs["u12"])
                return eval_map(_fn, args, (), (n,), _name)

            if fn is not None and has_y:
                dyv = np.abs(y - y2).max()
                if dyv > 0:
                    dfv = np.abs(fval(y, ublocks) - fval(y2, ublocks)).max()
                    lip_obs[name] = max(lip_obs[name], dfv / dyv)
            if has_y:
                jac = eval_map(dy, cs + (y, u1, u2, u12), (), (n, n),
                               f"dy_{name}")
                fd = _fd_jac(lambda yy: fval(yy, ublocks), y, eps)
                bump(f"dy_{name}", float(np.abs(jac - fd).max()))
            for blk in ("u1", "u2", "u12"):
                pc = p.pdims[blk]
                if pc == 0:
                    continue
                jac = eval_map(getattr(du, blk),
                               cs + ((y,) if has_y else ()) + (u1, u2, u12),
                               (), (n, pc), f"du_{name}.{blk}")

                def fu(x, _blk=blk):
                    uv = dict(ublocks)
                    uv[_blk] = x
                    return fval(y, uv)

                fd = _fd_jac(fu, ublocks[blk], eps)
                bump(f"du_{name}.{blk}", float(np.abs(jac - fd).max()))

        for name, fn, dy, du, coords in costs:
            cs = coords(s, t)

            def Fval(yv, uvs, _fn=fn, _cs=cs, _name=name):
                return eval_map(_fn, _cs + (yv, uvs["u1"], uvs["u2"],
                                            uvs["u12"]), (), (), _name)

            grad = eval_map(dy, cs + (y, u1, u2, u12), (), (n,), f"dy_{name}")
            fd = _fd_jac(lambda yy: Fval(yy, ublocks), y, eps)
            bump(f"dy_{name}", float(np.abs(grad - fd).max()))
            for blk in ("u1", "u2", "u12"):
                pc = p.pdims[blk]
                if pc == 0:
                    continue
                grad = eval_map(getattr(du, blk), cs + (y, u1, u2, u12),
                                (), (pc,), f"du_{name}.{blk}")

                def Fu(x, _blk=blk):
                    uv = dict(ublocks)
                    uv[_blk] = x
                    return Fval(y, uv)

                fd = _fd_jac(Fu, ublocks[blk], eps)
                bump(f"du_{name}.{blk}", float(np.abs(grad - fd).max()))

    violations = [k for k in lip_obs
                  if lip_obs[k] > lip_dec[k] * (1 + 1e-9) + 1e-12]
    return ValidationReport(lip_obs, lip_dec, violations, jac_err,
                            trials, seed)
