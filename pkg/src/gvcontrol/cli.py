"""Command-line front end.

Subcommands: solve, gradcheck, optimize, gronwall. Each takes a JSON
config file as its first positional argument; a handful of kebab-case
flags override config fields. CSV outputs land under the configured
output directory, a one-object JSON summary goes to standard output
(for gradcheck and gronwall it is the last stdout line, after a small
text table). Exit codes: 0 success, 1 config error, 2 divergence or a
failed numerical check.

Identical config + seed gives byte-identical CSV files: all randomness
flows through numpy's default_rng(seed) and floats are written in
shortest round-trip form.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .costate import solve_costate
from .demos import REGISTRY
from .errors import GVError, TruncationError
from .forward import ForwardOptions, solve_forward
from .gradient import control_inner, cost, fd_directional, gradient
from .grid import Grid, make_grid
from .gronwall import gronwall_bound, gronwall_coeffs, gronwall_eval
from .optimize import OptimizeOptions, check_extremum_principle, optimize

__all__ = ["main", "ConfigError"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAIL = 2


class ConfigError(Exception):
    pass


DEFAULTS = {
    "problem": None,
    "grid": {"A": 1.0, "B": 1.0, "Ns": 16, "Nt": 16},
    "tol": 1e-10,
    "max_iters": 200,
    "seed": 0,
    "out_dir": "gv_out",
    # gradcheck
    "directions": 10,
    "fd_eps": 1e-5,
    "threshold": 1e-4,
    # optimize
    "max_outer": 500,
    "stat_tol": 1e-6,
    "step0": 1.0,
    "n_samples": 33,
    "extremum_tol": 1e-4,
    # gronwall
    "coeffs": {"A0": 1.0, "B1": 1.0, "B2": 1.0, "B12": 0.5},
    "kmax": 48,
    "lmax": 48,
    "ds": [2.0, 2.5, 3.0, 3.5, 4.0],
    "dt": [2.0, 2.5, 3.0, 3.5, 4.0],
}


def _load_config(path: str, overrides: dict) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path!r}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path!r} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if key in ("grid", "coeffs"):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            for sub, sval in val.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                cfg[key][sub] = sval
        else:
            cfg[key] = val
    grid_keys = {"grid_ns": "Ns", "grid_nt": "Nt", "grid_a": "A",
                 "grid_b": "B"}
    for key, val in overrides.items():
        if val is None:
            continue
        if key in grid_keys:
            cfg["grid"][grid_keys[key]] = val
        else:
            cfg[key] = val

    for key in ("tol", "fd_eps", "threshold", "stat_tol", "step0",
                "extremum_tol"):
        if not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
            raise ConfigError(f"config key {key!r} must be positive")
    for key in ("max_iters", "max_outer", "directions", "n_samples"):
        if not (isinstance(cfg[key], int) and cfg[key] >= 1):
            raise ConfigError(f"config key {key!r} must be a positive "
                              f"integer")
    for key in ("kmax", "lmax"):
        if not (isinstance(cfg[key], int) and cfg[key] >= 0):
            raise ConfigError(f"config key {key!r} must be a nonnegative "
                              f"integer")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("config key 'seed' must be an integer")
    return cfg


def _build_problem(cfg: dict):
    name = cfg["problem"]
    if not isinstance(name, str) or not name:
        raise ConfigError("config key 'problem' is required")
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise ConfigError(f"unknown problem {name!r}; registered: {known}")
    gc = cfg["grid"]
    try:
        g = make_grid(float(gc["A"]), float(gc["B"]), int(gc["Ns"]),
                      int(gc["Nt"]))
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"bad grid config: {e}")
    demo = REGISTRY[name](g, seed=cfg["seed"])
    return demo, g


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            str(c) if isinstance(c, (int, np.integer)) else _fmt(c)
            for c in row))
    path.write_text("\n".join(lines) + "\n")


def _grid_rows(g: Grid, field: np.ndarray):
    n1s, n1t, n = field.shape
    for i in range(n1s):
        for j in range(n1t):
            yield (i, j, g.s_nodes[i], g.t_nodes[j], *field[i, j])


def _edge_rows(nodes: np.ndarray, arr: np.ndarray):
    for i in range(arr.shape[0]):
        yield (i, nodes[i], *arr[i])


def _state_header(n: int) -> list[str]:
    return ["i", "j", "s", "t"] + [f"y_{k + 1}" for k in range(n)]


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------- commands


def cmd_solve(cfg: dict) -> int:
    demo, g = _build_problem(cfg)
    out = _out_dir(cfg)
    opts = ForwardOptions(tol=cfg["tol"], max_iters=cfg["max_iters"])
    try:
        res = solve_forward(demo.problem, demo.u0, g, opts)
    except GVError as e:
        print(f"error: forward solve failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    J = cost(demo.problem, res.y, demo.u0, g)

    state_path = out / "state.csv"
    _write_csv(state_path, _state_header(demo.problem.n),
               _grid_rows(g, res.y.values))
    iters_path = out / "iterations.csv"
    _write_csv(iters_path, ["k", "delta"],
               [(k + 1, d) for k, d in enumerate(res.deltas)])

    _emit({
        "command": "solve",
        "problem": demo.problem.name or cfg["problem"],
        "grid": cfg["grid"],
        "iterations": res.iterations,
        "final_delta": res.deltas[-1],
        "J": J,
        "outputs": {"state": state_path.name, "iterations": iters_path.name},
    })
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    demo, g = _build_problem(cfg)
    p, u = demo.problem, demo.u0
    if p.p1 + p.p2 + p.p12 == 0:
        raise ConfigError(f"problem {cfg['problem']!r} has no controls to "
                          f"check")
    out = _out_dir(cfg)
    try:
        y = solve_forward(p, u, g,
                          ForwardOptions(tol=cfg["tol"],
                                         max_iters=cfg["max_iters"])).y
        psi = solve_costate(p, y, u, g, tol=cfg["tol"])
        G = gradient(p, y, u, psi, g)
    except GVError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL

    rng = np.random.default_rng(cfg["seed"])
    n1s, n1t = g.shape
    rows = []
    worst = 0.0
    print(f"{'dir':>4} {'fd':>24} {'adjoint':>24} {'rel_err':>12}")
    for d in range(cfg["directions"]):
        du = (rng.uniform(-1.0, 1.0, (n1s, p.p1)),
              rng.uniform(-1.0, 1.0, (n1t, p.p2)),
              rng.uniform(-1.0, 1.0, (n1s, n1t, p.p12)))
        try:
            fd = fd_directional(p, u, du, g, eps=cfg["fd_eps"])
        except GVError as e:
            print(f"error: probe solve failed: {e}", file=sys.stderr)
            return EXIT_FAIL
        ad = control_inner(G, du, g)
        rel = abs(fd.richardson - ad) / max(abs(fd.richardson), abs(ad),
                                            1e-12)
        worst = max(worst, rel)
        rows.append((d, fd.richardson, ad, rel))
        print(f"{d:>4} {fd.richardson:>24.16e} {ad:>24.16e} {rel:>12.3e}")

    table_path = out / "gradcheck.csv"
    _write_csv(table_path, ["direction", "fd", "adjoint", "rel_err"], rows)
    ok = worst <= cfg["threshold"]
    _emit({
        "command": "gradcheck",
        "problem": p.name or cfg["problem"],
        "directions": cfg["directions"],
        "threshold": cfg["threshold"],
        "max_rel_err": worst,
        "passed": ok,
        "outputs": {"table": table_path.name},
    })
    return EXIT_OK if ok else EXIT_FAIL


def cmd_optimize(cfg: dict) -> int:
    demo, g = _build_problem(cfg)
    p = demo.problem
    out = _out_dir(cfg)
    oopts = OptimizeOptions(max_outer=cfg["max_outer"],
                            step0=cfg["step0"],
                            stat_tol=cfg["stat_tol"])
    fopts = ForwardOptions(tol=cfg["tol"], max_iters=cfg["max_iters"])
    try:
        res = optimize(p, demo.u0, g, oopts, forward_opts=fopts,
                       costate_tol=cfg["tol"])
    except GVError as e:
        print(f"error: optimization failed: {e}", file=sys.stderr)
        return EXIT_FAIL

    outputs = {}

    def emit_csv(tag, path, header, rows):
        _write_csv(path, header, rows)
        outputs[tag] = path.name

    if p.p12:
        emit_csv("control_u12", out / "control_u12.csv",
                 ["i", "j", "s", "t"]
                 + [f"u12_{k + 1}" for k in range(p.p12)],
                 _grid_rows(g, res.u.u12))
    if p.p1:
        emit_csv("control_u1", out / "control_u1.csv",
                 ["i", "s"] + [f"u1_{k + 1}" for k in range(p.p1)],
                 _edge_rows(g.s_nodes, res.u.u1))
    if p.p2:
        emit_csv("control_u2", out / "control_u2.csv",
                 ["j", "t"] + [f"u2_{k + 1}" for k in range(p.p2)],
                 _edge_rows(g.t_nodes, res.u.u2))
    emit_csv("state", out / "state.csv", _state_header(p.n),
             _grid_rows(g, res.y.values))
    emit_csv("costate", out / "costate_psi12.csv",
             ["i", "j", "s", "t"] + [f"psi12_{k + 1}" for k in range(p.n)],
             _grid_rows(g, res.psi.psi12.values))
    emit_csv("costate_s", out / "costate_psi1.csv",
             ["i", "s"] + [f"psi1_{k + 1}" for k in range(p.n)],
             _edge_rows(g.s_nodes, res.psi.psi1))
    emit_csv("costate_t", out / "costate_psi2.csv",
             ["j", "t"] + [f"psi2_{k + 1}" for k in range(p.n)],
             _edge_rows(g.t_nodes, res.psi.psi2))
    emit_csv("history", out / "history.csv",
             ["k", "J", "stationarity", "step"],
             [(k, J, st, al) for k, (J, st, al) in enumerate(res.history)])

    report = check_extremum_principle(p, res.u, res.y, res.psi, g,
                                      n_samples=cfg["n_samples"],
                                      tol=cfg["extremum_tol"])
    report_path = out / "extremum_report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True,
                                      indent=2) + "\n")
    outputs["extremum_report"] = report_path.name

    _emit({
        "command": "optimize",
        "problem": p.name or cfg["problem"],
        "converged": res.converged,
        "iterations": res.iterations,
        "J": res.J,
        "stationarity": res.stationarity,
        "psi0": [float(v) for v in res.psi.psi0],
        "extremum_min_fraction": report.applicable_pass_fraction(),
        "outputs": outputs,
    })
    return EXIT_OK if res.converged else EXIT_FAIL


def cmd_gronwall(cfg: dict) -> int:
    out = _out_dir(cfg)
    cc = cfg["coeffs"]
    for key in ("A0", "B1", "B2", "B12"):
        if not isinstance(cc.get(key), (int, float)):
            raise ConfigError(f"config key coeffs.{key} must be a number")
    try:
        coeffs = gronwall_coeffs(cc["A0"], cc["B1"], cc["B2"], cc["B12"],
                                 cfg["kmax"], cfg["lmax"])
    except ValueError as e:
        raise ConfigError(str(e))

    coeff_rows = [(k, l, coeffs.C[k, l])
                  for k in range(cfg["kmax"] + 1)
                  for l in range(cfg["lmax"] + 1)]
    coeffs_path = out / "coeffs.csv"
    _write_csv(coeffs_path, ["k", "l", "C"], coeff_rows)

    ds_list = [float(v) for v in cfg["ds"]]
    dt_list = [float(v) for v in cfg["dt"]]
    if not ds_list or not dt_list:
        raise ConfigError("config keys 'ds' and 'dt' must be nonempty "
                          "lists")
    rows = []
    max_ratio = 0.0
    all_ok = True
    print(f"{'ds':>8} {'dt':>8} {'zeta':>24} {'bound':>24} {'ok':>4}")
    for ds in ds_list:
        for dt in dt_list:
            try:
                zeta = gronwall_eval(coeffs, ds, dt)
            except TruncationError as e:
                print(f"error: series truncation too coarse at "
                      f"(ds={ds}, dt={dt}): {e}", file=sys.stderr)
                return EXIT_FAIL
            bound = gronwall_bound(cc["A0"], cc["B1"], cc["B2"], cc["B12"],
                                   ds, dt)
            ok = zeta <= bound * (1.0 + 1e-12)
            all_ok &= ok
            if bound > 0:
                max_ratio = max(max_ratio, zeta / bound)
            rows.append((ds, dt, zeta, bound, int(ok)))
            print(f"{ds:>8.3f} {dt:>8.3f} {zeta:>24.16e} {bound:>24.16e} "
                  f"{'yes' if ok else 'NO':>4}")
    zeta_path = out / "zeta.csv"
    _write_csv(zeta_path, ["ds", "dt", "zeta", "bound", "ok"], rows)

    _emit({
        "command": "gronwall",
        "coeffs": cc,
        "kmax": cfg["kmax"],
        "lmax": cfg["lmax"],
        "all_within_bound": bool(all_ok),
        "max_ratio": max_ratio,
        "outputs": {"coeffs": coeffs_path.name, "zeta": zeta_path.name},
    })
    return EXIT_OK if all_ok else EXIT_FAIL


# --------------------------------------------------------------- main


def _add_common(sp):
    sp.add_argument("config", help="path to JSON config file")
    sp.add_argument("--grid-ns", type=int, dest="grid_ns")
    sp.add_argument("--grid-nt", type=int, dest="grid_nt")
    sp.add_argument("--grid-a", type=float, dest="grid_a")
    sp.add_argument("--grid-b", type=float, dest="grid_b")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iters", type=int, dest="max_iters")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", dest="out_dir")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="gvcontrol",
        description="Volterra two-parameter control toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the forward solver")
    _add_common(sp)
    sp = sub.add_parser("gradcheck",
                        help="compare adjoint gradient with differences")
    _add_common(sp)
    sp.add_argument("--directions", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--fd-eps", type=float, dest="fd_eps")
    sp = sub.add_parser("optimize", help="projected gradient descent")
    _add_common(sp)
    sp.add_argument("--max-outer", type=int, dest="max_outer")
    sp.add_argument("--stat-tol", type=float, dest="stat_tol")
    sp.add_argument("--n-samples", type=int, dest="n_samples")
    sp = sub.add_parser("gronwall", help="bound tables for linear systems")
    _add_common(sp)
    sp.add_argument("--kmax", type=int)
    sp.add_argument("--lmax", type=int)

    args = ap.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config")}
    handler = {
        "solve": cmd_solve,
        "gradcheck": cmd_gradcheck,
        "optimize": cmd_optimize,
        "gronwall": cmd_gronwall,
    }[args.command]
    try:
        cfg = _load_config(args.config, overrides)
        return handler(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
