"""Command line entry point.

    levybellman solve       --config run.ini --out field.csv
    levybellman switching   --config run.ini --out components.csv
    levybellman kernels     --config run.ini --out tables.csv
    levybellman stencil     --config run.ini --out stencil.csv
    levybellman convergence --config run.ini --out rates.csv
    levybellman verify      [--only 1,3,9] [--out results.csv]

The INI file has one section per module ([problem], [kernels], [lattice],
[nonlocal], [local], [stepper], [switching], [harness]); see README.md for
the keys. Flags override the file. The exit status is 0 only when every
gated check of the subcommand passes.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from . import kernels as kn
from .errors import SchemeError
from .lattice import Farfield, Grid, write_csv
from .local import local_stencil
from .models import KERNELS, builtin_kernels, make_kernel, make_problem, zero_kernel
from .nonlocal_ops import JumpDiscretization
from .stepper import BellmanScheme, SchemeConfig

SECTIONS = ("problem", "kernels", "lattice", "nonlocal", "local", "stepper", "switching", "harness")

DEFAULTS = {
    "problem": {"model": "linear"},
    "kernels": {"model": "tempered_stable", "trunc_tol": "1e-10"},
    "lattice": {"bounds": "0, 2pi", "n": "64", "farfield": "periodic"},
    "nonlocal": {"sphere_nodes": "32", "mode": "lumped"},
    "local": {},
    "stepper": {"theta": "0", "vartheta": "0", "cfl_mode": "auto_dt", "fp_tol": "1e-10",
                "max_iter": "100000"},
    "switching": {"partition": "up | down", "costs": "0.4, 0.2, 0.1, 0.05"},
    "harness": {"levels": "32, 64, 128, 256", "dt_factor": "0.5", "oracle_tol": "1e-10"},
}

# keys of [problem] / [kernels] that are not model parameters
_RESERVED = {"model", "trunc_tol"}


def _number(text: str) -> float:
    text = text.strip().lower().replace(" ", "")
    for word, val in (("2pi", 2 * math.pi), ("pi", math.pi)):
        if text.endswith(word):
            head = text[: -len(word)].rstrip("*")
            return (float(head) if head not in ("", "+") else (-1.0 if head == "-" else 1.0)) * val
    return float(text)


def _numbers(text: str) -> list:
    return [_number(v) for v in text.replace(";", ",").split(",") if v.strip()]


def load_config(path=None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cfg.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise SchemeError(f"config file {path} not found")
        cfg.read(path)
    unknown = [s for s in cfg.sections() if s not in SECTIONS]
    if unknown:
        raise SchemeError(f"unknown config sections {unknown}; allowed: {list(SECTIONS)}")
    return cfg


def _params(section, skip=_RESERVED) -> dict:
    out = {}
    for k, v in section.items():
        if k in skip:
            continue
        try:
            out[k] = _number(v)
        except ValueError:
            out[k] = v
    for k in ("dim",):
        if k in out:
            out[k] = int(out[k])
    return out


def build_problem(cfg):
    sec = cfg["problem"]
    return make_problem(sec.get("model"), **_params(sec))


def build_kernel(cfg, dim):
    sec = cfg["kernels"]
    name = sec.get("model")
    presets = builtin_kernels()
    if name in presets:
        return presets[name]
    if name == "zero":
        return zero_kernel(dim)
    params = _params(sec)
    params.setdefault("dim", dim)
    return make_kernel(name, **params)


def build_grid(cfg, dim):
    sec = cfg["lattice"]
    lo, hi = _numbers(sec.get("bounds"))
    # dx is rounded so that it divides the box (keeps periodic boxes exact)
    n = round((hi - lo) / _number(sec["dx"])) if "dx" in sec else int(_number(sec.get("n")))
    return Grid.box([(lo, hi)] * dim, (hi - lo) / max(n, 2))


def build_farfield(cfg, p):
    kind = cfg["lattice"].get("farfield")
    if kind == "initial":
        return Farfield.initial(p.g)
    if kind in ("clamp", "periodic"):
        return Farfield(kind)
    raise SchemeError(f"farfield {kind!r} cannot be set from a config file (use initial, clamp or periodic)")


def jump_options(cfg) -> dict:
    sec = cfg["nonlocal"]
    opts = {"trunc_tol": _number(cfg["kernels"].get("trunc_tol")),
            "sphere_nodes": int(_number(sec.get("sphere_nodes"))), "mode": sec.get("mode")}
    if "dz" in sec:
        opts["dz"] = _number(sec["dz"])
    return opts


def scheme_config(cfg) -> SchemeConfig:
    sec = cfg["stepper"]
    return SchemeConfig(theta=_number(sec.get("theta")), vartheta=_number(sec.get("vartheta")),
                        dt=_number(sec["dt"]) if "dt" in sec else None,
                        fp_eps=_number(sec["fp_eps"]) if "fp_eps" in sec else None,
                        fp_tol=_number(sec.get("fp_tol")), max_iter=int(_number(sec.get("max_iter"))),
                        cfl_mode=sec.get("cfl_mode"))


def _apply_flags(cfg, args):
    if getattr(args, "model", None):
        cfg["kernels"]["model"] = args.model
    if getattr(args, "dx", None) is not None:
        cfg["lattice"]["dx"] = repr(args.dx)
    if getattr(args, "tol", None) is not None:
        cfg["stepper"]["fp_tol"] = repr(args.tol)
        cfg["kernels"]["trunc_tol"] = repr(args.tol)
        cfg["harness"]["oracle_tol"] = repr(args.tol)


def _setup(args):
    cfg = load_config(args.config)
    _apply_flags(cfg, args)
    p = build_problem(cfg)
    kern = build_kernel(cfg, p.dim_z)
    grid = build_grid(cfg, p.dim_x)
    return cfg, p, kern, grid


def _sibling(out, suffix):
    path = Path(out)
    return str(path.with_name(path.stem + suffix + path.suffix))


def _report(checks) -> int:
    ok = True
    for name, passed, detail in checks:
        print(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})")
        ok &= bool(passed)
    return 0 if ok else 1


# ------------------------------------------------------------ subcommands

def cmd_solve(args) -> int:
    cfg, p, kern, grid = _setup(args)
    scheme = BellmanScheme(p, kern, grid, scheme_config(cfg), build_farfield(cfg, p), **jump_options(cfg))
    sol = scheme.run(keep=False)
    out = args.out or "solution.csv"
    sol.to_csv(out, _sibling(out, "_steps"))
    print(f"wrote {out} and {_sibling(out, '_steps')} ({len(sol.diagnostics)} steps, dt={sol.dt:.4g})")
    return _report([("stability bound", sol.stable, f"max |U| {max(d.sup_norm for d in sol.diagnostics):.4g}"),
                    ("coefficient positivity", sol.coefficients_positive, f"cfl_mode={scheme.cfg.cfl_mode}")])


def _partition(text):
    return [[c.strip() for c in block.split(",") if c.strip()] for block in text.split("|")]


def cmd_switching(args) -> int:
    from .switching import switching_gap_study

    cfg, p, kern, grid = _setup(args)
    sec = cfg["switching"]
    ff = build_farfield(cfg, p)
    sc = scheme_config(cfg)
    ks = _numbers(sec.get("costs"))
    study = switching_gap_study(p, _partition(sec.get("partition")), ks, kern, grid, sc, ff, **jump_options(cfg))
    out = args.out or "switching.csv"
    study.to_csv(_sibling(out, "_gaps"))
    from .switching import SwitchingProblem, solve_switching
    sol = solve_switching(SwitchingProblem(p, _partition(sec.get("partition")), ks[-1]), kern, grid, sc, ff,
                          **jump_options(cfg))
    sol.to_csv(out)
    print(f"wrote {out} and {_sibling(out, '_gaps')}")
    lower = min(r.lower for r in study.rows)
    tol = 1e-6
    return _report([
        ("one-sided bound v_i >= U", lower >= -tol, f"min(v_i - U) = {lower:.3e}"),
        ("spread <= switching cost", all(r.spread <= r.k + 1e-12 for r in study.rows),
         ", ".join(f"k={r.k:g}: {r.spread:.4g}" for r in study.rows)),
        ("gap non-increasing in k", study.monotone, ", ".join(f"{r.gap:.4g}" for r in study.rows)),
    ])


def cmd_kernels(args) -> int:
    cfg, p, kern, grid = _setup(args)
    opts = jump_options(cfg)
    dx = grid.dx
    rows, checks = [], []
    if kern.kind == "finite" or kern.name == "zero":
        jd = JumpDiscretization(kern, grid, **opts)
        for k, s in enumerate(jd.schemes):
            rows += [[f"ray{k}", i, float(o), float(s.sphere_weight * c)] for i, (o, c) in
                     enumerate(zip(s.offsets, s.coefs))]
        mn = min((float(s.coefs.min()) for s in jd.schemes if len(s.coefs)), default=0.0)
        checks.append(("weights non-negative", mn >= 0, f"min {mn:.3g}"))
    else:
        if kern.dim == 1 and kern.kind == "singular_gamma_lt_1":
            _, tables = kn.build_single_tail(kern, dx, opts["trunc_tol"])
        elif kern.dim == 1:
            _, tables = kn.build_double_tail(kern, dx, opts["trunc_tol"], opts.get("dz"), opts["mode"])
        else:
            order = "single" if kern.kind == "singular_gamma_lt_1" else "double"
            _, tables = kn.build_polar_tails(kern, dx, opts["sphere_nodes"], order, opts["trunc_tol"],
                                             opts.get("dz"), mode=opts["mode"])
        for tab in tables:
            rows += [[tab.label, n, float(z), float(w)] for n, (z, w) in enumerate(zip(tab.z, tab.weights))]
            if tab.order == "single":
                d = tab.differences()
                checks.append((f"table {tab.label} non-increasing", d.size == 0 or d.min() >= -1e-14 * max(1, tab.weights[0]),
                               f"min difference {d.min() if d.size else 0:.3g}"))
            else:
                d = tab.second_differences()
                checks.append((f"table {tab.label} convex", d.size == 0 or d.min() >= -1e-14 * max(1, tab.weights[0]),
                               f"min second difference {d.min() if d.size else 0:.3g}"))
    out = args.out or "kernels.csv"
    write_csv(out, ["table", "n", "z", "weight"], rows)
    print(f"wrote {out} ({len(rows)} rows)")
    return _report(checks)


def cmd_stencil(args) -> int:
    cfg, p, kern, grid = _setup(args)
    ff = build_farfield(cfg, p)
    sec = cfg["harness"]
    if "node" in sec:
        idx = [int(v) for v in _numbers(sec["node"])]
        node = grid.node_index(idx if len(idx) == grid.dim else idx[0])
    else:
        node = grid.node_index([(l + h) // 2 for l, h in zip(grid.lo, grid.hi)])
    alpha = p.control_index(sec.get("control", p.controls[0]))
    t = _number(sec.get("t", "0"))
    J = JumpDiscretization(kern, grid, **jump_options(cfg)).stencil(p, alpha, t, node, ff)
    L = local_stencil(p, alpha, t, grid, node, ff)
    rows = []
    for name, st in (("local", L), ("nonlocal", J)):
        rows += [[name] + [int(v) for v in tgt] + [float(w), "grid"] for tgt, w in zip(st.targets, st.weights)]
        rows += [[name] + list(np.asarray(pt) / grid.dx) + [float(w), "farfield"]
                 for pt, w in zip(st.farfield_points, st.farfield_weights)]
        rows.append([name] + list(st.center) + [st.diag_mass, "diag_mass"])
    out = args.out or "stencil.csv"
    write_csv(out, ["operator"] + [f"i{k + 1}" for k in range(grid.dim)] + ["weight", "target"], rows)
    print(f"wrote {out} (node {tuple(int(v) for v in grid.multi_index(node))})")
    mins = [float(st.weights.min()) for st in (L, J) if len(st.weights)]
    mins += [float(st.farfield_weights.min()) for st in (L, J) if len(st.farfield_weights)]
    return _report([("weights non-negative", min(mins, default=0.0) >= 0, f"min {min(mins, default=0.0):.3g}")])


def cmd_convergence(args) -> int:
    from .harness import rate_report

    cfg, p, kern, grid = _setup(args)
    sec = cfg["harness"]
    levels = [int(v) for v in _numbers(sec.get("levels"))]
    opts = jump_options(cfg)
    opts.pop("trunc_tol")
    rep = rate_report(p, kern, levels, scheme_config(cfg), _number(sec.get("dt_factor")),
                      _number(sec.get("oracle_tol")), trunc_tol=_number(cfg["kernels"].get("trunc_tol")), **opts)
    out = args.out or "rates.csv"
    rep.to_csv(out)
    print(f"wrote {out}")
    for row in rep.table():
        print("  " + ", ".join(str(v) for v in row))
    return _report([("errors strictly decreasing", rep.strictly_decreasing,
                     ", ".join(f"{r.sup_error:.3e}" for r in rep.rows)),
                    ("fitted order", rep.fit.slope >= max(0.5, rep.guarantee),
                     f"{rep.fit.slope:.3f} vs required {max(0.5, rep.guarantee)}")])


def cmd_verify(args) -> int:
    from .acceptance import run_all

    only = {int(v) for v in args.only.split(",")} if args.only else None
    results = run_all(only)
    if args.out:
        write_csv(args.out, ["criterion", "name", "passed", "detail", "seconds"],
                  [[r.number, r.name, r.passed, r.detail, r.seconds] for r in results])
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"solve": cmd_solve, "switching": cmd_switching, "kernels": cmd_kernels,
            "stencil": cmd_stencil, "convergence": cmd_convergence, "verify": cmd_verify}


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levybellman", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with module sections")
        sp.add_argument("--out", help="CSV output path")
        if name != "verify":
            sp.add_argument("--model", help=f"kernel model ({', '.join(sorted(KERNELS))}, zero) "
                                            f"or preset ({', '.join(builtin_kernels())})")
            sp.add_argument("--dx", type=float, help="grid spacing (overrides [lattice])")
            sp.add_argument("--tol", type=float, help="fixed-point, truncation and oracle tolerance")
        else:
            sp.add_argument("--only", help="comma separated criterion numbers")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SchemeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
