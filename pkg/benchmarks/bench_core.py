"""Compare the compiled relaxation core with the NumPy fallback.

    python3 benchmarks/bench_core.py [--n 256] [--repeat 3]

Times one implicit step's fixed-point solve and the Bellman max on a
two-control problem with a tempered stable kernel, plus a full run, and
checks that both backends agree to the last bit.
"""
import argparse
import math
import time

import numpy as np

from levybellman import Farfield, Grid, SchemeConfig, _backend
from levybellman.models import tempered_stable, two_control_problem
from levybellman.stepper import BellmanScheme, explicit_part, implicit_solve


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=256, help="nodes per axis")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        _backend.get("cython")
    except ImportError:
        print("compiled core not built; run `pip install -e . --no-build-isolation` first")
        return 1

    p = two_control_problem(a=0.1, b=1.0)
    kern = tempered_stable(gamma=1.5)
    grid = Grid.box([(0.0, 2 * math.pi)], 2 * math.pi / args.n)
    cfg = SchemeConfig(theta=1.0, vartheta=1.0, dt=0.05, fp_tol=1e-10)
    scheme = BellmanScheme(p, kern, grid, cfg, Farfield("periodic"))
    dt = scheme.time_step()
    lv0, lv1 = scheme.level(0.0), scheme.level(dt)
    system = scheme._system(lv1)
    U = p.g(scheme.X)
    E = explicit_part(U, lv0, 1.0, 1.0, scheme.farfield)
    Q = np.random.default_rng(0).normal(size=(8, 200_000))

    print(f"n={args.n}, nnz={len(system.data)}, controls={system.m}, dt={dt:g}")
    print(f"{'operation':<24}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}")
    results = {}
    for label, fn in (
        ("fixed-point solve", lambda be: implicit_solve(U, E, system, cfg, dt, dt, scheme.farfield, backend=be)),
        ("bellman max 8x2e5", lambda be: _backend.get(be).bellman_max(Q)),
        ("full run", lambda be: scheme.run(keep=False, backend=be)),
    ):
        tc, oc = best_of(lambda: fn("cython"), args.repeat)
        tp, op = best_of(lambda: fn("python"), args.repeat)
        results[label] = (oc, op)
        print(f"{label:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")

    fc, fp = results["fixed-point solve"]
    rc, rp = results["full run"]
    same = (np.array_equal(fc.U, fp.U) and fc.iterations == fp.iterations
            and np.array_equal(rc.U, rp.U) and np.array_equal(results["bellman max 8x2e5"][0][1],
                                                               results["bellman max 8x2e5"][1][1]))
    print(f"fixed-point iterations: {fc.iterations}; backends agree: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
