"""Time the compiled kernels against the NumPy fallback on realistic inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--n 512]
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from coulombgap import _pykernels
from coulombgap.orthopoly import PerturbedWeight, window_nodes
from coulombgap.potential import gap_potential
from coulombgap.sampler import build_sampler

try:
    from coulombgap import _ckernels
except ImportError:
    _ckernels = None


def norm_inputs(n: int) -> tuple[np.ndarray, np.ndarray]:
    pot = gap_potential()
    r, wt = window_nodes(pot, n)[0]
    logw = np.log(2.0 * wt) - n * pot.pieces[0].profile.value(r)
    return np.ascontiguousarray(logw), np.ascontiguousarray(np.log(r))


def sampler_inputs(n: int, draws: int) -> tuple[np.ndarray, ...]:
    ms = build_sampler(PerturbedWeight(gap_potential()), n, seed=1)
    rng = np.random.default_rng(0)
    rows = np.ascontiguousarray(np.tile(np.arange(n, dtype=np.intp), draws // n))
    log_u = np.log(rng.random(rows.size))
    return ms.r_tab, ms.lower_key, ms.lower_slope, rows, log_u


def best(stmt, repeat: int) -> float:
    return min(timeit.repeat(stmt, number=1, repeat=repeat))


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--draws", type=int, default=512 * 200)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the fallback can be timed", file=sys.stderr)
    logw, logr = norm_inputs(args.n)
    tabs = sampler_inputs(args.n, args.draws)
    rows = []
    for name, fn_args in (("log_moments", (logw, logr, 0, args.n)), ("invert_tables", tabs)):
        py = getattr(_pykernels, name)
        t_py = best(lambda: py(*fn_args), args.repeat)
        if _ckernels is not None:
            cy = getattr(_ckernels, name)
            t_cy = best(lambda: cy(*fn_args), args.repeat)
            diff = float(np.max(np.abs(np.asarray(cy(*fn_args)) - np.asarray(py(*fn_args)))))
            rows.append((name, t_py, t_cy, t_py / t_cy, diff))
        else:
            rows.append((name, t_py, float("nan"), float("nan"), float("nan")))
    print(f"{'kernel':<15}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, t_py, t_cy, sp, diff in rows:
        print(f"{name:<15}{t_py:>12.4f}{t_cy:>12.4f}{sp:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
