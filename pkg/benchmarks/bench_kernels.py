"""Compare the compiled kernels with the pure-Python fallback.

Run ``python benchmarks/bench_kernels.py``.  Both backends are imported
directly, fed identical inputs and checked for identical results before
timing.  The end-to-end oracle timing runs in subprocesses so that the
``CVRSPLINE_PURE_PYTHON`` switch takes effect at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cvrspline import _fallback
from cvrspline.oracle import PRIMES, _assemble, _Field, random_hierarchical_mesh

try:
    from cvrspline import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def rank_workload(seed: int):
    mesh = random_hierarchical_mesh(seed, 5, 3, 0.4)
    rows, _ = _assemble(mesh, True, _Field(PRIMES[0]))
    return rows, 9 * len(mesh.cells)


def eval_workload(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    ncell = 400
    nets = rng.standard_normal((ncell, 3, 3))
    x0 = rng.uniform(0, 1, ncell)
    y0 = rng.uniform(0, 1, ncell)
    rects = np.column_stack([x0, x0 + 0.1, y0, y0 + 0.1])
    idx = rng.integers(0, ncell, n).astype(np.int64)
    x = rects[idx, 0] + 0.1 * rng.random(n)
    y = rects[idx, 2] + 0.1 * rng.random(n)
    return nets, np.ascontiguousarray(rects), idx, x, y


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def oracle_subprocess(pure: bool, seeds: int) -> float:
    env = dict(os.environ, CVRSPLINE_PURE_PYTHON="1" if pure else "0")
    code = (
        "import time;from cvrspline.oracle import dim_bruteforce, random_hierarchical_mesh as r;"
        f"t=time.perf_counter();[dim_bruteforce(r(s)) for s in range({seeds})];print(time.perf_counter()-t)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the fallback is available")
        return

    print(f"{'kernel':<28}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    rows, ncols = rank_workload(3)
    r_py = _fallback.sparse_rank_mod([dict(r) for r in rows], ncols, PRIMES[0])
    r_cy = _ckernels.sparse_rank_mod([dict(r) for r in rows], ncols, PRIMES[0])
    assert r_py == r_cy, (r_py, r_cy)
    tp = best(lambda: _fallback.sparse_rank_mod([dict(r) for r in rows], ncols, PRIMES[0]), args.repeat)
    tc = best(lambda: _ckernels.sparse_rank_mod([dict(r) for r in rows], ncols, PRIMES[0]), args.repeat)
    print(f"{'sparse_rank_mod':<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")

    w = eval_workload(args.points)
    assert np.allclose(_fallback.eval_patches(*w), _ckernels.eval_patches(*w), rtol=0, atol=1e-12)
    tp = best(lambda: _fallback.eval_patches(*w), args.repeat)
    tc = best(lambda: _ckernels.eval_patches(*w), args.repeat)
    print(f"{'eval_patches':<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")

    tp, tc = oracle_subprocess(True, args.seeds), oracle_subprocess(False, args.seeds)
    print(f"{'dim_bruteforce x' + str(args.seeds):<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
