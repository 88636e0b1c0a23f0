"""Time the compiled kernels against the pure NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one full PHA solve of the utility fixture (gamma=10) under each
backend, switching via ``SCENDECOMP_PURE`` in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from scendecomp import _kernels_py
from scendecomp.kernels import EXPONENTIAL
from scendecomp.tree import StageDistribution, build_tree

try:
    from scendecomp import _kernels_c
except ImportError:
    _kernels_c = None


def cases(rng):
    stages = [StageDistribution.uniform(rng.normal(size=(7, 1))) for _ in range(4)]
    tree = build_tree(stages)
    n = 3
    S, nT = tree.n_scenarios, n * tree.horizon
    U, W, Uh, Uo = (rng.normal(size=(S, nT)) for _ in range(4))
    M, x = rng.normal(size=(S, 6, 6)), rng.normal(size=(S, 6))
    beta0, kappa = rng.uniform(0, 5, S * n), rng.uniform(0, 50, S * n)
    return {
        f"aggregate ({S} scenarios)": lambda k: k.aggregate(U, tree.bundle_ids, tree.n_bundles, tree.probabilities, n),
        "multiplier_step": lambda k: k.multiplier_step(W, U, Uh, Uo, tree.probabilities, 0.5),
        "batched_matvec 6x6": lambda k: k.batched_matvec(M, x),
        f"hara_root ({S * n} roots)": lambda k: k.hara_root(beta0, kappa, EXPONENTIAL, 1.0, 0.0),
    }


SOLVE = (
    "import time;"
    "from scendecomp.config import load_config, parse_pha, parse_utility;"
    "from scendecomp.pha import pha_solve;"
    "from scendecomp.portfolio import UtilityAdapter;"
    "cfg = load_config('utility_smoothing');"
    "m, u, specs = parse_utility(cfg['problem'], 10.0);"
    "t = m.tree(); s = time.perf_counter();"
    "r = pha_solve(t, UtilityAdapter(m, u, specs[0], t), parse_pha(cfg));"
    "print(time.perf_counter() - s, r.iterations)"
)


def full_solve(pure):
    env = dict(os.environ, SCENDECOMP_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SOLVE], env=env, capture_output=True, text=True, check=True)
    seconds, iterations = out.stdout.split()
    return float(seconds), int(iterations)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    backends = {"cython": _kernels_c, "python": _kernels_py}
    print(f"{'kernel':32s} {'cython us':>12s} {'python us':>12s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {
            key: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e6
            for key, mod in backends.items()
        }
        print(f"{name:32s} {times['cython']:12.1f} {times['python']:12.1f} {times['python'] / times['cython']:8.2f}")
    c_time, c_iter = full_solve(pure=False)
    p_time, p_iter = full_solve(pure=True)
    print(f"utility PHA solve, gamma=10: cython {c_time:.2f}s, python {p_time:.2f}s "
          f"({c_iter} iterations each)" if c_iter == p_iter else "iteration counts differ between backends")
    return 0


if __name__ == "__main__":
    sys.exit(main())
