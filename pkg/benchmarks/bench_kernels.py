"""Times the numba kernels against their numpy twins, then one end-to-end solve per backend.

    python3 benchmarks/bench_kernels.py [--n 512] [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from mfrbsde import _kernels

ROOT = Path(__file__).resolve().parents[1]


def kernel_inputs(n, rng):
    va, vb = np.sort(rng.normal(size=n)), np.sort(rng.normal(size=n))
    wa, wb = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    atoms = np.round(np.sort(rng.normal(size=n)), 2)
    return {
        "backward_accumulate": (rng.normal(size=(n + 1, n + 1)), rng.normal(size=n + 1)),
        "accumulate_k": (np.tril(rng.uniform(size=(n, n))),),
        "merge_atoms": (atoms, np.full(n, 1.0 / n), 1e-12),
        "w1_quantile": (va, wa, vb, wb),
    }


def bench_kernels(n, repeat):
    inputs = kernel_inputs(n, np.random.default_rng(0))
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, args in inputs.items():
        times = []
        for table in (_kernels.NUMPY_KERNELS, _kernels.NUMBA_KERNELS):
            fn = table[name]
            fn(*args)  # compile / warm up
            times.append(min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)) * 1e3)
        print(f"{name:<22}{times[0]:>12.3f}{times[1]:>12.3f}{times[0] / times[1]:>10.1f}")


def bench_solve(config, steps):
    script = (
        "import time\n"
        "from mfrbsde import harness, meanfield\n"
        f"p = harness.load_problem({str(config)!r}, {steps})\n"
        "meanfield.solve(p)\n"
        "t = time.perf_counter(); meanfield.solve(p); print(time.perf_counter() - t)\n"
    )
    print(f"\nend-to-end solve of {config.name} at n={steps}")
    for flag, label in (("0", "numba"), ("1", "numpy")):
        env = {**os.environ, "MFRBSDE_DISABLE_NUMBA": flag, "MFRBSDE_LOG": "quiet"}
        out = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        print(f"  {label:<6}{float(out.stdout) * 1e3:>10.1f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "american_put_meanfield.json")
    ap.add_argument("--steps", type=int, default=256)
    args = ap.parse_args()
    if _kernels.NUMBA_KERNELS is None:
        sys.exit("numba is not importable; nothing to compare")
    bench_kernels(args.n, args.repeat)
    bench_solve(args.config, args.steps)


if __name__ == "__main__":
    main()
