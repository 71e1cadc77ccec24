"""Compare the numpy and compiled steppers on the closed-form families.

Runs the same ensemble through both backends, checks they agree, and prints
wall times with the speedup.  Families without a compiled form are skipped.

    python3 benchmarks/bench_backends.py --n-paths 2000 --n-steps 400
"""

import argparse
import time

import numpy as np

from divkern import PathConfig, get_model, run_forward
from divkern.kernels import compiled_available

CASES = [
    ("ou", 10, [0.5, 0.2]),
    ("mult1d", 1, [0.3]),
    ("lorenz96", 40, [0.4]),
]


def time_run(cfg, backend, repeats):
    best = float("inf")
    ens = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        ens = run_forward(cfg, directions=(0,), backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, ens


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-paths", type=int, default=2000)
    ap.add_argument("--n-steps", type=int, default=400)
    ap.add_argument("--dt", type=float, default=0.002)
    ap.add_argument("--alpha", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    if not compiled_available():
        print("compiled stepper unavailable; nothing to compare")
        return

    print(f"{'model':<10} {'dim':>4} {'numpy':>10} {'cython':>10} {'speedup':>8}  agreement")
    for name, dim, gamma in CASES:
        model = get_model(name, gamma=gamma, dim=dim)
        cfg = PathConfig(
            model=model,
            dt=args.dt,
            n_steps=args.n_steps,
            n_paths=args.n_paths,
            seed=args.seed,
            alpha=args.alpha,
        )
        t_py, ens_py = time_run(cfg, "python", args.repeats)
        t_cy, ens_cy = time_run(cfg, "cython", args.repeats)
        dx = float(np.abs(ens_py.x - ens_cy.x).max())
        dacc = float(np.abs(ens_py.acc - ens_cy.acc).max())
        print(
            f"{name:<10} {dim:>4} {t_py:>9.3f}s {t_cy:>9.3f}s {t_py / t_cy:>7.1f}x"
            f"  max|dx|={dx:.1e} max|dS|={dacc:.1e}"
        )


if __name__ == "__main__":
    main()
