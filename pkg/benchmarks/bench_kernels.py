"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--skip-e2e]

Kernel shapes match a full-size game: 22 questions, 10K candidates, 17
answer symbols, 16 digits. The end-to-end section runs the same self-play
config twice in subprocesses, once per backend (selected with AQM_NUMBA),
and checks the CSVs agree.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from aqm import _kernels as K


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, also triggers jit compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    keys = rng.integers(0, 17, size=(22, 10_000)).astype(np.int64)
    probs = rng.dirichlet(np.ones(10_000))
    masses = K.bucket_masses_numpy(keys, probs, 17)
    tables = rng.dirichlet(np.ones(17), size=(22, 17))
    ps = rng.uniform(0, 1, size=16)
    return [
        ("bucket_masses 22x10000", K.bucket_masses_numpy, K.bucket_masses_numba, (keys, probs, 17)),
        ("tabular_gains 22x17x17", K.tabular_gains_numpy, K.tabular_gains_numba, (masses, tables)),
        ("poisson_binomial n=16", K.poisson_binomial_numpy, K.poisson_binomial_numba, (ps,)),
    ]


def end_to_end(games):
    code = (
        "import sys, time\n"
        "from aqm.harness import ExperimentConfig, run_experiment, table_csv\n"
        "from aqm import _kernels\n"
        f"cfg = ExperimentConfig(lam=0.9, regime='trueA', n_games={games})\n"
        "t = time.perf_counter(); tab = run_experiment(cfg)\n"
        "sys.stderr.write(f'{_kernels.backend()} {time.perf_counter() - t:.2f}\\n')\n"
        "sys.stdout.write(table_csv(tab))\n"
    )
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, AQM_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stderr.split()[-2:]
        out[backend] = (float(secs), res.stdout)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--games", type=int, default=300)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy us':>12}{'numba us':>12}{'speedup':>10}  agree")
    for name, f_np, f_nb, fargs in kernel_cases(rng):
        t_np = best_of(f_np, fargs, args.repeat)
        t_nb = best_of(f_nb, fargs, args.repeat)
        agree = np.allclose(f_np(*fargs), f_nb(*fargs), rtol=1e-10, atol=1e-13)
        print(f"{name:<26}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x  {agree}")

    if not args.skip_e2e:
        res = end_to_end(args.games)
        (t_nb, csv_nb), (t_np, csv_np) = res["numba"], res["numpy"]
        print(f"\nself-play, 10K candidates, {args.games} games, T=6 (includes setup)")
        print(f"  numba {t_nb:.2f}s   numpy {t_np:.2f}s   speedup {t_np / t_nb:.1f}x   "
              f"identical csv: {csv_nb == csv_np}")


if __name__ == "__main__":
    main()
