"""Time the compiled (numba) kernels against the pure-NumPy fallback.

Usage:
    python benchmarks/bench_kernels.py [--repeat 3] [--trials 20000]

Both backends are imported directly, so the ``SPECSHARD_DISABLE_NUMBA`` flag
does not matter here. Compilation happens in a warm-up call that is not timed.
Draw kernels are also checked for identical output on the same uniforms.
"""

import argparse
import time

import numpy as np

from specshard.designs import make_design, make_numpy_style_design
from specshard.kernels import _numba, _numpy
from specshard.plans import plan_unbiased


def best_time(fn, repeat):
    fn()  # warm-up (JIT compilation for numba)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(trials, rng):
    out = []
    for rows, cols in [(32, 32), (128, 64), (256, 256)]:
        a = rng.standard_normal((rows, cols))
        out.append((f"jacobi_svd {rows}x{cols}", "jacobi_svd", (a, 1e-15, 80), False))

    N, n = 64, 13
    lam = np.sort(rng.exponential(size=N))[::-1]
    pi = plan_unbiased(lam, n).probabilities
    cps = make_design("cps", pi, n)
    k = cps.free_n
    out.append((f"cps_draws N={cps.free.size} n={k} T={trials}", "cps_draws",
                (cps.params["table"], k, rng.random((trials, cps.free.size))), True))

    brewer = make_design("brewer", cps.target, n)
    out.append((f"brewer_draws N={brewer.free.size} n={k} T={trials}", "brewer_draws",
                (brewer.params["pi"], brewer.free_n, rng.random((trials, brewer.free_n))), True))

    weights = np.sort(rng.exponential(size=N))[::-1] ** 4
    style = make_numpy_style_design(weights, n)
    out.append((f"numpy_style_draws N={N} n={n} T={trials // 4}", "numpy_style_draws",
                (style.params["weights"], n, rng.random((trials // 4, n, n))), True))
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--trials", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<40} {'numba [ms]':>11} {'numpy [ms]':>11} {'speed-up':>9}  match")
    for label, name, inputs, exact in cases(args.trials, rng):
        fast, slow = getattr(_numba, name), getattr(_numpy, name)
        t_fast = best_time(lambda: fast(*[x.copy() if isinstance(x, np.ndarray) else x
                                          for x in inputs]), args.repeat)
        t_slow = best_time(lambda: slow(*[x.copy() if isinstance(x, np.ndarray) else x
                                          for x in inputs]), args.repeat)
        a, b = fast(*inputs), slow(*inputs)
        if exact:
            match = "yes" if np.array_equal(a, b) else "NO"
        else:
            sa = np.sort(np.linalg.norm(a[0], axis=0))
            sb = np.sort(np.linalg.norm(b[0], axis=0))
            match = f"{np.abs(sa - sb).max() / sa.max():.0e}"
        print(f"{label:<40} {1e3 * t_fast:11.2f} {1e3 * t_slow:11.2f} {t_slow / t_fast:9.1f}  {match}")


if __name__ == "__main__":
    main()
