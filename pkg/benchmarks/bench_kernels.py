"""Time the compiled and the vectorised photon kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --n 200000 --repeat 5
"""

import argparse
import time

import numpy as np

from hdqkd import _kernels, channel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def inputs_slice(inputs, n):
    return channel.TrialInputs(**{k: v[:n] for k, v in vars(inputs).items()})


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--preset", default="paper_l1")
    args = ap.parse_args()

    model = channel.load_preset(args.preset).imperfections
    rng = np.random.default_rng(0)
    modes = rng.integers(0, 8, args.n)
    analysers = rng.integers(0, 2, args.n)
    inputs = channel.draw_trial_inputs(rng, args.n, model)

    kernels = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    results = {}
    for k in kernels:
        channel.run_trials(modes[:10], analysers[:10], inputs_slice(inputs, 10), model, kernel=k)
        results[k] = best_of(lambda: channel.run_trials(modes, analysers, inputs, model, kernel=k), args.repeat)

    base = results["numpy"][0]
    print(f"{args.n} trials, preset {args.preset}, best of {args.repeat}")
    for k, (t, out) in results.items():
        same = np.array_equal(out, results["numpy"][1])
        print(f"{k:>6}: {t * 1e3:8.1f} ms  {args.n / t / 1e6:6.2f} Mtrials/s  "
              f"x{base / t:5.1f}  identical={same}")


if __name__ == "__main__":
    main()
