"""Timing comparison of the two kernel backends.

Microbenchmarks call both implementations directly on flat arrays of a few
sizes; the end-to-end section times a full coupled invert + denoise round
trip in a subprocess per backend (selection happens at import time, so each
backend needs its own interpreter).

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --sizes 512,8192 --repeats 2000
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from edict._kernels import available_backends, load_backend

KERNELS = ("axpby", "inv_axpby", "mix", "unmix", "gauss_mixture_eps")

_ROUNDTRIP_SNIPPET = """
import time
import edict
from edict.coupled import edict_denoise, edict_invert
from edict.fixtures import FIXTURE_SHAPE, fixture_schedule, mixture_model
from edict.tensor_io import SeededRng, gaussian_draw

schedule = fixture_schedule()
model = mixture_model(schedule)
x0 = gaussian_draw(SeededRng(1), FIXTURE_SHAPE)
# warm-up pass keeps one-time costs out of the measurement
edict_denoise(*edict_invert(x0, schedule, model, p=0.93)[:1], schedule, model, p=0.93)
best = None
for _ in range({repeats}):
    t0 = time.perf_counter_ns()
    up, _ = edict_invert(x0, schedule, model, p=0.93)
    edict_denoise(up, schedule, model, p=0.93)
    dt = time.perf_counter_ns() - t0
    best = dt if best is None else min(best, dt)
print(edict.backend_name, best)
"""


def _median_ns(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(*args)
        times.append(time.perf_counter_ns() - t0)
    return statistics.median(times)


def _kernel_args(name, n, rng):
    x = rng.standard_normal(n)
    e = rng.standard_normal(n)
    if name in ("axpby", "inv_axpby"):
        return (1.05, x, -0.12, e)
    if name in ("mix", "unmix"):
        return (0.93, x, e)
    means = rng.standard_normal((6, n))
    variances = np.full(6, 1.0)
    logw = np.full(6, -np.log(6.0))
    return (x, means, variances, logw, 0.5, -1)


def bench_kernels(sizes, repeats):
    backends = {name: load_backend(name) for name in available_backends()}
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'n':>8}" + "".join(f"{b:>14}" for b in backends))
    for name in KERNELS:
        for n in sizes:
            args = _kernel_args(name, n, rng)
            cells = []
            for module in backends.values():
                fn = getattr(module, name)
                fn(*args)  # warm-up
                cells.append(_median_ns(fn, args, repeats))
            row = f"{name:<18}{n:>8}"
            row += "".join(f"{cell / 1000:>12.2f}us" for cell in cells)
            print(row)


def bench_roundtrip(repeats):
    print(f"\nfull 50-step invert+denoise round trip (best of {repeats}):")
    for name in available_backends():
        env = dict(os.environ, EDICT_BACKEND=name)
        proc = subprocess.run(
            [sys.executable, "-c", _ROUNDTRIP_SNIPPET.format(repeats=repeats)],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            print(f"  {name}: failed\n{proc.stderr}")
            continue
        reported, best_ns = proc.stdout.split()
        print(f"  {reported:<10} {int(best_ns) / 1e6:9.2f} ms")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="512,8192",
                        help="comma-separated flat array sizes")
    parser.add_argument("--repeats", type=int, default=300,
                        help="timing repetitions per cell")
    parser.add_argument("--roundtrip-repeats", type=int, default=5)
    args = parser.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    print(f"backends available: {', '.join(available_backends())}\n")
    bench_kernels(sizes, args.repeats)
    bench_roundtrip(args.roundtrip_repeats)


if __name__ == "__main__":
    main()
