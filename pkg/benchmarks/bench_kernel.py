"""Compare the compiled emit loop with the pure-Python fallback.

Two measurements:
  slice  one 1 ms producer slice, called repeatedly (uniform and mixed record sizes)
  run    a whole rq1 point in a fresh interpreter, with and without AUDIT_ARENA_PURE

    python benchmarks/bench_kernel.py [--repeat N] [--skip-run]
"""

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from audit_arena import kernel

RUN_SNIPPET = (
    "import time\n"
    "from audit_arena import kernel\n"
    "from audit_arena.experiments import rq1_point\n"
    "t = time.perf_counter()\n"
    "rq1_point('sysdig', {rate}, {duration})\n"
    "print(kernel.COMPILED, time.perf_counter() - t)\n"
)


def slice_args(sizes):
    # 1 ms budget, 9 us of app work per 1 us capture, a buffer far from full
    arr = np.asarray(sizes, dtype=np.int64)
    out = np.zeros(1_000, dtype=np.int64)
    return (1_000_000, 0, 9_000, 1_000, 9_000, arr, 0, -1, False, 0, 1 << 40, 1 << 40,
            0, 0, 0, 0, False, out)


def bench_slice(fn, sizes, repeat):
    args = slice_args(sizes)
    per_call = min(timeit.repeat(lambda: fn(*args), number=200, repeat=repeat)) / 200
    return per_call * 1e6


def bench_run(pure, rate, duration):
    env = dict(os.environ)
    env.pop("AUDIT_ARENA_PURE", None)
    if pure:
        env["AUDIT_ARENA_PURE"] = "1"
    code = RUN_SNIPPET.format(rate=rate, duration=duration)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    compiled, secs = out.stdout.split()
    return compiled == "True", float(secs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rate", type=float, default=20_000.0)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--skip-run", action="store_true")
    args = ap.parse_args(argv)

    impls = [("python", kernel.py_emit_slice)]
    if kernel.c_emit_slice is not None:
        impls.insert(0, ("compiled", kernel.c_emit_slice))
    else:
        print("compiled kernel not built; timing the fallback only")

    print(f"{'case':<14}{'impl':<10}{'us/slice':>10}")
    for label, sizes in (("uniform", [126]), ("mixed", [44, 126, 250, 80])):
        timings = {}
        for name, fn in impls:
            timings[name] = bench_slice(fn, sizes, args.repeat)
            print(f"{label:<14}{name:<10}{timings[name]:>10.2f}")
        if len(timings) == 2:
            print(f"{label:<14}{'speedup':<10}{timings['python'] / timings['compiled']:>9.1f}x")

    if args.skip_run:
        return 0
    print(f"\nrq1 point, sysdig, {args.rate:g} ev/s for {args.duration:g} simulated s")
    results = {}
    for pure in (False, True):
        compiled, secs = bench_run(pure, args.rate, args.duration)
        name = "compiled" if compiled else "python"
        results[name] = secs
        print(f"  {name:<10}{secs:>8.2f} s wall")
    if len(results) == 2:
        print(f"  speedup   {results['python'] / results['compiled']:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
