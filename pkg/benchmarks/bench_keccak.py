"""Keccak-256: numba kernel vs the pure-numpy fallback.

Two measurements:

* kernel: ``absorb_numba`` and ``absorb_numpy`` on the same pre-padded lanes,
  in this process;
* end to end: ``tct.words.keccak256`` in two child processes, one started with
  ``TCT_DISABLE_NUMBA=1``, so the environment switch itself is exercised.

    python benchmarks/bench_keccak.py [--sizes 32 64 136 1024 65536] [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from tct import kernels

CHILD = """
import json, os, sys, timeit
from tct import kernels
from tct.words import keccak256
sizes, repeat = json.loads(sys.argv[1]), int(sys.argv[2])
out = {"numba": kernels.USING_NUMBA}
for n in sizes:
    data = os.urandom(n)
    timer = timeit.Timer(lambda: keccak256(data))
    number, _ = timer.autorange()
    out[n] = min(timer.repeat(repeat=repeat, number=number)) / number
print(json.dumps(out))
"""


def per_call(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def kernel_table(sizes: list[int], repeat: int) -> list[tuple[int, float, float]]:
    if not kernels.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")
    rows = []
    for n in sizes:
        lanes = kernels.pad_keccak(os.urandom(n))
        a, b = kernels.absorb_numba(lanes), kernels.absorb_numpy(lanes)
        if not np.array_equal(a, b):
            sys.exit(f"kernels disagree at {n} bytes")
        rows.append((n, per_call(lambda: kernels.absorb_numba(lanes), repeat),
                     per_call(lambda: kernels.absorb_numpy(lanes), repeat)))
    return rows


def end_to_end(sizes: list[int], repeat: int, disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("TCT_DISABLE_NUMBA", None)
    if disable:
        env["TCT_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", CHILD, json.dumps(sizes), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 136, 1024, 65536])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print("absorb kernel (pre-padded input)")
    print(f"{'bytes':>8} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for n, t_jit, t_np in kernel_table(args.sizes, args.repeat):
        print(f"{n:>8} {t_jit * 1e6:>10.2f} {t_np * 1e6:>10.1f} {t_np / t_jit:>7.0f}x")

    fast = end_to_end(args.sizes, args.repeat, disable=False)
    slow = end_to_end(args.sizes, args.repeat, disable=True)
    if not fast["numba"] or slow["numba"]:
        sys.exit("TCT_DISABLE_NUMBA did not select the expected backend")
    print("\nkeccak256 end to end (TCT_DISABLE_NUMBA unset vs =1)")
    print(f"{'bytes':>8} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for n in args.sizes:
        t_jit, t_np = fast[str(n)], slow[str(n)]
        print(f"{n:>8} {t_jit * 1e6:>10.2f} {t_np * 1e6:>10.1f} {t_np / t_jit:>7.0f}x")


if __name__ == "__main__":
    main()
