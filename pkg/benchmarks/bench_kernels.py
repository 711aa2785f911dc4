"""Compiled vs pure-Python kernels on scan-shaped inputs.

    python benchmarks/bench_kernels.py [--rows N] [--repeat K]

Prints one line per kernel with the best-of-K time for each backend and the
speedup. Exits 1 if the two backends disagree on any output.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from skyshim.kernels import available_backends


def utf8_inputs(rows: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    lens = rng.integers(3, 15, rows)
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    data = rng.integers(97, 123, int(offsets[-1]), dtype=np.uint8)
    mask = rng.random(rows) >= 0.05
    indices = np.sort(rng.choice(rows, rows // 10, replace=False)).astype(np.int64)
    return offsets, data, mask, indices


def cases(rows: int):
    offsets, data, mask, indices = utf8_inputs(rows)
    blob = data.tobytes()[: 1 << 16]
    return {
        "fnv1a64(64KiB)": lambda k: k.fnv1a64(blob),
        "mix64 x10k": lambda k: [k.mix64(i) for i in range(10_000)],
        "utf8_compare LT": lambda k: k.utf8_compare(offsets, data, b"mmm", 2),
        "utf8_minmax": lambda k: k.utf8_minmax(offsets, data, mask),
        "utf8_take 10%": lambda k: k.utf8_take(offsets, data, indices),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available", file=sys.stderr)
    ok = True
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(args.rows).items():
        outs, times = {}, {}
        for name, k in backends.items():
            outs[name] = fn(k)
            times[name] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        if "compiled" in outs and not _same(outs["python"], outs["compiled"]):
            ok = False
            label += " MISMATCH"
        speed = f"{times['python'] / times['compiled']:.1f}x" if "compiled" in times else "-"
        print(f"{label:<18}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in backends) + f"{speed:>10}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
