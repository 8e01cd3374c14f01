"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from smartattack import kernels
from smartattack.skeleton import standard_skeleton


def cases(rng):
    sk = standard_skeleton()
    child = np.array([c for c, _ in sk.bones], dtype=np.intp)
    parent = np.array([p for _, p in sk.bones], dtype=np.intp)
    x = rng.normal(size=(32, 48, 75))
    h = rng.normal(size=(32, 48, 64))
    cols = rng.normal(size=(32, 48, 5 * 64))
    flat = x.reshape(-1, 75)
    lengths = np.ascontiguousarray(kernels._kernels_py.bone_lengths(flat, child, parent))
    g = rng.normal(size=lengths.shape)
    return {
        "im2col k=5": lambda m: m.im2col(h, 5, 2),
        "col2im k=5": lambda m: m.col2im(cols, 48, 64, 5, 2),
        "bone_lengths": lambda m: m.bone_lengths(flat, child, parent),
        "bone_lengths_vjp": lambda m: m.bone_lengths_vjp(flat, lengths, g, child, parent),
        "forward_diff n=4": lambda m: m.forward_diff(x, 4),
        "forward_diff_adjoint n=4": lambda m: m.forward_diff_adjoint(x[:, 4:].copy(), 4),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    found = kernels.backends()
    names = sorted(found)
    print(f"{'kernel':<26}" + "".join(f"{n + ' (us)':>16}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for n in names:
            mod = found[n]
            fn(mod)
            times[n] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat
        row = f"{label:<26}" + "".join(f"{times[n] * 1e6:>16.1f}" for n in names)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
