"""Time the compiled kernels against the numpy fallback on desk-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per call and the speedup. Both backends are
checked for identical outputs before timing.
"""
import argparse
import timeit

import numpy as np

from pcdiff import _fallback
from pcdiff.geometry import look_at
from pcdiff.metrics import NnIndex

try:
    from pcdiff import _kernels
except ImportError:
    _kernels = None


def splat_args(n, radius_ndc, size=137, seed=0):
    rng = np.random.default_rng(seed)
    cam = look_at((1.2, -1.1, 0.7), fx=100, fy=100, cx=(size - 1) / 2, cy=(size - 1) / 2,
                  width=size, height=size)
    u, v, d, ok = cam.project(rng.uniform(-0.5, 0.5, (n, 3)))
    u, v, d = (np.ascontiguousarray(a) for a in (u, v, d))
    return u, v, d, ok.astype(np.uint8), radius_ndc * size / 2, size, size


def edt_args(density, size=137, seed=1):
    m = np.random.default_rng(seed).random((size, size)) < density
    m[size // 2, size // 2] = True
    return (m.astype(np.uint8),)


def grid_args(n, m, seed=2, cell=None):
    rng = np.random.default_rng(seed)
    idx = NnIndex(rng.uniform(-0.5, 0.5, (n, 3)), cell)
    q = rng.uniform(-0.5, 0.5, (m, 3))
    return idx, q


def cases():
    out = [
        ("splat 512 pts, radius 0.06", "splat_zbuffer", splat_args(512, 0.06)),
        ("splat 16384 pts, radius 0.015", "splat_zbuffer", splat_args(16384, 0.015)),
        ("nearest mask pixel, 2% set", "nearest_mask_pixel", edt_args(0.02)),
        ("nearest mask pixel, 30% set", "nearest_mask_pixel", edt_args(0.3)),
    ]
    for n, m in ((512, 512), (4096, 4096)):
        idx, q = grid_args(n, m)
        out.append((f"grid nearest {n} x {m}", "grid_nearest",
                    (idx.points, idx.ids, idx.cell_start, idx.origin, idx.cell_size, idx.dims, q)))
    idx, q = grid_args(4096, 4096, cell=0.01)
    out.append(("grid within 4096 x 4096, tau 0.01", "grid_within",
                (idx.points, idx.cell_start, idx.origin, idx.cell_size, idx.dims, q, 0.01)))
    return out


def best_time(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05 and number < 1000:
        number *= 4
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'case':<36}{'compiled':>12}{'python':>12}{'speedup':>10}")
    for name, fn, fargs in cases():
        a = getattr(_kernels, fn)(*fargs)
        b = getattr(_fallback, fn)(*fargs)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        assert all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b)), name
        tc = best_time(getattr(_kernels, fn), fargs, args.repeat)
        tp = best_time(getattr(_fallback, fn), fargs, args.repeat)
        print(f"{name:<36}{tc * 1e3:10.3f}ms{tp * 1e3:10.3f}ms{tp / tc:9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
