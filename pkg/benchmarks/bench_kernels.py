"""Time the compiled geometry kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Every workload is checked for agreement between the two backends before it
is timed, so a fast but wrong extension shows up as a failure, not a win.
"""
import argparse
import math
import sys
import timeit

import numpy as np

from kwspot.kernels import _fallback, compiled


def _rect(cx, cy, w, h, t):
    c, s = math.cos(t), math.sin(t)
    u, v = np.array([c, s]) * w / 2, np.array([-s, c]) * h / 2
    ctr = np.array([cx, cy])
    return np.stack([ctr - u - v, ctr + u - v, ctr + u + v, ctr - u + v])


def workloads(rng):
    quad = _rect(14, 14, 22, 8, 0.5)
    mask = rng.uniform(size=(28, 28)) < 0.45
    a, b = _rect(10, 10, 12, 5, 0.3), _rect(11, 9, 10, 7, 1.1)
    corners = np.stack([_rect(*rng.uniform(0, 60, 2), *rng.uniform(5, 20, 2), rng.uniform(-0.7, 2.3))
                        for _ in range(200)])
    scores = rng.uniform(size=200)
    pts = rng.normal(size=(500, 2)) * [20, 5]
    return {
        "rasterize_polygon 28x28": (lambda k: k.rasterize_polygon(quad, 28, 28), np.array_equal),
        "label_components 28x28": (lambda k: k.label_components(mask), lambda x, y: np.array_equal(x[0], y[0])),
        "convex_intersection_area": (lambda k: k.convex_intersection_area(a, b), np.isclose),
        "rotated_nms 200 boxes": (lambda k: list(k.rotated_nms(corners, scores, 0.5)), lambda x, y: x == y),
        "convex_hull 500 pts": (lambda k: k.convex_hull(pts), np.allclose),
        "min_area_rect 500 pts": (lambda k: k.min_area_rect(pts), np.allclose),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats per kernel (best is reported)")
    args = ap.parse_args(argv)
    fast = compiled()
    if fast is None:
        print("compiled kernels not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'python':>12} {'cython':>12} {'speedup':>8}")
    ok = True
    for name, (fn, same) in workloads(rng).items():
        if not same(fn(_fallback), fn(fast)):
            print(f"{name:<28} MISMATCH between backends")
            ok = False
            continue
        times = {}
        for label, mod in (("python", _fallback), ("cython", fast)):
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times[label] = min(t.repeat(args.repeat, n)) / n
        print(f"{name:<28} {times['python'] * 1e6:>10.1f}us {times['cython'] * 1e6:>10.1f}us "
              f"{times['python'] / times['cython']:>7.1f}x")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
