"""Compiled vs pure-Python rasterizer: forward and backward timings on synthetic sphere scenes.

    python benchmarks/bench_backends.py [--sizes 1000 5000] [--res 256] [--repeats 3]

Prints one JSON line per (surfels, pass) with best-of-N milliseconds for each backend,
the speedup and the largest absolute difference between the two results.
"""

import argparse
import json
import time

import numpy as np

from mstsplat import synth
from mstsplat.raster import available_backends, render, render_backward


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000])
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    if "compiled" not in available_backends():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    cam = synth.orbit_cameras(1, 3.0, args.res)[0]
    rng = np.random.default_rng(0)
    for n in args.sizes:
        scene = synth.bench_scene(n, seed=n)
        dl = rng.normal(size=(args.res, args.res, 3))
        passes = {
            "forward": lambda b: render(scene, cam, backend=b).color,
            "backward": lambda b: render_backward(scene, cam, dl, backend=b)[0],
        }
        for name, fn in passes.items():
            tc, oc = best_of(lambda: fn("compiled"), args.repeats)
            tp, op = best_of(lambda: fn("python"), args.repeats)
            print(json.dumps({"surfels": n, "res": args.res, "pass": name,
                              "compiled_ms": round(tc * 1e3, 2), "python_ms": round(tp * 1e3, 2),
                              "speedup": round(tp / tc, 1), "max_abs_diff": float(np.abs(oc - op).max())}))


if __name__ == "__main__":
    main()
