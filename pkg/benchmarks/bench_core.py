"""Time the compiled core against the numpy fallback on estimator-sized inputs.

    python benchmarks/bench_core.py [--patch 128] [--repeat 5] [--json out.json]

Each operation is checked for agreement between backends before timing.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from rawforge import backend
from rawforge.image import CfaPattern


def make_inputs(patch: int, scale: int, support: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    hr = scale * patch + support - 1
    x_hr = rng.random((3, hr, hr))
    kernels = rng.random((3, support, support))
    kernels /= kernels.sum(axis=(1, 2), keepdims=True)
    g = rng.standard_normal((patch, patch))
    pattern = rng.random((1, hr + 16, hr + 16))
    th = 0.01
    G = np.array([[np.cos(th), -np.sin(th), 8.3], [np.sin(th), np.cos(th), 7.6], [1e-6, -2e-6, 1.0]])
    up = rng.standard_normal((1, hr, hr))
    return dict(x_hr=x_hr, kernels=kernels, g=g, pattern=pattern, G=G, up=up, hr=hr,
                cmap=CfaPattern("RGGB").channel_map(), patch=patch, scale=scale)


def operations(d):
    s, n, cmap = d["scale"], d["patch"], d["cmap"]
    return {
        "render_lr": lambda impl: backend.render_lr(d["x_hr"], d["kernels"], s, 0, cmap, n, n, impl=impl),
        "render_lr_adjoint": lambda impl: backend.render_lr_adjoint(d["x_hr"], d["kernels"], d["g"], s, 0, cmap,
                                                                    True, impl=impl),
        "warp_bilinear": lambda impl: backend.warp_bilinear(d["pattern"], d["G"], d["hr"], d["hr"], impl=impl),
        "warp_bilinear_vjp": lambda impl: backend.warp_bilinear_vjp(d["pattern"], d["G"], d["up"], impl=impl),
    }


def _flat(result):
    if isinstance(result, tuple):
        return np.concatenate([np.asarray(r, dtype=np.float64).ravel() for r in result])
    return np.asarray(result, dtype=np.float64).ravel()


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patch", type=int, default=128, help="LR patch side")
    ap.add_argument("--scale", type=int, default=4)
    ap.add_argument("--support", type=int, default=21)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    impls = backend.implementations()
    d = make_inputs(args.patch, args.scale, args.support)
    rows = []
    print(f"patch {args.patch}, scale {args.scale}, support {args.support}; backends: {', '.join(impls)}")
    print(f"{'operation':<20}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}{'max diff':>11}")
    for name, op in operations(d).items():
        outs = {k: _flat(op(impl)) for k, impl in impls.items()}
        diff = max((float(np.max(np.abs(o - outs["python"]))) for o in outs.values()), default=0.0)
        times = {k: best_time(lambda impl=impl: op(impl), args.repeat) for k, impl in impls.items()}
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        rows.append({"operation": name, "seconds": times, "speedup": speedup, "max_abs_diff": diff})
        print(f"{name:<20}" + "".join(f"{times[k] * 1e3:>10.1f}ms" for k in impls) + f"{speedup:>9.1f}x{diff:>11.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"config": vars(args), "results": rows}, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
