"""Compare the compiled and numpy rasterizer backends.

    python3 benchmarks/bench_raster.py [--sizes 100,300,1000,3000] [--repeats 5]

Prints one key=value line per (backend, size, pass) plus the speedup, and
checks that both backends produce the same image.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from splatavatar.render import Camera, GaussianCloud
from splatavatar.render.backend import available_backends, use_backend
from splatavatar.render.splat import render, render_backward


def random_cloud(n: int, seed: int = 0) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.08, 0.08, (n, 3))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(pos, q, rng.uniform(0.002, 0.008, (n, 3)), rng.uniform(0.3, 0.95, (n, 1)),
                         rng.uniform(0, 1, (n, 3)))


def timed(fn, repeats: int) -> float:
    fn()  # warm-up
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return float(np.median(best))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="100,300,1000,3000")
    ap.add_argument("--image", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    cam = Camera.orbit(0.3, 0.1, 0.55, 2.2 * args.image, args.image, args.image)
    backends = available_backends()
    if "compiled" not in backends:
        print("warning=compiled_backend_missing hint=pip_install_-e_.")
    for n in [int(s) for s in args.sizes.split(",")]:
        cloud = random_cloud(n)
        grad = (np.random.default_rng(1).standard_normal((args.image, args.image, 3)), None)
        times = {}
        images = {}
        for b in backends:
            with use_backend(b):
                images[b] = render(cloud, cam).rgb.data
                fwd = timed(lambda: render(cloud, cam), args.repeats)
                bwd = timed(lambda: render_backward(cloud, cam, grad), args.repeats)
            times[b] = (fwd, bwd)
            print(f"backend={b} n={n} forward_ms={fwd * 1e3:.2f} backward_ms={bwd * 1e3:.2f}")
        if len(backends) == 2:
            diff = float(np.abs(images["compiled"] - images["python"]).max())
            sf = times["python"][0] / times["compiled"][0]
            sb = times["python"][1] / times["compiled"][1]
            print(f"n={n} speedup_forward={sf:.2f} speedup_backward={sb:.2f} max_abs_diff={diff:.2e}")


if __name__ == "__main__":
    main()
