"""Compare the compiled and pure-numpy kernel backends.

Times im2col, col2im and max pooling on feature-map shapes from the desk-scale
backbone, plus one full forward/backward pass of a cross-view model, and checks
that both backends agree before reporting. Usage::

    python benchmarks/bench_kernels.py [--repeats 20] [--batch 32]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from crossview import kernels
from crossview.models import ModelSpec, build

# (channels, size, kernel, stride, padding) seen in a width-1/8 backbone on 32x32 inputs
CONV_SHAPES = [(1, 32, 7, 2, 3), (8, 8, 3, 1, 1), (16, 4, 3, 1, 1), (32, 2, 3, 1, 1)]
POOL_SHAPE = (8, 16, 3, 2, 1)


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(batch: int, rng: np.random.Generator):
    for c, s, k, st, p in CONV_SHAPES:
        x = rng.standard_normal((batch, c, s, s)).astype(np.float32)
        cols = kernels.im2col(x, k, k, st, st, p, p)
        yield f"im2col  c={c:<2} {s}x{s} k={k}", lambda x=x, k=k, st=st, p=p: kernels.im2col(x, k, k, st, st, p, p)
        yield f"col2im  c={c:<2} {s}x{s} k={k}", lambda cols=cols, c=c, s=s, k=k, st=st, p=p: kernels.col2im(cols, c, s, s, k, k, st, st, p, p)
    c, s, k, st, p = POOL_SHAPE
    x = rng.standard_normal((batch, c, s, s)).astype(np.float32)
    out, arg = kernels.maxpool_forward(x, k, st, p)
    yield f"maxpool fwd c={c} {s}x{s}", lambda: kernels.maxpool_forward(x, k, st, p)
    yield f"maxpool bwd c={c} {s}x{s}", lambda: kernels.maxpool_backward(out, arg, s, s, k, st, p)


def model_step(batch: int, rng: np.random.Generator):
    model = build(ModelSpec(variant="cross-view-token"), 0)
    views = rng.standard_normal((batch, 2, 1, 32, 32)).astype(np.float32)

    def step():
        model.zero_grad()
        model(views, training=True, rng=np.random.default_rng(0)).sum().backward()

    return step


def _first(result):
    return result[0] if isinstance(result, tuple) else result


def check_parity(batch: int) -> None:
    results = {}
    for backend in ("compiled", "python"):
        with kernels.use_backend(backend):
            results[backend] = [_first(fn()) for _, fn in kernel_cases(batch, np.random.default_rng(0))]
    for a, b in zip(results["compiled"], results["python"]):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    check_parity(args.batch)

    print(f"batch {args.batch}, best of {args.repeats} (milliseconds)")
    print(f"{'case':<28} {'python':>9} {'compiled':>9} {'speedup':>8}")
    timings: dict[str, dict[str, float]] = {name: {} for name, _ in kernel_cases(args.batch, np.random.default_rng(0))}
    timings["model fwd+bwd step"] = {}
    for backend in ("python", "compiled"):
        with kernels.use_backend(backend):
            for name, fn in kernel_cases(args.batch, np.random.default_rng(0)):
                timings[name][backend] = best_of(fn, args.repeats)
            timings["model fwd+bwd step"][backend] = best_of(model_step(args.batch, np.random.default_rng(0)), max(3, args.repeats // 4))
    for name, t in timings.items():
        print(f"{name:<28} {t['python'] * 1e3:>9.3f} {t['compiled'] * 1e3:>9.3f} {t['python'] / t['compiled']:>7.2f}x")


if __name__ == "__main__":
    main()
