"""Benchmark the compiled kernel backend against the numpy fallback.

Times each kernel on representative shapes, then an end-to-end reward-model
regression step under whichever backend is active. Invoke twice to compare
end-to-end numbers:

    python benchmarks/bench_kernels.py
    RDECOMP_PURE_PYTHON=1 python benchmarks/bench_kernels.py
"""

import os
import time

import numpy as np

from rdecomp._kernels import _py_kernels

try:
    from rdecomp._kernels import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, *args, repeat=2000):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6  # microseconds


def bench_kernels():
    rng = np.random.default_rng(0)
    t_len, d = 16, 32
    x_small = rng.normal(size=(t_len, d))
    scores = rng.normal(size=(t_len, t_len))
    probs = _py_kernels.softmax_rows(scores, True)
    grad = rng.normal(size=(t_len, t_len))
    gain, bias = rng.normal(size=d), rng.normal(size=d)
    y, xhat, inv_std = _py_kernels.layer_norm_rows(x_small, gain, bias, 1e-5)
    g2 = rng.normal(size=(t_len, d))
    rewards, values = rng.normal(size=64), rng.normal(size=65)
    a_small, b_small = rng.normal(size=(16, 38)), rng.normal(size=(38, 32))
    a_big, b_big = rng.normal(size=(256, 64)), rng.normal(size=(64, 64))

    cases = [
        ("matmul 16x38x32", "matmul", (a_small, b_small)),
        ("matmul 256x64x64", "matmul", (a_big, b_big)),
        ("softmax_rows causal 16x16", "softmax_rows", (scores, True)),
        ("softmax_rows_vjp 16x16", "softmax_rows_vjp", (probs, grad)),
        ("layer_norm_rows 16x32", "layer_norm_rows", (x_small, gain, bias, 1e-5)),
        ("layer_norm_rows_vjp 16x32", "layer_norm_rows_vjp", (xhat, inv_std, gain, g2)),
        ("tanh_vjp 16x32", "tanh_vjp", (np.tanh(x_small), g2)),
        ("sigmoid_vjp 16x32", "sigmoid_vjp", (1 / (1 + np.exp(-x_small)), g2)),
        ("gae T=64", "gae", (rewards, values, 0.99, 0.95)),
    ]
    backends = [("numpy", _py_kernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))

    width = max(len(name) for name, _, _ in cases)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n, _ in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, fn_name, args in cases:
        times = [timeit(getattr(mod, fn_name), *args) for _, mod in backends]
        row = f"{name:<{width}}  " + "  ".join(f"{t:>8.2f}us" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>7.2f}x"
        print(row)


def bench_regression_step():
    from rdecomp import decomposer, nn
    from rdecomp._kernels import BACKEND
    from rdecomp.trajectory import Trajectory

    rng = np.random.default_rng(1)
    batch = [
        Trajectory(
            states=rng.normal(size=(16, 8)),
            actions=rng.normal(size=(16, 2)),
            episodic_return=float(rng.normal()),
        )
        for _ in range(16)
    ]
    model = decomposer.make_predictor("attention", 10, np.random.default_rng(2), scale="desk")
    iset = decomposer.IntervalSet("prefixes")
    opt = nn.AdamOptimizer(1e-3)
    decomposer.regression_step(model, batch, iset, optimizer=opt)  # warm up
    t0 = time.perf_counter()
    n = 20
    for _ in range(n):
        decomposer.regression_step(model, batch, iset, optimizer=opt)
    per_step = (time.perf_counter() - t0) / n * 1e3
    print(f"\nregression step (16 trajectories, T=16, attention desk): "
          f"{per_step:.1f} ms/step [{BACKEND} backend]")


if __name__ == "__main__":
    if os.environ.get("RDECOMP_PURE_PYTHON") == "1":
        print("RDECOMP_PURE_PYTHON=1: package will use the numpy backend\n")
    bench_kernels()
    bench_regression_step()
