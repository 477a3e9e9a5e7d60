"""Benchmark the compiled attention kernel against the numpy fallback.

Times fused_attention on the default token geometry (33 tokens, 4 heads,
8-dim heads) plus a couple of larger shapes, and a full end-to-end
explanation pass per backend. Run from the repo root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from staa.attribution import EnhancementParams, explain
from staa.kernels import _numpy
from staa.model import ModelConfig, init_model
from staa.videoio import ClipSpec, generate_clip

try:
    from staa.kernels import _core
except ImportError:
    _core = None


def bench(fn, args, repeats=200):
    fn(*args)  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_args(tokens, heads, head_dim, seed=0):
    rng = np.random.default_rng(seed)
    d = heads * head_dim
    x = rng.standard_normal((tokens, d))
    w = rng.standard_normal((3, heads, head_dim, d)) * 0.1
    key_scale = np.ones(tokens)
    return x, w[0], w[1], w[2], key_scale, 1.0 / np.sqrt(head_dim)


def main():
    shapes = [(33, 4, 8), (65, 4, 16), (129, 8, 16)]
    print(f"{'tokens x heads x head_dim':<28} {'numpy':>12} {'compiled':>12} {'speedup':>9}")
    for tokens, heads, head_dim in shapes:
        args = kernel_args(tokens, heads, head_dim)
        t_np = bench(_numpy.fused_attention, args)
        label = f"{tokens} x {heads} x {head_dim}"
        if _core is None:
            print(f"{label:<28} {t_np*1e6:>10.1f}us {'(missing)':>12}")
            continue
        t_c = bench(_core.fused_attention, args)
        ctx_np, attn_np = _numpy.fused_attention(*args)
        ctx_c, attn_c = _core.fused_attention(*args)
        assert np.abs(ctx_np - ctx_c).max() < 1e-10
        assert np.abs(attn_np - attn_c).max() < 1e-10
        print(f"{label:<28} {t_np*1e6:>10.1f}us {t_c*1e6:>10.1f}us "
              f"{t_np/t_c:>8.2f}x")

    model = init_model(ModelConfig())
    clip = generate_clip(ClipSpec(8, 32, 32, seed=0))
    t0 = time.perf_counter()
    for _ in range(50):
        explain(model, clip, EnhancementParams())
    per_pass = (time.perf_counter() - t0) / 50
    from staa.kernels import BACKEND
    print(f"\nend-to-end explain ({BACKEND} backend): {per_pass*1e3:.2f} ms/clip")
    print("re-run with STAA_PURE_PYTHON=1 to time the fallback end to end")


if __name__ == "__main__":
    main()
