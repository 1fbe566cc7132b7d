"""Compare the compiled kernel backend against the numpy fallback.

Per-kernel microbenchmarks (softmax, layernorm, gelu, fused Adam) plus an
end-to-end forward/backward of the three-level model under each backend.

Run from the repo root:  python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from trivit import autodiff as ad
from trivit import backend
from trivit.config import default_config
from trivit.model import MultiLevelTransformer
from trivit.samples import collate
from trivit.synth import make_splits
from trivit.train import task_loss


def best_of(fn, repeats):
    """Fastest wall-clock of `repeats` timed calls, in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(dtype):
    rng = np.random.default_rng(0)
    rows, dim = 4096, 64
    x2 = rng.standard_normal((rows, dim)).astype(dtype)
    dy2 = rng.standard_normal((rows, dim)).astype(dtype)
    gain = np.ones(dim, dtype=dtype)
    bias = np.zeros(dim, dtype=dtype)
    flat = rng.standard_normal(rows * dim).astype(dtype)
    dflat = rng.standard_normal(rows * dim).astype(dtype)

    def softmax(k):
        out = np.empty_like(x2)
        dx = np.empty_like(x2)
        k.softmax_fwd(x2, out)
        k.softmax_bwd(out, dy2, dx)

    def layernorm(k):
        y = np.empty_like(x2)
        xhat = np.empty_like(x2)
        rstd = np.empty(rows, dtype=dtype)
        dx = np.empty_like(x2)
        dgain = np.zeros(dim, dtype=dtype)
        dbias = np.zeros(dim, dtype=dtype)
        k.layernorm_fwd(x2, gain, bias, 1e-5, y, xhat, rstd)
        k.layernorm_bwd(dy2, xhat, rstd, gain, dx, dgain, dbias)

    def gelu(k):
        out = np.empty_like(flat)
        dx = np.empty_like(flat)
        k.gelu_fwd(flat, out)
        k.gelu_bwd(flat, dflat, dx)

    def adam(k):
        p = flat.copy()
        m = np.zeros_like(flat)
        v = np.zeros_like(flat)
        k.adam_update(p, dflat, m, v, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)

    return [
        (f"softmax fwd+bwd ({rows}x{dim})", softmax),
        (f"layernorm fwd+bwd ({rows}x{dim})", layernorm),
        (f"gelu fwd+bwd ({rows * dim})", gelu),
        (f"adam step ({rows * dim} params)", adam),
    ]


def end_to_end(repeats):
    cfg = default_config(
        **{
            "model.dropout": 0.0,
            "data.n_train": 8,
            "data.n_val": 1,
            "data.n_test": 1,
        }
    )
    samples = make_splits(cfg.data)["train"]
    batch = collate(samples, cfg.model.patch, cfg.attn.temporal_mode)
    model = MultiLevelTransformer(cfg.model, seed=0)

    def step():
        model.store.zero_grad()
        out = model.forward_batch(batch.videos, task="ef", train=False)
        task_loss(out, batch, "ef").backward()

    step()  # warm up caches / lazy allocations
    return best_of(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timed repeats per case (best-of)")
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args()

    names = backend.available_backends()
    if "cy" not in names:
        print("compiled backend not built; benchmarking fallback only")
    dtype = np.dtype(args.dtype)

    print(f"dtype={dtype.name}  repeats={args.repeats} (best-of)")
    header = f"{'kernel':<34}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else "")
    print(header)
    for label, fn in kernel_cases(dtype):
        times = {}
        for name in names:
            k = backend.get_backend(name)
            times[name] = best_of(lambda: fn(k), args.repeats)
        row = f"{label:<34}" + "".join(f"{times[n] * 1e6:>10.0f}us" for n in names)
        if len(names) == 2:
            row += f"{times['py'] / times['cy']:>11.2f}x"
        print(row)

    print()
    e2e = {}
    for name in names:
        previous = backend.set_backend(name)
        try:
            e2e[name] = end_to_end(args.repeats)
        finally:
            backend.set_backend(previous)
        print(f"end-to-end fwd+bwd (batch 8, default model) [{name}]: {e2e[name] * 1e3:.1f} ms")
    if len(names) == 2:
        print(f"end-to-end speedup: {e2e['py'] / e2e['cy']:.2f}x")


if __name__ == "__main__":
    main()
