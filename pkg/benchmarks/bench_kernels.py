"""Timing and agreement harness for the two kernel backends.

Runs every accelerated kernel on identically seeded inputs through both
``kgax.accel.numpy_ops`` and ``kgax.accel.numba_ops``, checks that the
results agree, then reports best-of-N wall times and the speedup.

    python3 benchmarks/bench_kernels.py [--scale small|medium|large] [--repeats N]

The Numba column includes JIT warmup only on the first call of each kernel;
each timing is the best of the repeat runs.
"""

import argparse
import time

import numpy as np

from kgax.accel import numba_ops, numpy_ops

SCALES = {
    "small": dict(n_entities=2_000, n_edges=20_000, dim=16,
                  n_triples=5_000, n_relations=6),
    "medium": dict(n_entities=20_000, n_edges=200_000, dim=32,
                   n_triples=50_000, n_relations=10),
    "large": dict(n_entities=50_000, n_edges=1_000_000, dim=64,
                  n_triples=200_000, n_relations=20),
}


def ragged_offsets(rng, n_segments, n_edges):
    """Segment boundaries with uneven counts, including some empty rows."""
    weights = rng.random(n_segments) ** 2
    counts = rng.multinomial(n_edges, weights / weights.sum())
    offsets = np.zeros(n_segments + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


def build_inputs(scale, seed=0):
    rng = np.random.default_rng(seed)
    s = SCALES[scale]
    n, e, d = s["n_entities"], s["n_edges"], s["dim"]
    t, r = s["n_triples"], s["n_relations"]

    offsets = ragged_offsets(rng, n, e)
    logits = rng.normal(size=e)
    weights = numpy_ops.seg_softmax(logits, offsets)
    vecs = rng.normal(size=(e, d))
    gweights = rng.normal(size=e)
    gout = rng.normal(size=(n, d))
    idx = rng.integers(0, n, size=e)
    rows = rng.normal(size=(e, d))

    ent = rng.normal(size=(n, d))
    rel = rng.normal(size=(r, d))
    proj = np.eye(d)[None, :, :] + 0.1 * rng.normal(size=(r, d, d))
    heads = rng.integers(0, n, size=t)
    rels = rng.integers(0, r, size=t)
    tails = rng.integers(0, n, size=t)
    _, delta = numpy_ops.transr_forward(ent, rel, proj, heads, rels, tails)
    dscore = rng.normal(size=t)

    param = rng.normal(size=(n, d))
    grad = rng.normal(size=(n, d))

    return {
        "seg_softmax": lambda ops: ops.seg_softmax(logits, offsets),
        "seg_softmax_grad": lambda ops: ops.seg_softmax_grad(
            weights, gweights, offsets),
        "seg_weighted_sum": lambda ops: ops.seg_weighted_sum(
            vecs, weights, offsets),
        "seg_weighted_sum_grad": lambda ops: ops.seg_weighted_sum_grad(
            vecs, weights, offsets, gout),
        "scatter_add_rows": lambda ops: ops.scatter_add_rows(
            np.zeros((n, d)), idx, rows),
        "adam_update": lambda ops: ops.adam_update(
            param.copy(), grad, np.zeros((n, d)), np.zeros((n, d)),
            1, 1e-3, 0.9, 0.999, 1e-8),
        "transr_forward": lambda ops: ops.transr_forward(
            ent, rel, proj, heads, rels, tails),
        "transr_backward": lambda ops: ops.transr_backward(
            ent, proj, heads, rels, tails, delta, dscore,
            np.zeros((n, d)), np.zeros((r, d)), np.zeros((r, d, d))),
    }


def as_arrays(result):
    if isinstance(result, tuple):
        return list(result)
    return [result] if result is not None else []


def max_diff(a, b):
    outs_a, outs_b = as_arrays(a), as_arrays(b)
    if not outs_a:
        return 0.0
    return max(float(np.max(np.abs(x - y))) for x, y in zip(outs_a, outs_b))


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", choices=sorted(SCALES), default="medium")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cases = build_inputs(args.scale, args.seed)
    print(f"scale={args.scale} repeats={args.repeats} "
          f"({', '.join(f'{k}={v:,}' for k, v in SCALES[args.scale].items())})")
    print()
    header = f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max|diff|':>12}"
    print(header)
    print("-" * len(header))

    mutating = {"scatter_add_rows", "adam_update", "transr_backward"}
    worst = 0.0
    for name, call in cases.items():
        res_np = call(numpy_ops)
        call(numba_ops)  # JIT warmup, excluded from timing
        res_nb = call(numba_ops)
        diff = max_diff(res_np, res_nb)
        worst = max(worst, diff)

        # mutating kernels get fresh buffers from their closures each call,
        # so repeated invocation stays honest
        t_np = best_time(lambda: call(numpy_ops), args.repeats)
        t_nb = best_time(lambda: call(numba_ops), args.repeats)
        tag = "*" if name in mutating else " "
        print(f"{name + tag:<24}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}"
              f"{t_np / t_nb:>8.1f}x{diff:>12.1e}")

    print("-" * len(header))
    print("* result buffers allocated per call (allocation time included)")
    ok = worst < 1e-9
    print(f"agreement: worst max|diff| {worst:.1e} "
          f"{'OK' if ok else 'OUT OF TOLERANCE'} (tol 1e-9)")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
