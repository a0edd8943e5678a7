"""Time the compiled and pure-Python scoring kernels on the toy model.

    python benchmarks/bench_kernels.py [--prompts 2000] [--repeat 5]
"""
import argparse
import time

import numpy as np

from inversor import kernels
from inversor.ngram import toy_model


def batch_args(model, n_prompts, rng):
    regular = model.vocab.regular_ids
    prompts = [rng.choice(regular, int(rng.integers(1, 16))) for _ in range(n_prompts)]
    offsets = np.zeros(n_prompts + 1, dtype=np.int64)
    np.cumsum([len(p) for p in prompts], out=offsets[1:])
    flat = np.concatenate(prompts).astype(np.int64)
    cont = rng.choice(regular, 12).astype(np.int64)
    return (model.table, model.zero_mask, model.copy_weight, flat, offsets, cont, len(cont), True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--prompts", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    model = toy_model()
    call = batch_args(model, args.prompts, np.random.default_rng(0))
    timings = {}
    results = {}
    for name in kernels.available():
        mod = kernels.load(name)
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            results[name] = mod.score_batch(*call)
            best = min(best, time.perf_counter() - t0)
        timings[name] = best
        rate = args.prompts / best
        print(f"{name:7s} {best * 1e3:9.2f} ms  {rate:12.0f} candidates/s")
    if "cython" in timings:
        same = all(np.array_equal(a, b) for a, b in zip(results["cython"], results["python"]))
        print(f"speedup {timings['python'] / timings['cython']:.1f}x, identical results: {same}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
