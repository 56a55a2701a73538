"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--lines 20000]

Both implementations are imported directly, so one process measures both;
``kernels.BACKEND`` only reports which one the package would pick.
"""
import argparse
import timeit

import numpy as np

from alpo import _pykernels, kernels
from alpo.corpus import window_half_width

try:
    from alpo import _ckernels
except ImportError:
    _ckernels = None


def cases(n_lines, seed=0):
    rng = np.random.default_rng(seed)
    src = np.sort(rng.uniform(0, 2.0 * n_lines, n_lines))
    tgt = np.sort(src + rng.uniform(-0.5, 0.5, n_lines))
    half = window_half_width(n_lines, n_lines)
    vocab, order = 40, 2
    logits = np.ascontiguousarray(rng.normal(0, 1, (vocab ** order + 1, vocab)))
    tokens = rng.integers(0, vocab, 2000).astype(np.int64)

    def align(mod):
        return lambda: mod.align_scan(src, tgt, 0.7, half)

    def logprob(mod):
        return lambda: mod.sequence_logprob(logits, tokens, 0, order)

    def grad(mod):
        g = np.zeros_like(logits)
        return lambda: mod.accumulate_sequence_grad(logits, tokens, 0, order, 1.0, g)

    return [
        (f"align_scan ({n_lines} lines)", align),
        ("sequence_logprob (2000 tokens)", logprob),
        ("accumulate_sequence_grad (2000 tokens)", grad),
    ]


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--lines", type=int, default=20_000)
    args = ap.parse_args(argv)
    print(f"package backend: {kernels.BACKEND}")
    print(f"{'kernel':42s} {'python s':>10s} {'cython s':>10s} {'speed-up':>9s}")
    for name, make in cases(args.lines):
        py = best_of(make(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:42s} {py:10.4f} {'n/a':>10s} {'n/a':>9s}")
            continue
        cy = best_of(make(_ckernels), args.repeat)
        print(f"{name:42s} {py:10.4f} {cy:10.4f} {py / cy:8.1f}x")


if __name__ == "__main__":
    main()
