"""Pure-Python reference versions of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and results; ``alpo.kernels`` picks one at import time.
"""
import math

import numpy as np

# Start-time comparisons tolerate float noise from decimal timestamps.
TIME_EPS = 1e-9


def align_scan(src_starts, tgt_starts, threshold, half_width):
    n_src = len(src_starts)
    n_tgt = len(tgt_starts)
    out = np.full(n_src, -1, dtype=np.int64)
    used = bytearray(n_tgt)
    limit = threshold + TIME_EPS
    for i in range(n_src):
        s = float(src_starts[i])
        lo = max(0, i - half_width)
        hi = min(n_tgt - 1, i + half_width)
        best = -1
        best_d = math.inf
        for j in range(lo, hi + 1):
            if used[j]:
                continue
            d = abs(s - float(tgt_starts[j]))
            if d <= limit and d < best_d:
                best = j
                best_d = d
        if best >= 0:
            used[best] = 1
            out[i] = best
    return out


def context_class(tokens, t, order, vocab_size):
    if t < order:
        return 0
    c = 0
    for q in range(t - order, t):
        c = c * vocab_size + int(tokens[q])
    return c + 1


def _row_logsumexp(row):
    m = row.max()
    return m + math.log(np.exp(row - m).sum())


def sequence_logprob(logits, tokens, start, order):
    vocab_size = logits.shape[1]
    total = 0.0
    for t in range(start, len(tokens)):
        row = logits[context_class(tokens, t, order, vocab_size)]
        total += float(row[tokens[t]]) - _row_logsumexp(row)
    return total


def accumulate_sequence_grad(logits, tokens, start, order, coef, grad):
    """Add ``coef * d(sequence_logprob)/d(logits)`` into ``grad``; return the log-prob."""
    vocab_size = logits.shape[1]
    total = 0.0
    for t in range(start, len(tokens)):
        c = context_class(tokens, t, order, vocab_size)
        row = logits[c]
        m = row.max()
        e = np.exp(row - m)
        z = e.sum()
        tok = tokens[t]
        total += float(row[tok]) - (m + math.log(z))
        grad[c] -= coef * (e / z)
        grad[c, tok] += coef
    return total
