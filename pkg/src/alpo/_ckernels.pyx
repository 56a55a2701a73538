# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()

cdef double TIME_EPS = 1e-9


def align_scan(const double[::1] src_starts, const double[::1] tgt_starts,
               double threshold, Py_ssize_t half_width):
    cdef Py_ssize_t n_src = src_starts.shape[0]
    cdef Py_ssize_t n_tgt = tgt_starts.shape[0]
    out_arr = np.full(n_src, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    used_arr = np.zeros(n_tgt, dtype=np.uint8)
    cdef cnp.uint8_t[::1] used = used_arr
    cdef double limit = threshold + TIME_EPS
    cdef Py_ssize_t i, j, lo, hi, best
    cdef double s, d, best_d
    for i in range(n_src):
        s = src_starts[i]
        lo = i - half_width
        if lo < 0:
            lo = 0
        hi = i + half_width
        if hi > n_tgt - 1:
            hi = n_tgt - 1
        best = -1
        best_d = INFINITY
        for j in range(lo, hi + 1):
            if used[j]:
                continue
            d = fabs(s - tgt_starts[j])
            if d <= limit and d < best_d:
                best = j
                best_d = d
        if best >= 0:
            used[best] = 1
            out[i] = best
    return out_arr


cdef inline Py_ssize_t _context(const cnp.int64_t[::1] tokens, Py_ssize_t t,
                                Py_ssize_t order, Py_ssize_t vocab_size) nogil:
    cdef Py_ssize_t c = 0, q
    if t < order:
        return 0
    for q in range(t - order, t):
        c = c * vocab_size + tokens[q]
    return c + 1


def context_class(tokens, Py_ssize_t t, Py_ssize_t order, Py_ssize_t vocab_size):
    cdef cnp.int64_t[::1] tok = np.ascontiguousarray(tokens, dtype=np.int64)
    return _context(tok, t, order, vocab_size)


cdef inline double _row_lse(const double[:, ::1] logits, Py_ssize_t c,
                            Py_ssize_t vocab_size) nogil:
    cdef double m = logits[c, 0], z = 0.0
    cdef Py_ssize_t v
    for v in range(1, vocab_size):
        if logits[c, v] > m:
            m = logits[c, v]
    for v in range(vocab_size):
        z += exp(logits[c, v] - m)
    return m + log(z)


def sequence_logprob(const double[:, ::1] logits, const cnp.int64_t[::1] tokens,
                     Py_ssize_t start, Py_ssize_t order):
    cdef Py_ssize_t vocab_size = logits.shape[1]
    cdef Py_ssize_t t, c
    cdef double total = 0.0
    for t in range(start, tokens.shape[0]):
        c = _context(tokens, t, order, vocab_size)
        total += logits[c, tokens[t]] - _row_lse(logits, c, vocab_size)
    return total


def accumulate_sequence_grad(const double[:, ::1] logits, const cnp.int64_t[::1] tokens,
                             Py_ssize_t start, Py_ssize_t order, double coef,
                             double[:, ::1] grad):
    cdef Py_ssize_t vocab_size = logits.shape[1]
    cdef Py_ssize_t t, c, v
    cdef double total = 0.0, lse
    for t in range(start, tokens.shape[0]):
        c = _context(tokens, t, order, vocab_size)
        lse = _row_lse(logits, c, vocab_size)
        total += logits[c, tokens[t]] - lse
        for v in range(vocab_size):
            grad[c, v] -= coef * exp(logits[c, v] - lse)
        grad[c, tokens[t]] += coef
    return total
