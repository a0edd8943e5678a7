# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels for the order-1/2 n-gram model with induction copy.

Must stay bit-identical with :mod:`inversor._fallback`; the operation order of
every floating point expression is mirrored there.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY
from libc.stdint cimport int64_t

cnp.import_array()


cdef inline double _position_logprob(const double[:, ::1] probs,
                                     const unsigned char[::1] zero,
                                     double copy_weight,
                                     const int64_t* hist,
                                     Py_ssize_t pos) noexcept nogil:
    cdef int64_t tok = hist[pos]
    cdef int64_t prev = hist[pos - 1]
    cdef Py_ssize_t j
    cdef long hit = 0
    cdef long total = 0
    cdef int64_t succ
    cdef double p
    if zero[tok]:
        return -INFINITY
    p = probs[prev, tok]
    if copy_weight > 0.0:
        for j in range(pos - 1):
            if hist[j] == prev:
                succ = hist[j + 1]
                if not zero[succ]:
                    total += 1
                    if succ == tok:
                        hit += 1
        if total > 0:
            p = (1.0 - copy_weight) * p + copy_weight * (<double>hit / <double>total)
    if p <= 0.0:
        return -INFINITY
    return log(p)


def score_continuation(const double[:, ::1] probs,
                       const unsigned char[::1] zero,
                       double copy_weight,
                       const int64_t[::1] history,
                       Py_ssize_t n_prompt,
                       Py_ssize_t n_score,
                       bint early_stop,
                       double[::1] out):
    """Score ``history[n_prompt:n_prompt + n_score]`` given everything before it.

    Writes per-position log-probabilities into ``out`` and returns
    ``(total, positions_scored, stopped)``.
    """
    cdef Py_ssize_t k
    cdef Py_ssize_t stop_at = 0
    cdef double lp
    cdef double total = 0.0
    if n_prompt < 1 or n_prompt + n_score > history.shape[0]:
        raise ValueError("history too short for requested span")
    with nogil:
        for k in range(n_score):
            lp = _position_logprob(probs, zero, copy_weight, &history[0], n_prompt + k)
            out[k] = lp
            total += lp
            if lp == -INFINITY and early_stop:
                stop_at = k + 1
                break
    if stop_at:
        return -INFINITY, stop_at, True
    return total, n_score, False


def score_batch(const double[:, ::1] probs,
                const unsigned char[::1] zero,
                double copy_weight,
                const int64_t[::1] flat_prompts,
                const int64_t[::1] offsets,
                const int64_t[::1] continuation,
                Py_ssize_t n_score,
                bint early_stop):
    """Score one continuation prefix against many prompts.

    ``flat_prompts[offsets[i]:offsets[i + 1]]`` is prompt ``i``. Returns
    ``(totals, positions_scored)`` arrays.
    """
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t i, k, plen, start
    cdef Py_ssize_t max_len = 0
    cdef double lp, total
    for i in range(n):
        plen = offsets[i + 1] - offsets[i]
        if plen < 1:
            raise ValueError("empty prompt in batch")
        if plen > max_len:
            max_len = plen
    totals = np.empty(n, dtype=np.float64)
    scored = np.empty(n, dtype=np.int64)
    cdef double[::1] totals_v = totals
    cdef int64_t[::1] scored_v = scored
    cdef int64_t[::1] buf = np.empty(max_len + n_score, dtype=np.int64)
    with nogil:
        for i in range(n):
            start = offsets[i]
            plen = offsets[i + 1] - start
            for k in range(plen):
                buf[k] = flat_prompts[start + k]
            for k in range(n_score):
                buf[plen + k] = continuation[k]
            total = 0.0
            scored_v[i] = n_score
            for k in range(n_score):
                lp = _position_logprob(probs, zero, copy_weight, &buf[0], plen + k)
                total += lp
                if lp == -INFINITY and early_stop:
                    scored_v[i] = k + 1
                    total = -INFINITY
                    break
            totals_v[i] = total
    return totals, scored
