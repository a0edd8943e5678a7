"""Pure-Python twin of :mod:`inversor._kernels`.

Every floating point expression follows the compiled kernel's operation order
so both paths return bit-identical scores.
"""
import math

import numpy as np

_NEG_INF = -math.inf


def _position_logprob(probs, zero, copy_weight, hist, pos):
    tok = hist[pos]
    prev = hist[pos - 1]
    if zero[tok]:
        return _NEG_INF
    p = float(probs[prev, tok])
    if copy_weight > 0.0:
        hit = 0
        total = 0
        for j in range(pos - 1):
            if hist[j] == prev:
                succ = hist[j + 1]
                if not zero[succ]:
                    total += 1
                    if succ == tok:
                        hit += 1
        if total > 0:
            p = (1.0 - copy_weight) * p + copy_weight * (float(hit) / float(total))
    if p <= 0.0:
        return _NEG_INF
    return math.log(p)


def score_continuation(probs, zero, copy_weight, history, n_prompt, n_score,
                       early_stop, out):
    if n_prompt < 1 or n_prompt + n_score > len(history):
        raise ValueError("history too short for requested span")
    hist = history.tolist() if isinstance(history, np.ndarray) else list(history)
    zero = zero.tolist() if isinstance(zero, np.ndarray) else zero
    total = 0.0
    for k in range(n_score):
        lp = _position_logprob(probs, zero, copy_weight, hist, n_prompt + k)
        out[k] = lp
        total += lp
        if lp == _NEG_INF and early_stop:
            return _NEG_INF, k + 1, True
    return total, n_score, False


def score_batch(probs, zero, copy_weight, flat_prompts, offsets, continuation,
                n_score, early_stop):
    flat = flat_prompts.tolist()
    offs = offsets.tolist()
    cont = continuation[:n_score].tolist()
    zero = zero.tolist()
    n = len(offs) - 1
    totals = np.empty(n, dtype=np.float64)
    scored = np.empty(n, dtype=np.int64)
    for i in range(n):
        prompt = flat[offs[i]:offs[i + 1]]
        if not prompt:
            raise ValueError("empty prompt in batch")
        hist = prompt + cont
        plen = len(prompt)
        total = 0.0
        scored[i] = n_score
        for k in range(n_score):
            lp = _position_logprob(probs, zero, copy_weight, hist, plen + k)
            total += lp
            if lp == _NEG_INF and early_stop:
                scored[i] = k + 1
                total = _NEG_INF
                break
        totals[i] = total
    return totals, scored
