"""Numba kernels for the collapsed Gibbs sampler.

All randomness enters through pre-drawn uniform arrays so the sampler's
determinism is owned by the caller's numpy Generator, not the JIT runtime.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gibbs_sweep(z, doc_ids, word_ids, n_dk, n_kw, n_k, alpha, eta, smooth_v, uniforms):
    """One full-corpus sweep updating assignments and count tables in place.

    Token i is resampled from p(t) proportional to
    (n_kw[t,w]+eta)/(n_k[t]+V*eta) * (n_dk[d,t]+alpha), all counts excluding
    token i itself.
    """
    n_topics = n_dk.shape[1]
    for i in range(z.shape[0]):
        d = doc_ids[i]
        w = word_ids[i]
        old = z[i]
        n_dk[d, old] -= 1
        n_kw[old, w] -= 1
        n_k[old] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (n_kw[t, w] + eta) / (n_k[t] + smooth_v * eta) * (n_dk[d, t] + alpha)
        r = uniforms[i] * total
        acc = 0.0
        new = n_topics - 1
        for t in range(n_topics):
            acc += (n_kw[t, w] + eta) / (n_k[t] + smooth_v * eta) * (n_dk[d, t] + alpha)
            if r < acc:
                new = t
                break
        z[i] = new
        n_dk[d, new] += 1
        n_kw[new, w] += 1
        n_k[new] += 1


@njit(cache=True)
def fold_in_sweep(z, word_ids, m_k, topic_word, alpha, uniforms):
    """One sweep over a single held-out text with topic-word rows frozen."""
    n_topics = m_k.shape[0]
    for i in range(z.shape[0]):
        w = word_ids[i]
        old = z[i]
        m_k[old] -= 1
        total = 0.0
        for t in range(n_topics):
            total += topic_word[t, w] * (m_k[t] + alpha)
        r = uniforms[i] * total
        acc = 0.0
        new = n_topics - 1
        for t in range(n_topics):
            acc += topic_word[t, w] * (m_k[t] + alpha)
            if r < acc:
                new = t
                break
        z[i] = new
        m_k[new] += 1
