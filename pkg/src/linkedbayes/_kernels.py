"""Compiled inner loops for collapsed Gibbs sampling.

All randomness comes in as pre-drawn uniforms so results depend only on the
caller's numpy Generator.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def token_weights(out, n_jk_row, n_kw_col, n_k, alpha, gamma, vsize, ext_row, use_ext):
    """Unnormalised collapsed conditional for one (already removed) token.

    Writes weights into ``out`` and returns their sum.
    """
    total = 0.0
    for k in range(out.size):
        v = (n_jk_row[k] + alpha) * (n_kw_col[k] + gamma) / (n_k[k] + gamma * vsize)
        if use_ext:
            v *= ext_row[k]
        out[k] = v
        total += v
    return total


@njit(cache=True)
def _pick(p, total, u):
    r = u * total
    acc = 0.0
    for k in range(p.size):
        acc += p[k]
        if r < acc:
            return k
    # round-off: last non-zero slot
    for k in range(p.size - 1, -1, -1):
        if p[k] > 0:
            return k
    return p.size - 1


@njit(cache=True)
def gibbs_sweep(doc, mod, wid, z, order, n_jk, n_kw, n_mk, alpha, gamma, vsize, ext, use_ext, u):
    """One pass over tokens in ``order``; returns how many fell back to the plain conditional."""
    K = n_jk.shape[1]
    p = np.empty(K)
    fallbacks = 0
    for t in range(order.size):
        i = order[t]
        j = doc[i]
        m = mod[i]
        w = wid[i]
        k = z[i]
        n_jk[j, k] -= 1
        n_kw[k, w] -= 1
        n_mk[m, k] -= 1
        total = token_weights(p, n_jk[j], n_kw[:, w], n_mk[m], alpha, gamma[m], vsize[m], ext[j], use_ext)
        if not total > 0.0:
            fallbacks += 1
            total = token_weights(p, n_jk[j], n_kw[:, w], n_mk[m], alpha, gamma[m], vsize[m], ext[j], False)
        k = _pick(p, total, u[t])
        z[i] = k
        n_jk[j, k] += 1
        n_kw[k, w] += 1
        n_mk[m, k] += 1
    return fallbacks


@njit(cache=True)
def add_tokens(doc, mod, wid, z, n_jk, n_kw, n_mk, alpha, gamma, vsize, u):
    """Seat new tokens one at a time, each drawn from the current conditional."""
    K = n_jk.shape[1]
    p = np.empty(K)
    ext = np.ones((1, K))
    for i in range(doc.size):
        j = doc[i]
        m = mod[i]
        w = wid[i]
        total = token_weights(p, n_jk[j], n_kw[:, w], n_mk[m], alpha, gamma[m], vsize[m], ext[0], False)
        k = _pick(p, total, u[i])
        z[i] = k
        n_jk[j, k] += 1
        n_kw[k, w] += 1
        n_mk[m, k] += 1


@njit(cache=True)
def fold_in(wid, phi, alpha, iters, burn, u):
    """Gibbs over a new document's tokens with fixed topic-word rows ``phi[:, wid]``.

    Returns the averaged post-burn-in doc-topic proportions.
    """
    K = phi.shape[0]
    n = wid.size
    z = np.empty(n, np.int64)
    n_k = np.zeros(K)
    p = np.empty(K)
    c = 0
    for i in range(n):
        z[i] = int(u[c] * K) % K
        c += 1
        n_k[z[i]] += 1
    acc = np.zeros(K)
    kept = 0
    for it in range(iters):
        for i in range(n):
            n_k[z[i]] -= 1
            total = 0.0
            for k in range(K):
                p[k] = (n_k[k] + alpha) * phi[k, wid[i]]
                total += p[k]
            k = _pick(p, total, u[c])
            c += 1
            z[i] = k
            n_k[k] += 1
        if it >= burn:
            for k in range(K):
                acc[k] += (n_k[k] + alpha) / (n + K * alpha)
            kept += 1
    if kept == 0:
        for k in range(K):
            acc[k] = (n_k[k] + alpha) / (n + K * alpha)
        kept = 1
    return acc / kept
