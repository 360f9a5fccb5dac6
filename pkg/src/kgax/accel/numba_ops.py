"""Numba @njit twins of the numpy_ops kernels.

Same signatures and semantics as ``numpy_ops``; plain loops that numba
compiles per dtype. Kept single-threaded so results are deterministic
and accumulation order matches a sequential scan.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def seg_softmax(logits, offsets):
    out = np.empty_like(logits)
    for s in range(offsets.shape[0] - 1):
        lo, hi = offsets[s], offsets[s + 1]
        if hi == lo:
            continue
        m = logits[lo]
        for k in range(lo + 1, hi):
            if logits[k] > m:
                m = logits[k]
        denom = 0.0
        for k in range(lo, hi):
            out[k] = np.exp(logits[k] - m)
            denom += out[k]
        for k in range(lo, hi):
            out[k] /= denom
    return out


@njit(cache=True)
def seg_softmax_grad(weights, gweights, offsets):
    out = np.empty_like(weights)
    for s in range(offsets.shape[0] - 1):
        lo, hi = offsets[s], offsets[s + 1]
        inner = 0.0
        for k in range(lo, hi):
            inner += weights[k] * gweights[k]
        for k in range(lo, hi):
            out[k] = weights[k] * (gweights[k] - inner)
    return out


@njit(cache=True)
def seg_weighted_sum(vecs, weights, offsets):
    n_seg = offsets.shape[0] - 1
    d = vecs.shape[1]
    out = np.zeros((n_seg, d), dtype=vecs.dtype)
    for s in range(n_seg):
        for k in range(offsets[s], offsets[s + 1]):
            w = weights[k]
            for j in range(d):
                out[s, j] += w * vecs[k, j]
    return out


@njit(cache=True)
def seg_weighted_sum_grad(vecs, weights, offsets, gout):
    gvecs = np.zeros_like(vecs)
    gweights = np.zeros_like(weights)
    d = vecs.shape[1]
    for s in range(offsets.shape[0] - 1):
        for k in range(offsets[s], offsets[s + 1]):
            acc = 0.0
            for j in range(d):
                gvecs[k, j] = weights[k] * gout[s, j]
                acc += vecs[k, j] * gout[s, j]
            gweights[k] = acc
    return gvecs, gweights


@njit(cache=True)
def scatter_add_rows(out, idx, rows):
    d = out.shape[1]
    for k in range(idx.shape[0]):
        row = idx[k]
        for j in range(d):
            out[row, j] += rows[k, j]


@njit(cache=True)
def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    flat_p = param.reshape(-1)
    flat_g = grad.reshape(-1)
    flat_m = m.reshape(-1)
    flat_v = v.reshape(-1)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(flat_p.shape[0]):
        g = flat_g[i]
        flat_m[i] = beta1 * flat_m[i] + (1.0 - beta1) * g
        flat_v[i] = beta2 * flat_v[i] + (1.0 - beta2) * (g * g)
        mhat = flat_m[i] / bc1
        vhat = flat_v[i] / bc2
        flat_p[i] -= lr * mhat / (np.sqrt(vhat) + eps)


@njit(cache=True)
def transr_forward(ent, rel, proj, heads, rels, tails):
    n = heads.shape[0]
    d = ent.shape[1]
    delta = np.empty((n, d), dtype=ent.dtype)
    scores = np.empty(n, dtype=ent.dtype)
    for k in range(n):
        h, r, t = heads[k], rels[k], tails[k]
        acc = 0.0
        for i in range(d):
            v = rel[r, i]
            for j in range(d):
                v += proj[r, i, j] * (ent[h, j] - ent[t, j])
            delta[k, i] = v
            acc += v * v
        scores[k] = acc
    return scores, delta


@njit(cache=True)
def transr_backward(ent, proj, heads, rels, tails, delta, dscore,
                    dent, drel, dproj):
    n = heads.shape[0]
    d = ent.shape[1]
    for k in range(n):
        h, r, t = heads[k], rels[k], tails[k]
        c = 2.0 * dscore[k]
        for i in range(d):
            dd = c * delta[k, i]
            drel[r, i] += dd
            for j in range(d):
                diff = ent[h, j] - ent[t, j]
                dproj[r, i, j] += dd * diff
                back = dd * proj[r, i, j]
                dent[h, j] += back
                dent[t, j] -= back
