"""Pure-numpy implementations of the hot kernels.

Reference backend: every function here has an @njit twin in
``numba_ops`` with the same signature and semantics. Segments are
contiguous edge ranges described by an offsets array of length
``n_segments + 1``; empty segments are legal and contribute nothing.
"""

import numpy as np


def _starts_and_ids(offsets, n_edges):
    counts = np.diff(offsets)
    nonzero = counts > 0
    starts = offsets[:-1][nonzero]
    seg_ids = np.repeat(np.arange(offsets.shape[0] - 1), counts)
    return counts, nonzero, starts, seg_ids


def seg_softmax(logits, offsets):
    """Stable softmax within each segment of `logits`."""
    n_edges = logits.shape[0]
    out = np.empty_like(logits)
    if n_edges == 0:
        return out
    counts, nonzero, starts, seg_ids = _starts_and_ids(offsets, n_edges)
    seg_max = np.zeros(offsets.shape[0] - 1, dtype=logits.dtype)
    seg_max[nonzero] = np.maximum.reduceat(logits, starts)
    shifted = np.exp(logits - seg_max[seg_ids])
    denom = np.ones(offsets.shape[0] - 1, dtype=logits.dtype)
    denom[nonzero] = np.add.reduceat(shifted, starts)
    out[:] = shifted / denom[seg_ids]
    return out


def seg_softmax_grad(weights, gweights, offsets):
    """Backward of seg_softmax: dlogit = w * (g - sum_j w_j g_j)."""
    n_edges = weights.shape[0]
    out = np.empty_like(weights)
    if n_edges == 0:
        return out
    counts, nonzero, starts, seg_ids = _starts_and_ids(offsets, n_edges)
    inner = np.zeros(offsets.shape[0] - 1, dtype=weights.dtype)
    inner[nonzero] = np.add.reduceat(weights * gweights, starts)
    out[:] = weights * (gweights - inner[seg_ids])
    return out


def seg_weighted_sum(vecs, weights, offsets):
    """Per-segment weighted sum of edge vectors: out[s] = sum w_k vecs_k."""
    n_seg = offsets.shape[0] - 1
    out = np.zeros((n_seg, vecs.shape[1]), dtype=vecs.dtype)
    if vecs.shape[0] == 0:
        return out
    counts, nonzero, starts, _ = _starts_and_ids(offsets, vecs.shape[0])
    out[nonzero] = np.add.reduceat(weights[:, None] * vecs, starts, axis=0)
    return out


def seg_weighted_sum_grad(vecs, weights, offsets, gout):
    """Backward of seg_weighted_sum, returns (gvecs, gweights)."""
    if vecs.shape[0] == 0:
        return np.zeros_like(vecs), np.zeros_like(weights)
    counts, _, _, seg_ids = _starts_and_ids(offsets, vecs.shape[0])
    g_rows = gout[seg_ids]
    gvecs = weights[:, None] * g_rows
    gweights = np.einsum("ed,ed->e", vecs, g_rows)
    return gvecs, gweights


def scatter_add_rows(out, idx, rows):
    """out[idx[k]] += rows[k], with repeated indices accumulating."""
    np.add.at(out, idx, rows)


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def transr_forward(ent, rel, proj, heads, rels, tails):
    """Projected translation residuals and squared-distance scores.

    delta_k = proj[r_k] @ ent[h_k] + rel[r_k] - proj[r_k] @ ent[t_k]
    score_k = ||delta_k||^2

    Returns (scores, delta). Work is grouped by relation so no
    (batch, d, d) gather is materialized.
    """
    n = heads.shape[0]
    d = ent.shape[1]
    delta = np.empty((n, d), dtype=ent.dtype)
    for r in np.unique(rels):
        mask = rels == r
        diff = ent[heads[mask]] - ent[tails[mask]]
        delta[mask] = diff @ proj[r].T + rel[r]
    scores = np.einsum("kd,kd->k", delta, delta)
    return scores, delta


def transr_backward(ent, proj, heads, rels, tails, delta, dscore,
                    dent, drel, dproj):
    """Accumulate gradients of transr scores into dent/drel/dproj.

    dscore is dL/dscore per triple; uses score = ||delta||^2 so
    ddelta = 2 * dscore * delta.
    """
    ddelta = (2.0 * dscore)[:, None] * delta
    for r in np.unique(rels):
        mask = rels == r
        dd = ddelta[mask]
        h_idx = heads[mask]
        t_idx = tails[mask]
        back = dd @ proj[r]
        np.add.at(dent, h_idx, back)
        np.add.at(dent, t_idx, -back)
        drel[r] += dd.sum(axis=0)
        dproj[r] += dd.T @ (ent[h_idx] - ent[t_idx])
