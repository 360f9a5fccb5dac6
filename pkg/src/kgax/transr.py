"""Translational knowledge-graph embedding with per-relation projections.

Scores triples in relation space: project head and tail with the relation's
matrix, translate by the relation embedding, and take the squared L2 norm of
the residual.  Lower scores mean more plausible triples.  Training minimises
a pairwise logistic objective that pushes corrupted triples above valid ones.
"""

from __future__ import annotations

import numpy as np

from . import accel
from .data import sample_kg_negative
from .numeric import adam_step, sigmoid, softplus
from .rng import KG_NEGATIVE, KG_SHUFFLE, stream_rng


def transr_score(entity, relation, proj, triples):
    """Plausibility scores for an ``(N, 3)`` batch of (head, rel, tail).

    ``g = || W_r e_h + e_r - W_r e_t ||_2^2`` per row, returned as ``(N,)``.
    """
    triples = np.asarray(triples, dtype=np.int64)
    if triples.ndim == 1:
        triples = triples[None, :]
    scores, _ = accel.transr_forward(
        entity, relation, proj, triples[:, 0], triples[:, 1], triples[:, 2]
    )
    return scores


def kg_pair_loss(entity, relation, proj, valid, corrupt, margin=0.0):
    """Mean pairwise logistic loss over aligned valid/corrupt batches.

    ``mean(-ln sigma(g_corrupt - g_valid - margin))`` where ``g`` is
    :func:`transr_score`.  The default margin of zero matches the plain
    pairwise form; a positive margin demands that corrupted triples score
    at least ``margin`` higher before the pair stops contributing.
    """
    g_valid = transr_score(entity, relation, proj, valid)
    g_corrupt = transr_score(entity, relation, proj, corrupt)
    x = g_corrupt - g_valid - margin
    # -ln(sigmoid(x)) == softplus(-x), stable for large |x|.
    return float(np.mean(softplus(-x)))


def kg_pair_loss_and_grads(entity, relation, proj, valid, corrupt, margin=0.0):
    """Loss plus gradients w.r.t. the entity, relation, and projection tables.

    Returns ``(loss, d_entity, d_relation, d_proj)``.  With
    ``x = g_corrupt - g_valid - margin`` and batch size ``B``, each pair
    contributes ``(sigmoid(x) - 1) / B`` to ``d loss / d g_corrupt`` and the
    negation of that to ``d loss / d g_valid``.
    """
    valid = np.asarray(valid, dtype=np.int64)
    corrupt = np.asarray(corrupt, dtype=np.int64)
    n = valid.shape[0]
    if corrupt.shape[0] != n:
        raise ValueError("valid and corrupt batches must be the same length")

    g_valid, diff_valid = accel.transr_forward(
        entity, relation, proj, valid[:, 0], valid[:, 1], valid[:, 2]
    )
    g_corrupt, diff_corrupt = accel.transr_forward(
        entity, relation, proj, corrupt[:, 0], corrupt[:, 1], corrupt[:, 2]
    )
    x = g_corrupt - g_valid - margin
    loss = float(np.mean(softplus(-x)))

    # d loss / d g_corrupt per pair; cast so the scatter kernels stay in
    # the parameter dtype.
    coeff = ((sigmoid(x) - 1.0) / n).astype(entity.dtype)
    d_entity = np.zeros_like(entity)
    d_relation = np.zeros_like(relation)
    d_proj = np.zeros_like(proj)
    accel.transr_backward(
        entity, proj,
        corrupt[:, 0], corrupt[:, 1], corrupt[:, 2],
        diff_corrupt, coeff, d_entity, d_relation, d_proj,
    )
    accel.transr_backward(
        entity, proj,
        valid[:, 0], valid[:, 1], valid[:, 2],
        diff_valid, -coeff, d_entity, d_relation, d_proj,
    )
    return loss, d_entity, d_relation, d_proj


def kg_epoch(params, graph, config, adam, seed, epoch, phase, stats=None):
    """One full pass of pairwise KG training over the graph's triples.

    Shuffles the triple list, corrupts each tail uniformly (resampling until
    the corrupted triple leaves the graph), and applies one Adam step per
    mini-batch to the entity, relation, and projection tables.  ``phase``
    keeps pretraining epochs on different random streams than alternating
    epochs.  Returns the mean per-pair loss across the epoch.  ``stats``,
    when given a dict, gets ``n_batches`` and ``n_triples`` recorded into it.
    """
    triples = graph.triples
    n = triples.shape[0]
    if n == 0:
        return 0.0
    order = stream_rng(seed, KG_SHUFFLE, phase, epoch).permutation(n)
    neg_rng = stream_rng(seed, KG_NEGATIVE, phase, epoch)

    batch_size = config.batch_size
    total = 0.0
    n_batches = 0
    for start in range(0, n, batch_size):
        batch = triples[order[start:start + batch_size]]
        corrupt = batch.copy()
        for row in range(batch.shape[0]):
            corrupt[row, 2] = sample_kg_negative(graph, batch[row], neg_rng)[2]
        loss, d_ent, d_rel, d_proj = kg_pair_loss_and_grads(
            params["entity"], params["relation"], params["proj"],
            batch, corrupt, margin=config.kg_margin,
        )
        adam_step(
            {"entity": params["entity"], "relation": params["relation"],
             "proj": params["proj"]},
            {"entity": d_ent, "relation": d_rel, "proj": d_proj},
            adam, config.lr,
        )
        total += loss * batch.shape[0]
        n_batches += 1
    if stats is not None:
        stats["n_batches"] = n_batches
        stats["n_triples"] = int(n)
    return total / n
