"""Attentive multi-layer propagation over the collaborative graph.

Each layer turns every sampled edge (h, r, t) into a triple embedding,
scores it with a small attention head, softmax-normalizes the scores
within each head entity's neighborhood, aggregates, and combines the
aggregate with the entity's own representation through a learned update
transform.  Layer outputs are concatenated into the final representation.

All functions here are pure over their array arguments; the hand-written
backward passes mirror the forwards exactly and accumulate into caller
supplied gradient tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import accel
from .data import neighbors
from .errors import KgaxError
from .numeric import leaky_relu, leaky_relu_grad


@dataclass(frozen=True)
class NeighborPlan:
    """One epoch's sampled neighborhoods in CSR edge form.

    ``heads``/``rels``/``tails`` are parallel (E,) arrays; ``offsets`` has
    length ``entity_count + 1`` and slices the edge arrays by head entity.
    The same plan is shared by every layer within an epoch.
    """

    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    offsets: np.ndarray

    @property
    def n_edges(self):
        return int(self.heads.shape[0])

    def counts(self):
        return np.diff(self.offsets)


def build_neighbor_plan(graph, cap, rng):
    """Sample up to ``cap`` outgoing edges per entity.

    Entities are visited in index order so the stream of PRNG draws, and
    therefore the plan, is deterministic for a given generator state.
    """
    blocks = []
    offsets = np.zeros(graph.entity_count + 1, dtype=np.int64)
    for h in range(graph.entity_count):
        block = neighbors(graph, h, cap, rng)
        offsets[h + 1] = offsets[h] + block.shape[0]
        if block.shape[0]:
            blocks.append(block)
    if blocks:
        edges = np.concatenate(blocks, axis=0)
    else:
        edges = np.empty((0, 3), dtype=np.int64)
    return NeighborPlan(
        heads=np.ascontiguousarray(edges[:, 0]),
        rels=np.ascontiguousarray(edges[:, 1]),
        tails=np.ascontiguousarray(edges[:, 2]),
        offsets=offsets,
    )


def full_neighbor_plan(graph):
    """The cap-free plan: every edge, grouped by head (evaluation helper)."""
    return NeighborPlan(
        heads=np.ascontiguousarray(graph.triples[:, 0]),
        rels=np.ascontiguousarray(graph.triples[:, 1]),
        tails=np.ascontiguousarray(graph.triples[:, 2]),
        offsets=graph.head_offsets,
    )


def triple_embedding(w1, e_h, e_r, e_t):
    """Linear transform of the concatenated triple: W1·(h ∥ r ∥ t)."""
    x = np.concatenate([np.atleast_1d(e_h), np.atleast_1d(e_r), np.atleast_1d(e_t)])
    if w1.shape[1] != x.shape[0]:
        raise KgaxError(
            f"triple transform expects input of length {w1.shape[1]}, got {x.shape[0]}"
        )
    return w1 @ x


def attention_weights(w2, triple_embs, slope, mode="learned"):
    """Normalized attention over one neighborhood.

    Returns ``(logits, pi)``.  Learned mode scores each triple embedding
    with ``LeakyReLU(w2 · e)`` and softmax-normalizes; uniform mode gives
    every neighbor ``1/|N_h|`` and leaves W2 out of the computation.
    """
    triple_embs = np.atleast_2d(np.asarray(triple_embs))
    n = triple_embs.shape[0]
    if n == 0:
        raise KgaxError("attention over an empty neighborhood")
    if mode == "uniform":
        pi = np.full(n, 1.0 / n, dtype=triple_embs.dtype)
        return np.zeros(n, dtype=triple_embs.dtype), pi
    logits = leaky_relu(triple_embs @ w2.reshape(-1), slope)
    shifted = np.exp(logits - logits.max())
    return logits, shifted / shifted.sum()


def aggregate_neighborhood(pi, triple_embs):
    """Weighted sum of triple embeddings; empty neighborhood gives zeros."""
    triple_embs = np.atleast_2d(np.asarray(triple_embs))
    if triple_embs.shape[0] == 0:
        return np.zeros(triple_embs.shape[1], dtype=triple_embs.dtype)
    return np.asarray(pi) @ triple_embs


def concat_layers(reps):
    """e* = e(0) ∥ … ∥ e(L), rowwise over the entity axis."""
    if not reps:
        raise KgaxError("no layer representations to concatenate")
    if len(reps) == 1:
        return reps[0].copy()
    return np.concatenate(reps, axis=1)


def propagate_layer(h_prev, relation, w1, w2, w_agg, plan, slope,
                    attention_mode="learned", drop_scale=None):
    """One propagation layer over every entity at once.

    ``h_prev`` is (n_ent, p); returns ``(h_next, cache)`` with ``h_next``
    of shape (n_ent, q).  ``drop_scale`` is an optional (n_ent,) vector of
    per-entity message-dropout multipliers (0 for dropped rows, 1/(1-p)
    for survivors); None means evaluation mode.
    """
    p = h_prev.shape[1]
    d_rel = relation.shape[1]
    if w1.shape != (p, 2 * p + d_rel):
        raise KgaxError(
            f"triple transform shape {w1.shape} does not match input dims "
            f"({p}, {2 * p + d_rel})"
        )
    if w_agg.shape[1] != 2 * p:
        raise KgaxError(
            f"update transform shape {w_agg.shape} does not match input dim {2 * p}"
        )

    x = np.concatenate(
        [h_prev[plan.heads], relation[plan.rels], h_prev[plan.tails]], axis=1
    )
    z = x @ w1.T                                         # (E, p)
    if attention_mode == "uniform":
        counts = plan.counts()
        inv = np.zeros(counts.shape[0], dtype=h_prev.dtype)
        nonzero = counts > 0
        inv[nonzero] = 1.0 / counts[nonzero]
        pi = np.repeat(inv, counts)
        c_pre = None
    else:
        c_pre = z @ w2.reshape(-1)                       # (E,)
        c = leaky_relu(c_pre, slope)
        pi = accel.seg_softmax(c, plan.offsets)
    e_agg = accel.seg_weighted_sum(z, pi, plan.offsets)  # (n_ent, p)
    if drop_scale is not None:
        e_agg_mixed = e_agg * drop_scale[:, None]
    else:
        e_agg_mixed = e_agg
    u = np.concatenate([h_prev, e_agg_mixed], axis=1)    # (n_ent, 2p)
    a = u @ w_agg.T                                      # (n_ent, q)
    h_next = leaky_relu(a, slope)
    cache = {"x": x, "z": z, "c_pre": c_pre, "pi": pi, "u": u, "a": a,
             "drop_scale": drop_scale}
    return h_next, cache


def propagate_layer_backward(g_out, cache, w1, w2, w_agg, plan, slope,
                             attention_mode, d_w1, d_w2, d_w_agg, d_relation):
    """Backprop one layer; returns the gradient w.r.t. ``h_prev``.

    Accumulates into the layer parameter gradients and the shared relation
    gradient table in place.
    """
    p = w1.shape[0]
    d_rel = d_relation.shape[1]

    g_a = g_out * leaky_relu_grad(cache["a"], slope)
    d_w_agg += g_a.T @ cache["u"]
    g_u = g_a @ w_agg
    g_self = g_u[:, :p]
    g_agg = g_u[:, p:]
    if cache["drop_scale"] is not None:
        g_agg = g_agg * cache["drop_scale"][:, None]

    g_z, g_pi = accel.seg_weighted_sum_grad(
        cache["z"], cache["pi"], plan.offsets, np.ascontiguousarray(g_agg)
    )
    if attention_mode != "uniform":
        g_c = accel.seg_softmax_grad(cache["pi"], g_pi, plan.offsets)
        g_c_pre = g_c * leaky_relu_grad(cache["c_pre"], slope)
        d_w2 += (g_c_pre @ cache["z"]).reshape(d_w2.shape)
        g_z = g_z + g_c_pre[:, None] * w2.reshape(-1)
    # Uniform mode: pi is a constant of the neighborhood sizes, no gradient.

    d_w1 += g_z.T @ cache["x"]
    g_x = g_z @ w1
    g_h_prev = np.ascontiguousarray(g_self)
    accel.scatter_add_rows(g_h_prev, plan.heads, np.ascontiguousarray(g_x[:, :p]))
    accel.scatter_add_rows(g_h_prev, plan.tails,
                           np.ascontiguousarray(g_x[:, p + d_rel:]))
    accel.scatter_add_rows(d_relation, plan.rels,
                           np.ascontiguousarray(g_x[:, p:p + d_rel]))
    return g_h_prev
