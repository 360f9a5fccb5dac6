"""Auxiliary-information fusion.

Entities that carry auxiliary tokens get their base embedding gated by the
elementwise mean of the token embeddings before any propagation happens.
Tokens are ordinary entities, so the same table provides both sides of the
product.
"""

from __future__ import annotations

import numpy as np

from .errors import KgaxError


def fuse_entity_embedding(entity_vec, aux_vecs):
    """Fuse one entity embedding with its auxiliary token embeddings.

    ``aux_vecs`` is a sequence of vectors with the same shape as
    ``entity_vec``.  An empty sequence leaves the embedding untouched;
    otherwise the result is the Hadamard product of the entity embedding
    with the mean of the token embeddings.
    """
    entity_vec = np.asarray(entity_vec)
    if len(aux_vecs) == 0:
        return entity_vec.copy()
    stack = np.stack([np.asarray(v) for v in aux_vecs])
    if stack.shape[1:] != entity_vec.shape:
        raise KgaxError(
            f"aux vector shape {stack.shape[1:]} does not match entity shape {entity_vec.shape}"
        )
    return entity_vec * stack.mean(axis=0)


class FusionPlan:
    """Precomputed CSR layout of entity -> auxiliary token lists.

    ``rows`` holds the global indices of the fused entities, ``token_idx``
    the concatenated token entity indices, and ``token_offsets`` the CSR
    boundaries into ``token_idx`` (length ``len(rows) + 1``).
    """

    __slots__ = ("rows", "token_idx", "token_offsets", "counts", "seg_ids")

    def __init__(self, rows, token_idx, token_offsets):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.token_idx = np.asarray(token_idx, dtype=np.int64)
        self.token_offsets = np.asarray(token_offsets, dtype=np.int64)
        self.counts = np.diff(self.token_offsets)
        if np.any(self.counts <= 0):
            raise KgaxError("fusion plan rows must carry at least one token")
        # Maps each flat token slot back to its owning row position.
        self.seg_ids = np.repeat(np.arange(len(self.rows)), self.counts)

    @property
    def n_fused(self):
        return int(len(self.rows))

    @classmethod
    def from_aux(cls, aux):
        """Build a plan from an ``{entity_global: [token_global, ...]}`` map.

        Rows are ordered by entity index so the layout is reproducible
        regardless of dict insertion order.
        """
        rows = sorted(aux)
        token_idx = []
        offsets = [0]
        for ent in rows:
            toks = aux[ent]
            if not toks:
                raise KgaxError(f"entity {ent} has an empty token list")
            token_idx.extend(toks)
            offsets.append(len(token_idx))
        return cls(
            np.asarray(rows, dtype=np.int64),
            np.asarray(token_idx, dtype=np.int64),
            np.asarray(offsets, dtype=np.int64),
        )


def fused_base(entity_table, plan):
    """Apply fusion to the whole entity table.

    Returns ``(h0, means)`` where ``h0`` is the layer-0 embedding table
    (a copy; non-fused rows pass through) and ``means`` is the per-fused-row
    token mean, cached for the backward pass.  ``plan`` may be ``None``
    (fusion disabled), in which case ``means`` is ``None``.
    """
    if plan is None or plan.n_fused == 0:
        return entity_table.copy(), None
    sums = np.zeros((plan.n_fused, entity_table.shape[1]), dtype=entity_table.dtype)
    np.add.at(sums, plan.seg_ids, entity_table[plan.token_idx])
    means = sums / plan.counts[:, None].astype(entity_table.dtype)
    h0 = entity_table.copy()
    h0[plan.rows] = entity_table[plan.rows] * means
    return h0, means


def fused_base_backward(grad_h0, entity_table, plan, means):
    """Backprop through :func:`fused_base`.

    For a fused row ``e`` with token mean ``m``: ``h0 = e * m``, so the
    entity row receives ``g * m`` (replacing the identity path) and each of
    its ``c`` tokens receives ``g * e / c``.
    """
    if plan is None or plan.n_fused == 0:
        return grad_h0.copy()
    grad_entity = grad_h0.copy()
    g_rows = grad_h0[plan.rows]
    grad_entity[plan.rows] = g_rows * means
    token_grad = (g_rows * entity_table[plan.rows]) / plan.counts[:, None].astype(
        entity_table.dtype
    )
    np.add.at(grad_entity, plan.token_idx, token_grad[plan.seg_ids])
    return grad_entity


def build_augmented_triples(aux, has_aux_relation):
    """Materialise ``(entity, has_aux, token)`` triples from an aux map.

    Output rows are sorted by (entity, token) for reproducibility.  Returns
    an ``(N, 3)`` int64 array, empty when the map is.
    """
    rows = []
    for ent in sorted(aux):
        for tok in sorted(aux[ent]):
            rows.append((ent, has_aux_relation, tok))
    if not rows:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)
