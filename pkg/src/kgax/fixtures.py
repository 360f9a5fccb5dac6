"""Built-in fixtures: the gradcheck micro-world and a synthetic dataset.

The gradcheck fixture is a fully deterministic 6-entity problem (2 users,
3 items, 1 auxiliary token; interact + has_aux relations with inverses)
small enough to brute-force every parameter coordinate in seconds.

The synthetic generator writes a desk-scale attribute-driven dataset to
TSV files: user preferences and item attributes share a token vocabulary,
so models that exploit the auxiliary signal have a real edge over plain
collaborative filtering.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .data import IdMap, build_ckg, build_entity_space
from .fusion import FusionPlan
from .model import init_parameters, rec_batch_loss_and_grads
from .propagation import full_neighbor_plan
from .transr import kg_pair_loss_and_grads

GRADCHECK_CONFIG = ModelConfig(
    dim=4,
    layer_dims=(3, 2),
    neighbor_cap=16,
    lr=1e-3,
    l2=0.01,
    dropout=0.0,
    batch_size=4,
    epochs=1,
    patience=1,
    attention_mode="learned",
    fusion=True,
    pretrain_kg=False,
    kg_pretrain_epochs=0,
    precision="float64",
    seed=7,
)


@dataclass
class GradcheckFixture:
    config: ModelConfig
    graph: object
    fusion_plan: FusionPlan
    plan: object
    params: dict
    users_g: np.ndarray
    items_g: np.ndarray
    negs_g: np.ndarray
    kg_valid: np.ndarray
    kg_corrupt: np.ndarray


def gradcheck_fixture(config=None):
    """The 6-entity micro-world with fixed micro-batches for both losses."""
    config = GRADCHECK_CONFIG if config is None else config
    users, items = IdMap(), IdMap()
    for name in ("u0", "u1"):
        users.intern(name)
    for name in ("i0", "i1", "i2"):
        items.intern(name)
    space = build_entity_space(users, items, IdMap(), {})
    token = space.token_global(space.token_map.intern("t0"))
    aux = {space.item_global(0): [token], space.item_global(2): [token]}

    interactions = [(0, 0), (0, 1), (1, 1), (1, 2)]
    graph = build_ckg(
        kg_triples=[],
        train_pairs=np.asarray(interactions, dtype=np.int64),
        aux=aux,
        space=space,
        n_base_relations=0,
        inverse_relations=config.inverse_relations,
    )

    # Fixed micro-batches. Recommendation: each user against one held
    # positive and one item outside their train set.
    users_g = np.asarray([0, 1], dtype=np.int64)
    items_g = np.asarray([space.item_global(0), space.item_global(2)], dtype=np.int64)
    negs_g = np.asarray([space.item_global(2), space.item_global(0)], dtype=np.int64)

    # Knowledge-graph pairs: every other triple, tails corrupted to the
    # smallest entity that keeps the corrupted triple out of the graph.
    kg_valid = graph.triples[::2][:3].copy()
    kg_corrupt = kg_valid.copy()
    for row in range(kg_corrupt.shape[0]):
        h, r, t = (int(v) for v in kg_valid[row])
        for candidate in range(graph.entity_count):
            if candidate != t and (h, r, candidate) not in graph.triple_set:
                kg_corrupt[row, 2] = candidate
                break
        else:
            raise AssertionError("fixture graph too dense to corrupt")

    params = init_parameters(config, graph.entity_count, graph.relation_count)
    return GradcheckFixture(
        config=config,
        graph=graph,
        fusion_plan=FusionPlan.from_aux(aux),
        plan=full_neighbor_plan(graph),
        params=params,
        users_g=users_g,
        items_g=items_g,
        negs_g=negs_g,
        kg_valid=kg_valid,
        kg_corrupt=kg_corrupt,
    )


def combined_loss_fn(fx):
    """Both objectives on the fixture's fixed micro-batches.

    Returns a ``loss_fn(params) -> (loss, grads)`` suitable for the
    finite-difference checker: recommendation BPR (with its L2 term)
    through the full fused propagation, plus the pairwise KG loss.
    """

    def loss_fn(params):
        rec_loss, grads = rec_batch_loss_and_grads(
            params, fx.config, fx.plan, fx.fusion_plan,
            fx.users_g, fx.items_g, fx.negs_g, None,
        )
        kg_loss, d_ent, d_rel, d_proj = kg_pair_loss_and_grads(
            params["entity"], params["relation"], params["proj"],
            fx.kg_valid, fx.kg_corrupt, fx.config.kg_margin,
        )
        grads["entity"] = grads["entity"] + d_ent
        grads["relation"] = grads.get("relation", 0.0) + d_rel
        grads["proj"] = d_proj
        return rec_loss + kg_loss, grads

    return loss_fn


def generate_synthetic(out_dir, seed, n_users=200, n_items=100, n_tokens=20,
                       tokens_per_item=2, prefs_per_user=2, pos_per_user=15,
                       affinity_boost=20.0, popularity_gamma=0.15,
                       noise_tokens=5, noise_per_item=2, noise_frac=0.0):
    """Write an attribute-driven synthetic dataset as TSV files.

    The token vocabulary splits into informative tags and generic ones.
    Every item carries ``tokens_per_item`` informative tokens plus
    ``noise_per_item`` generic tokens (the last ``noise_tokens`` ids), the
    way real tag data mixes descriptive and throwaway labels.  Every user
    prefers ``prefs_per_user`` informative tokens and interacts mostly with
    items that share them, modulated by a mild popularity skew; a
    ``noise_frac`` share of each history is drawn by popularity alone, the
    accidental-click analogue.  A coverage pass guarantees each item
    appears in at least one interaction so the data loader sees the full
    item vocabulary.  Returns the directory path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    n_informative = n_tokens - noise_tokens
    item_tokens = [
        np.sort(rng.choice(n_informative, size=tokens_per_item, replace=False))
        for _ in range(n_items)
    ]
    item_noise = [
        np.sort(n_informative
                + rng.choice(noise_tokens, size=noise_per_item, replace=False))
        for _ in range(n_items)
    ]
    user_prefs = [
        set(rng.choice(n_informative, size=prefs_per_user, replace=False).tolist())
        for _ in range(n_users)
    ]
    overlap = np.zeros((n_users, n_items))
    for i, toks in enumerate(item_tokens):
        for u in range(n_users):
            overlap[u, i] = sum(1 for t in toks if int(t) in user_prefs[u])
    popularity = (1.0 / np.arange(1, n_items + 1)) ** popularity_gamma

    chosen = [set() for _ in range(n_users)]
    # Coverage pass: give every item one owner, preferring matching users.
    for i in range(n_items):
        w = 1.0 + affinity_boost * overlap[:, i]
        u = int(rng.choice(n_users, p=w / w.sum()))
        chosen[u].add(i)
    # Fill pass: grow each user's history toward the target size.
    for u in range(n_users):
        while len(chosen[u]) < pos_per_user:
            if noise_frac > 0.0 and rng.random() < noise_frac:
                w = popularity.copy()
            else:
                w = popularity * (1.0 + affinity_boost * overlap[u])
            remaining = np.asarray(
                [i for i in range(n_items) if i not in chosen[u]], dtype=np.int64
            )
            probs = w[remaining] / w[remaining].sum()
            i = int(rng.choice(remaining, p=probs))
            chosen[u].add(i)

    with (out_dir / "interactions.tsv").open("w", encoding="utf-8") as fh:
        for u in range(n_users):
            for i in sorted(chosen[u]):
                fh.write(f"u{u}\ti{i}\n")
    with (out_dir / "aux.tsv").open("w", encoding="utf-8") as fh:
        for i in range(n_items):
            for t in sorted(item_tokens[i].tolist() + item_noise[i].tolist()):
                fh.write(f"i{i}\ttok{int(t)}\n")
    return out_dir
