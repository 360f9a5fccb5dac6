"""Ranking metrics, the full-ranking evaluation protocol, and baselines.

Each user with test positives ranks every item outside their train set;
Recall@K, NDCG@K (binary gains), and exact pairwise AUC are averaged over
users in fixed user-id order, so reports are independent of how many
worker threads computed the per-user rows.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .data import sample_rec_negative
from .errors import DataError, DivergenceError, KgaxError
from .numeric import AdamState, adam_step, sigmoid, softplus, xavier_init


def recall_at_k(ranked, relevant, k):
    """|top-K hits| / |relevant|."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise KgaxError("recall_at_k: empty relevant set")
    if k < 1:
        raise KgaxError(f"recall_at_k: k must be >= 1, got {k}")
    hits = sum(1 for i in list(ranked)[:k] if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k):
    """Binary-gain DCG@K over the ideal DCG (relevant packed at the top)."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise KgaxError("ndcg_at_k: empty relevant set")
    if k < 1:
        raise KgaxError(f"ndcg_at_k: k must be >= 1, got {k}")
    dcg = 0.0
    for rank, item in enumerate(list(ranked)[:k], start=1):
        if int(item) in relevant:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def auc(pos_scores, neg_scores):
    """Exact pairwise AUC; ties count half."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise KgaxError("auc: empty score list")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (pos.size * neg.size))


def rank_candidates(scores, exclude):
    """Item ids not in ``exclude``, best score first, ties by ascending id.

    ``scores`` covers every item densely; ``exclude`` is the user's train
    positives.
    """
    n_items = scores.shape[0]
    candidates = np.setdiff1d(
        np.arange(n_items, dtype=np.int64), np.asarray(exclude, dtype=np.int64),
        assume_unique=False,
    )
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


def mean_val_recall_at_k(score_matrix, dataset, k):
    """Mean Recall@k against validation positives; None without val users.

    The early-stopping metric: same ranking rules as the test protocol.
    """
    totals = []
    for u in range(dataset.n_users):
        relevant = dataset.val_pos[u]
        if relevant.shape[0] == 0:
            continue
        ranked = rank_candidates(score_matrix[u], dataset.train_pos[u])
        totals.append(recall_at_k(ranked, relevant, k))
    if not totals:
        return None
    return float(np.mean(totals))


@dataclass
class EvalReport:
    """Metric means, per-user details, and run context."""

    ks: tuple
    user_count: int
    means: dict
    per_user: list = field(repr=False)
    wall_time_s: float
    seed: object = None
    kind: str = "unknown"
    config_echo: dict = field(default_factory=dict)

    def to_csv_text(self):
        cols = ["user"]
        for k in self.ks:
            cols.append(f"recall@{k}")
        for k in self.ks:
            cols.append(f"ndcg@{k}")
        cols.append("auc")
        lines = [",".join(cols)]
        for row in self.per_user:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row))
        return "\n".join(lines) + "\n"

    def to_json_text(self):
        # Wall time deliberately omitted: the summary must be byte-stable
        # across reruns of the same seed.
        payload = {
            "ks": list(self.ks),
            "user_count": self.user_count,
            "metrics": self.means,
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config_echo,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _user_row(u, scores, dataset, ks):
    train_pos = dataset.train_pos[u]
    test_pos = dataset.test_pos[u]
    ranked = rank_candidates(scores, train_pos)
    assert np.intersect1d(ranked, train_pos).size == 0
    row = [u]
    for k in ks:
        row.append(recall_at_k(ranked, test_pos, k))
    for k in ks:
        row.append(ndcg_at_k(ranked, test_pos, k))
    neg_items = np.setdiff1d(ranked, test_pos, assume_unique=False)
    row.append(auc(scores[test_pos], scores[neg_items]))
    return row


def evaluate(model, data, ks=(5, 10, 20, 50), n_threads=1):
    """Full-ranking evaluation over every user with test positives.

    ``model`` is anything with a ``score_matrix(data)`` method.  Per-user
    rows may be computed by a thread pool; the reduction runs in user-id
    order either way so the report does not depend on ``n_threads``.
    """
    t0 = time.perf_counter()
    dataset = data.dataset
    ks = tuple(int(k) for k in ks)
    if not ks or any(k < 1 for k in ks):
        raise KgaxError(f"evaluate: bad K list {ks}")
    matrix = model.score_matrix(data)
    users = [u for u in range(dataset.n_users) if dataset.test_pos[u].shape[0]]
    if not users:
        raise DataError("evaluate: no users with test positives")

    def work(u):
        return _user_row(u, matrix[u], dataset, ks)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            per_user = list(pool.map(work, users))
    else:
        per_user = [work(u) for u in users]

    means = {}
    n_metrics = 2 * len(ks) + 1
    for j in range(n_metrics):
        col = [row[1 + j] for row in per_user]
        name = (f"recall@{ks[j]}" if j < len(ks)
                else f"ndcg@{ks[j - len(ks)]}" if j < 2 * len(ks)
                else "auc")
        means[name] = float(np.mean(col))

    config = getattr(model, "config", None)
    return EvalReport(
        ks=ks,
        user_count=len(users),
        means=means,
        per_user=per_user,
        wall_time_s=time.perf_counter() - t0,
        seed=None if config is None else config.seed,
        kind=getattr(model, "kind", "unknown"),
        config_echo={} if config is None else config.echo_dict(),
    )


def mf_baseline_train(data, config):
    """BPR matrix factorization under the exact seed schedule of the full
    model: same init stream, same shuffle/negative streams, same Adam, same
    early stopping.  No graph, no propagation, no fusion.

    Deliberately a from-scratch loop rather than a call into the full
    trainer, so the depth-0 reduction can be cross-checked against it.
    """
    from .model import TrainedModel  # local import keeps the module graph acyclic

    config.validate()
    seed = config.seed
    dataset = data.dataset
    table = xavier_init(
        (data.space.total, config.dim),
        streams.stream_rng(seed, streams.INIT_ENTITY), config.dtype,
    )
    adam = AdamState()
    pairs = dataset.train_pairs()
    if pairs.shape[0] == 0:
        raise DataError("empty train split: nothing to optimize")
    users_g = pairs[:, 0]
    items_g = pairs[:, 1] + dataset.n_users

    best_val = -np.inf
    best_table = None
    bad_epochs = 0
    for epoch in range(1, config.epochs + 1):
        order = streams.stream_rng(seed, streams.REC_SHUFFLE, epoch).permutation(
            pairs.shape[0]
        )
        neg_rng = streams.stream_rng(seed, streams.REC_NEGATIVE, epoch)
        for b, start in enumerate(range(0, order.shape[0], config.batch_size)):
            idx = order[start:start + config.batch_size]
            bu = users_g[idx]
            bi = items_g[idx]
            bj = np.asarray(
                [sample_rec_negative(dataset, int(u), neg_rng) for u in bu],
                dtype=np.int64,
            ) + dataset.n_users

            eu, ei, ej = table[bu], table[bi], table[bj]
            x = np.einsum("bd,bd->b", eu, ei - ej)
            coeff = ((sigmoid(x) - 1.0) / x.shape[0]).astype(table.dtype)[:, None]
            grad = np.zeros_like(table)
            np.add.at(grad, bu, coeff * (ei - ej))
            np.add.at(grad, bi, coeff * eu)
            np.add.at(grad, bj, -coeff * eu)
            rows = np.unique(np.concatenate([bu, bi, bj]))
            theta_sq = float(np.sum(table[rows].astype(np.float64) ** 2))
            if config.l2 > 0.0:
                grad[rows] += table.dtype.type(2.0 * config.l2) * table[rows]
            loss = float(np.mean(softplus(-x))) + config.l2 * theta_sq
            if not np.isfinite(loss):
                raise DivergenceError(f"mf epoch {epoch} batch {b + 1}: "
                                      f"non-finite loss")
            adam_step({"entity": table}, {"entity": grad}, adam, config.lr)

        n_users, n_items = dataset.n_users, dataset.n_items
        matrix = table[:n_users] @ table[n_users:n_users + n_items].T
        val = mean_val_recall_at_k(matrix, dataset, 20)
        if val is None:
            continue
        if val > best_val:
            best_val = val
            best_table = table.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    return TrainedModel(
        config=config,
        params={"entity": table if best_table is None else best_table},
        kind="mf",
    )


class PopularityModel:
    """Non-personalized baseline: every user sees items by train count."""

    kind = "popularity"

    def score_matrix(self, data):
        dataset = data.dataset
        counts = np.zeros(dataset.n_items, dtype=np.float64)
        for u in range(dataset.n_users):
            counts[dataset.train_pos[u]] += 1.0
        return np.broadcast_to(counts, (dataset.n_users, dataset.n_items)).copy()


class RandomScorer:
    """Uniform random scores; the sanity floor for ranking metrics."""

    kind = "random"

    def __init__(self, seed):
        self.seed = int(seed)

    def score_matrix(self, data):
        rng = np.random.default_rng(self.seed)
        return rng.random((data.dataset.n_users, data.dataset.n_items))
