"""The recommender: parameters, forward/backward, training loop, persistence.

Parameters live in a flat ``{name: ndarray}`` dict:

* ``entity``    (entity_count, d)   shared by TransR, fusion, and layer 0
* ``relation``  (relation_count, d) shared by TransR and propagation
* ``proj``      (relation_count, d, d) TransR projections
* ``layer{l}.w1 / .w2 / .w_agg``     per propagation layer, l = 0..L-1

Training alternates all recommendation batches with one KG pass per epoch,
tracks validation Recall@20 for early stopping, and restores the best
snapshot.  Everything stochastic draws from named streams keyed off the
config seed, so runs are exactly reproducible.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .config import ModelConfig, build_config, parse_config_lines
from .data import sample_rec_negative
from .errors import (
    BadMagicError,
    DataError,
    DivergenceError,
    ModelFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .evaluation import mean_val_recall_at_k
from .fusion import FusionPlan, fused_base, fused_base_backward
from .numeric import AdamState, adam_step, dot, sigmoid, softplus, xavier_init
from .propagation import (
    build_neighbor_plan,
    concat_layers,
    propagate_layer,
    propagate_layer_backward,
)
from .transr import kg_epoch

MODEL_MAGIC = b"KGAX"
MODEL_VERSION = 1
EARLY_STOP_K = 20


def layer_param_names(depth):
    names = []
    for l in range(depth):
        names += [f"layer{l}.w1", f"layer{l}.w2", f"layer{l}.w_agg"]
    return names


def dim_chain(config):
    """Per-layer input dims: chain[l] feeds layer l, chain[-1] is the top."""
    return [config.dim] + list(config.layer_dims)


def init_parameters(config, entity_count, relation_count):
    """Xavier-initialized parameter dict in the configured precision.

    Projections start at the identity plus a small Xavier perturbation so
    early TransR scores behave like plain translations.  Every array draws
    from its own named stream, so adding or removing one consumer never
    shifts the others.
    """
    dtype = config.dtype
    seed = config.seed
    d = config.dim
    params = {
        "entity": xavier_init(
            (entity_count, d), streams.stream_rng(seed, streams.INIT_ENTITY), dtype
        ),
        "relation": xavier_init(
            (relation_count, d), streams.stream_rng(seed, streams.INIT_RELATION), dtype
        ),
    }
    proj_rng = streams.stream_rng(seed, streams.INIT_PROJECTION)
    eye = np.eye(d, dtype=dtype)
    perturb = 0.1 * xavier_init((relation_count, d, d), proj_rng, dtype)
    params["proj"] = eye[None, :, :] + perturb

    chain = dim_chain(config)
    for l in range(config.depth):
        p, q = chain[l], chain[l + 1]
        layer_rng = streams.stream_rng(seed, streams.INIT_LAYER, l)
        params[f"layer{l}.w1"] = xavier_init((p, 2 * p + d), layer_rng, dtype)
        params[f"layer{l}.w2"] = xavier_init((1, p), layer_rng, dtype)
        params[f"layer{l}.w_agg"] = xavier_init((q, 2 * p), layer_rng, dtype)
    return params


def layer_views(params, depth):
    return [
        (params[f"layer{l}.w1"], params[f"layer{l}.w2"], params[f"layer{l}.w_agg"])
        for l in range(depth)
    ]


@dataclass
class ForwardCache:
    reps: list
    layer_caches: list
    fusion_means: object


def propagate_embeddings(params, config, plan, fusion_plan, drop_scales=None):
    """Full forward pass to e*: fused base, L layers, concatenation.

    ``drop_scales`` is a per-layer list of (entity_count,) dropout scale
    vectors, or None at evaluation.  Returns ``(estar, ForwardCache)``.
    """
    h, means = fused_base(params["entity"], fusion_plan)
    reps = [h]
    caches = []
    for l, (w1, w2, w_agg) in enumerate(layer_views(params, config.depth)):
        scale = drop_scales[l] if drop_scales is not None else None
        h, cache = propagate_layer(
            h, params["relation"], w1, w2, w_agg, plan,
            config.leaky_slope, config.attention_mode, scale,
        )
        reps.append(h)
        caches.append(cache)
    return concat_layers(reps), ForwardCache(reps, caches, means)


def propagate_backward(g_estar, fwd, params, config, plan, fusion_plan):
    """Backprop d loss / d e* into a gradient dict mirroring the params.

    At depth 0 only the entity gradient exists.  In uniform attention mode
    the W2 entries are omitted entirely (they receive no gradient).
    """
    chain = dim_chain(config)
    bounds = np.cumsum([0] + chain)
    blocks = [
        np.ascontiguousarray(g_estar[:, bounds[i]:bounds[i + 1]])
        for i in range(len(chain))
    ]

    grads = {}
    depth = config.depth
    learned = config.attention_mode != "uniform"
    if depth:
        grads["relation"] = np.zeros_like(params["relation"])
        for l in range(depth):
            grads[f"layer{l}.w1"] = np.zeros_like(params[f"layer{l}.w1"])
            grads[f"layer{l}.w_agg"] = np.zeros_like(params[f"layer{l}.w_agg"])
            if learned:
                grads[f"layer{l}.w2"] = np.zeros_like(params[f"layer{l}.w2"])

    g = blocks[-1]
    views = layer_views(params, depth)
    for l in reversed(range(depth)):
        w1, w2, w_agg = views[l]
        g_prev = propagate_layer_backward(
            g, fwd.layer_caches[l], w1, w2, w_agg, plan,
            config.leaky_slope, config.attention_mode,
            grads[f"layer{l}.w1"],
            grads[f"layer{l}.w2"] if learned else np.zeros_like(w2),
            grads[f"layer{l}.w_agg"],
            grads["relation"],
        )
        g = g_prev + blocks[l]
    grads["entity"] = fused_base_backward(
        g, params["entity"], fusion_plan, fwd.fusion_means
    )
    return grads


def predict_score(e_u_star, e_i_star):
    """Similarity of one user/item pair: the inner product of their e*."""
    return dot(e_u_star, e_i_star)


def bpr_pair_loss(y_pos, y_neg, l2=0.0, theta_sq=0.0):
    """Pairwise ranking loss: -ln sigma(y_pos - y_neg) + l2 * theta_sq."""
    return float(softplus(-(y_pos - y_neg))) + l2 * theta_sq


def _batch_l2(params, config, rows, grads):
    """Per-batch squared parameter norm and its gradient contribution.

    Theta covers the distinct entity rows touched by the batch plus every
    layer matrix (W2 only when attention is learned); relation and
    projection tables are regularized by neither objective.
    """
    l2 = config.l2
    entity = params["entity"]
    theta_sq = float(np.sum(entity[rows].astype(np.float64) ** 2))
    mats = []
    for l in range(config.depth):
        mats.append(f"layer{l}.w1")
        mats.append(f"layer{l}.w_agg")
        if config.attention_mode != "uniform":
            mats.append(f"layer{l}.w2")
    for name in mats:
        theta_sq += float(np.sum(params[name].astype(np.float64) ** 2))
    if l2 > 0.0 and grads is not None:
        scale = entity.dtype.type(2.0 * l2)
        grads["entity"][rows] += scale * entity[rows]
        for name in mats:
            grads[name] += scale * params[name]
    return theta_sq


def rec_batch_loss_and_grads(params, config, plan, fusion_plan,
                             users_g, items_g, negs_g, drop_scales=None):
    """BPR loss and full-parameter gradients for one (u, i, j) batch.

    Global entity ids index e* directly.  The loss is the batch mean of
    ``-ln sigma(y_ui - y_uj)`` plus ``l2`` times the batch's squared
    parameter norm.
    """
    estar, fwd = propagate_embeddings(params, config, plan, fusion_plan, drop_scales)
    eu, ei, ej = estar[users_g], estar[items_g], estar[negs_g]
    x = np.einsum("bd,bd->b", eu, ei - ej)
    base_loss = float(np.mean(softplus(-x)))

    n = x.shape[0]
    coeff = ((sigmoid(x) - 1.0) / n).astype(estar.dtype)[:, None]
    g_estar = np.zeros_like(estar)
    np.add.at(g_estar, users_g, coeff * (ei - ej))
    np.add.at(g_estar, items_g, coeff * eu)
    np.add.at(g_estar, negs_g, -coeff * eu)

    grads = propagate_backward(g_estar, fwd, params, config, plan, fusion_plan)
    rows = np.unique(np.concatenate([users_g, items_g, negs_g]))
    theta_sq = _batch_l2(params, config, rows, grads)
    return base_loss + config.l2 * theta_sq, grads


def _draw_drop_scales(config, entity_count, rng):
    """Per-layer message-dropout multipliers: 0 drops, 1/(1-p) rescales."""
    if config.dropout <= 0.0 or config.depth == 0:
        return None
    dtype = config.dtype
    keep_scale = dtype(1.0 / (1.0 - config.dropout))
    scales = []
    for _ in range(config.depth):
        keep = rng.random(entity_count) >= config.dropout
        scales.append(keep.astype(dtype) * keep_scale)
    return scales


@dataclass
class TrainedModel:
    """A trained parameter set plus enough context to score users."""

    config: ModelConfig
    params: dict
    kind: str = "kgat"
    best_epoch: int = 0
    _estar_cache: object = field(default=None, repr=False, compare=False)

    def entity_star(self, data):
        """Evaluation-mode e* for every entity (dropout off, seeded plan)."""
        if self.kind == "mf":
            return self.params["entity"]
        token = id(data.graph)
        if self._estar_cache is not None and self._estar_cache[0] == token:
            return self._estar_cache[1]
        plan = build_neighbor_plan(
            data.graph, self.config.neighbor_cap,
            streams.stream_rng(self.config.seed, streams.EVAL_NEIGHBORS),
        )
        fusion_plan = _fusion_plan_for(self.config, data)
        estar, _ = propagate_embeddings(self.params, self.config, plan, fusion_plan)
        self._estar_cache = (token, estar)
        return estar

    def score_matrix(self, data):
        """(n_users, n_items) matrix of predicted preferences."""
        estar = self.entity_star(data)
        n_users = data.dataset.n_users
        n_items = data.dataset.n_items
        users = estar[:n_users]
        items = estar[n_users:n_users + n_items]
        return users @ items.T

    def invalidate_cache(self):
        self._estar_cache = None


def _fusion_plan_for(config, data):
    if config.fusion and data.aux:
        return FusionPlan.from_aux(data.aux)
    return None


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def train(data, config):
    """Alternating optimization; returns ``(TrainedModel, epoch_rows)``.

    Each epoch runs every recommendation batch (fresh negatives, message
    dropout) and then, when the KG objective is enabled, one full KG pass.
    Validation Recall@20 drives early stopping with strict improvement;
    the best snapshot is restored before returning.  Epoch rows are
    ``(epoch, rec_loss, kg_loss, val_recall, elapsed_ms)``.
    """
    config.validate()
    seed = config.seed
    graph = data.graph
    dataset = data.dataset
    params = init_parameters(config, graph.entity_count, graph.relation_count)
    adam = AdamState()
    fusion_plan = _fusion_plan_for(config, data)

    train_pairs = dataset.train_pairs()
    if train_pairs.shape[0] == 0:
        raise DataError("empty train split: nothing to optimize")
    users_g = train_pairs[:, 0]
    items_g = train_pairs[:, 1] + dataset.n_users

    if config.pretrain_kg and config.kg_pretrain_epochs > 0:
        for e in range(config.kg_pretrain_epochs):
            try:
                kg_epoch(params, graph, config, adam, seed, e,
                         streams.KG_PHASE_PRETRAIN)
            except DivergenceError as err:
                raise DivergenceError(f"kg pretrain epoch {e + 1}: {err}") from err

    best_val = -np.inf
    best_params = None
    best_epoch = 0
    bad_epochs = 0
    rows = []
    model = TrainedModel(config=config, params=params)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        plan = None
        if config.depth:
            plan = build_neighbor_plan(
                graph, config.neighbor_cap,
                streams.stream_rng(seed, streams.NEIGHBORS, epoch),
            )
        order = streams.stream_rng(seed, streams.REC_SHUFFLE, epoch).permutation(
            train_pairs.shape[0]
        )
        neg_rng = streams.stream_rng(seed, streams.REC_NEGATIVE, epoch)

        total = 0.0
        for b, start in enumerate(range(0, order.shape[0], config.batch_size)):
            idx = order[start:start + config.batch_size]
            bu = users_g[idx]
            bi = items_g[idx]
            bj = np.asarray(
                [sample_rec_negative(dataset, int(u), neg_rng) for u in bu],
                dtype=np.int64,
            ) + dataset.n_users
            drop = None
            if config.depth:
                drop = _draw_drop_scales(
                    config, graph.entity_count,
                    streams.stream_rng(seed, streams.DROPOUT, epoch, b),
                )
            try:
                loss, grads = rec_batch_loss_and_grads(
                    params, config, plan, fusion_plan, bu, bi, bj, drop
                )
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite batch loss")
                adam_step(params, grads, adam, config.lr)
            except DivergenceError as err:
                raise DivergenceError(
                    f"epoch {epoch} batch {b + 1}: {err}"
                ) from err
            total += loss * idx.shape[0]
        rec_loss = total / order.shape[0]

        kg_loss = 0.0
        if config.kg_loss:
            try:
                kg_loss = kg_epoch(params, graph, config, adam, seed, epoch,
                                   streams.KG_PHASE_ALTERNATE)
            except DivergenceError as err:
                raise DivergenceError(f"epoch {epoch} kg pass: {err}") from err

        model.invalidate_cache()
        val = mean_val_recall_at_k(model.score_matrix(data), dataset, EARLY_STOP_K)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        rows.append((epoch, rec_loss, kg_loss, 0.0 if val is None else val,
                     elapsed_ms))

        if val is None:
            continue  # no validation users: run every epoch, keep the last
        if val > best_val:
            best_val = val
            best_params = _snapshot(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    if best_params is not None:
        model.params = best_params
        model.best_epoch = best_epoch
        model.invalidate_cache()
    return model, rows


def recommend_topk(model, data, user, k):
    """Top-k (item, score) pairs for a dense user id, excluding train
    positives; descending score, ties broken by ascending item id."""
    dataset = data.dataset
    if not (0 <= user < dataset.n_users):
        raise DataError(f"unknown user id {user}")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    scores = model.score_matrix(data)[user]
    candidates = np.setdiff1d(
        dataset.item_universe, dataset.train_pos[user], assume_unique=True
    )
    order = np.lexsort((candidates, -scores[candidates]))
    top = candidates[order[:k]]
    return [(int(i), float(scores[i])) for i in top]


def _array_order(config, kind, entity_count, relation_count):
    """The documented on-disk array sequence with shapes."""
    d = config.dim
    order = [("entity", (entity_count, d))]
    if kind == "kgat":
        order.append(("relation", (relation_count, d)))
        order.append(("proj", (relation_count, d, d)))
        chain = dim_chain(config)
        for l in range(config.depth):
            p, q = chain[l], chain[l + 1]
            order.append((f"layer{l}.w1", (p, 2 * p + d)))
            order.append((f"layer{l}.w2", (1, p)))
            order.append((f"layer{l}.w_agg", (q, 2 * p)))
    return order


def _wire_dtype(config):
    return np.dtype("<f8") if config.precision == "float64" else np.dtype("<f4")


def save_model(model, path):
    """Serialize magic, version, config text, then raw little-endian arrays."""
    entity_count = model.params["entity"].shape[0]
    relation_count = (
        model.params["relation"].shape[0] if "relation" in model.params else 0
    )
    config_text = (
        model.config.to_text()
        + f"kind={model.kind}\n"
        + f"entity_count={entity_count}\n"
        + f"relation_count={relation_count}\n"
    )
    blob = config_text.encode("utf-8")
    wire = _wire_dtype(model.config)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, shape in _array_order(model.config, model.kind,
                                        entity_count, relation_count):
            arr = model.params[name]
            if arr.shape != shape:
                raise ModelFormatError(
                    f"parameter {name} has shape {arr.shape}, expected {shape}"
                )
            fh.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(
            f"model file truncated reading {what}: wanted {n} bytes, got {len(buf)}"
        )
    return buf


def load_model(path):
    """Parse and validate a model file; inverse of :func:`save_model`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise BadMagicError(
                f"bad magic {magic!r}, expected {MODEL_MAGIC!r}"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "format version"))
        if version != MODEL_VERSION:
            raise VersionMismatchError(
                f"model format version {version}, this build reads {MODEL_VERSION}"
            )
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            text = _read_exact(fh, blob_len, "config block").decode("utf-8")
        except UnicodeDecodeError as err:
            raise ModelFormatError(f"config block is not UTF-8: {err}") from None
        known, extra = parse_config_lines(
            text, allow_extra=("kind", "entity_count", "relation_count")
        )
        config = build_config(known)
        kind = extra.get("kind", "kgat")
        if kind not in ("kgat", "mf"):
            raise ModelFormatError(f"unknown model kind {kind!r}")
        try:
            entity_count = int(extra["entity_count"])
            relation_count = int(extra["relation_count"])
        except KeyError as err:
            raise ModelFormatError(f"config block missing {err} entry") from None
        except ValueError as err:
            raise ModelFormatError(f"bad count in config block: {err}") from None

        wire = _wire_dtype(config)
        params = {}
        for name, shape in _array_order(config, kind, entity_count, relation_count):
            n_bytes = int(np.prod(shape)) * wire.itemsize
            buf = _read_exact(fh, n_bytes, f"array {name}")
            params[name] = (
                np.frombuffer(buf, dtype=wire).reshape(shape).astype(config.dtype)
            )
        trailing = fh.read(1)
        if trailing:
            raise ModelFormatError("unexpected trailing bytes after arrays")
    return TrainedModel(config=config, params=params, kind=kind)
