"""Data loading, the collaborative graph, splits, and samplers.

Input files are TSV with '#' comment lines (UTF-8, LF): interactions.tsv
(user<TAB>item), kg.tsv (head<TAB>relation<TAB>tail), aux.tsv
(entity<TAB>token), optional item_map.tsv (item<TAB>entity). Users, items,
graph entities, and auxiliary tokens are remapped into one global entity
index space; relation 0 is the reserved interaction edge and relation 1
the reserved auxiliary edge.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

INTERACT_RELATION = 0
HAS_AUX_RELATION = 1
RESERVED_RELATIONS = 2

KG_NEGATIVE_ATTEMPTS = 100


def _read_rows(path, n_fields, what):
    """Parse a TSV file into tuples of exactly n_fields, tracking line numbers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    rows = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != n_fields or any(p == "" for p in parts):
                raise DataError(
                    f"{path.name}:{lineno}: expected {n_fields} tab-separated "
                    f"fields, got {stripped!r}"
                )
            rows.append((lineno, tuple(parts)))
    return rows


class IdMap:
    """Order-preserving raw-name -> dense-index map."""

    def __init__(self):
        self.index = {}
        self.names = []

    def intern(self, name):
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.index[name] = idx
            self.names.append(name)
        return idx

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.index


def load_interactions(path):
    """(user, item) pairs in file order, deduplicated, plus id maps."""
    rows = _read_rows(path, 2, "interactions")
    if not rows:
        raise DataError(f"interactions file is empty: {path}")
    users, items = IdMap(), IdMap()
    pairs = []
    seen = set()
    for _, (raw_u, raw_i) in rows:
        u = users.intern(raw_u)
        i = items.intern(raw_i)
        if (u, i) not in seen:
            seen.add((u, i))
            pairs.append((u, i))
    return pairs, users, items


def load_kg_triples(path):
    """Deduplicated (head, relation, tail) triples plus id maps.

    A missing file is treated as an empty graph (interaction-only runs).
    """
    entities, relations = IdMap(), IdMap()
    if not Path(path).exists():
        return [], entities, relations
    rows = _read_rows(path, 3, "knowledge graph")
    triples = []
    seen = set()
    for _, (raw_h, raw_r, raw_t) in rows:
        h = entities.intern(raw_h)
        r = relations.intern(raw_r)
        t = entities.intern(raw_t)
        if (h, r, t) not in seen:
            seen.add((h, r, t))
            triples.append((h, r, t))
    return triples, entities, relations


def load_item_map(path):
    """Optional item<TAB>entity alignment; absent file means no aliasing."""
    if not Path(path).exists():
        return {}
    rows = _read_rows(path, 2, "item map")
    mapping = {}
    for lineno, (raw_item, raw_entity) in rows:
        if raw_item in mapping and mapping[raw_item] != raw_entity:
            raise DataError(f"item_map.tsv:{lineno}: conflicting entry for {raw_item!r}")
        mapping[raw_item] = raw_entity
    return mapping


@dataclass
class EntitySpace:
    """Global entity index layout: users, then items, then graph-only
    entities, then auxiliary tokens."""

    n_users: int
    n_items: int
    kg_global: dict            # raw kg entity name -> global id
    token_map: IdMap
    n_kg_extra: int

    @property
    def token_base(self):
        return self.n_users + self.n_items + self.n_kg_extra

    @property
    def total(self):
        return self.token_base + len(self.token_map)

    def user_global(self, u):
        return u

    def item_global(self, i):
        return self.n_users + i

    def token_global(self, t):
        return self.token_base + t


def build_entity_space(users, items, kg_entities, item_map, token_map=None):
    """Remap all namespaces into one global index space.

    item_map aliases raw item names to raw kg entity names so the aligned
    pair shares one global id; unmapped kg entities get fresh ids.
    """
    for raw_item, raw_entity in item_map.items():
        if raw_item not in items:
            raise DataError(f"item map references unknown item {raw_item!r}")
        if raw_entity not in kg_entities:
            raise DataError(f"item map references unknown graph entity {raw_entity!r}")
    entity_alias = {raw_e: items.index[raw_i] for raw_i, raw_e in item_map.items()}

    n_users, n_items = len(users), len(items)
    kg_global = {}
    next_extra = n_users + n_items
    for name in kg_entities.names:
        if name in entity_alias:
            kg_global[name] = n_users + entity_alias[name]
        else:
            kg_global[name] = next_extra
            next_extra += 1
    return EntitySpace(
        n_users=n_users,
        n_items=n_items,
        kg_global=kg_global,
        token_map=token_map if token_map is not None else IdMap(),
        n_kg_extra=next_extra - n_users - n_items,
    )


def load_auxiliary(path, space, items):
    """entity -> auxiliary-token lists over global ids.

    Entity names resolve first against graph entities, then raw item names;
    anything else is an error naming the reference. Token lists are
    deduplicated in file order. A missing file yields an empty map.
    """
    aux = {}
    if not Path(path).exists():
        return aux
    rows = _read_rows(path, 2, "auxiliary")
    for lineno, (raw_entity, raw_token) in rows:
        if raw_entity in space.kg_global:
            entity = space.kg_global[raw_entity]
        elif raw_entity in items:
            entity = space.item_global(items.index[raw_entity])
        else:
            raise DataError(
                f"aux.tsv:{lineno}: unknown entity reference {raw_entity!r}"
            )
        token = space.token_global(space.token_map.intern(raw_token))
        bucket = aux.setdefault(entity, [])
        if token not in bucket:
            bucket.append(token)
    return aux


@dataclass
class InteractionDataset:
    """Per-user train/validation/test positives over dense item ids."""

    n_users: int
    n_items: int
    train_pos: list             # list of sorted int arrays
    val_pos: list
    test_pos: list
    train_sets: list = field(default_factory=list)

    def __post_init__(self):
        if not self.train_sets:
            self.train_sets = [frozenset(arr.tolist()) for arr in self.train_pos]

    @property
    def item_universe(self):
        return np.arange(self.n_items, dtype=np.int64)

    def train_pairs(self):
        """(P, 2) array of every (user, item) train positive."""
        pairs = [
            (u, i)
            for u in range(self.n_users)
            for i in self.train_pos[u].tolist()
        ]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_interactions(pairs, seed):
    """Seeded per-user split: ceil(0.8 n) to a train pool, the rest to
    test; then max(1, round(0.1 * pool)) of the pool moves to validation
    when the pool has at least 2 items."""
    by_user = {}
    n_items = 0
    for u, i in pairs:
        by_user.setdefault(u, []).append(i)
        n_items = max(n_items, i + 1)
    n_users = max(by_user) + 1 if by_user else 0
    if len(by_user) != n_users:
        missing = sorted(set(range(n_users)) - set(by_user))
        raise DataError(f"users with no interactions: {missing[:5]}")

    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for u in range(n_users):
        items = np.asarray(by_user[u], dtype=np.int64)
        order = rng.permutation(len(items))
        shuffled = items[order]
        n_pool = math.ceil(0.8 * len(items))
        pool, test_items = shuffled[:n_pool], shuffled[n_pool:]
        if n_pool >= 2:
            n_val = max(1, _round_half_up(0.1 * n_pool))
        else:
            n_val = 0
        val_items, train_items = pool[:n_val], pool[n_val:]
        train.append(np.sort(train_items))
        val.append(np.sort(val_items))
        test.append(np.sort(test_items))
    return InteractionDataset(
        n_users=n_users, n_items=n_items,
        train_pos=train, val_pos=val, test_pos=test,
    )


@dataclass(frozen=True)
class CollaborativeKG:
    """Deduplicated triple store with a head-anchored neighbor index.

    Triples are lexsorted by (head, relation, tail); head_offsets is the
    CSR row pointer over that order, so an entity's neighborhood is one
    contiguous slice.
    """

    triples: np.ndarray          # (T, 3) int64
    head_offsets: np.ndarray     # (entity_count + 1,) int64
    entity_count: int
    relation_count: int
    triple_set: frozenset

    def neighbor_slice(self, h):
        return self.triples[self.head_offsets[h]:self.head_offsets[h + 1]]

    def degree(self, h):
        return int(self.head_offsets[h + 1] - self.head_offsets[h])


def build_ckg(kg_triples, train_pairs, aux, space, n_base_relations,
              inverse_relations=True):
    """Union the graph triples, interaction edges, and auxiliary edges,
    then optionally mirror every triple under a paired inverse relation.

    kg_triples carry global entity ids and relation ids local to the
    loaded graph; relations are shifted past the two reserved ones.
    train_pairs are dense (user, item); aux maps global entity -> token
    list (pass {} to build without the auxiliary edges).
    """
    triples = set()
    for h, r, t in kg_triples:
        triples.add((h, r + RESERVED_RELATIONS, t))
    for u, i in train_pairs:
        triples.add((space.user_global(u), INTERACT_RELATION, space.item_global(i)))
    for entity, tokens in aux.items():
        for token in tokens:
            triples.add((entity, HAS_AUX_RELATION, token))

    total_base = n_base_relations + RESERVED_RELATIONS
    if inverse_relations:
        triples |= {(t, r + total_base, h) for h, r, t in triples}
        relation_count = 2 * total_base
    else:
        relation_count = total_base

    entity_count = space.total
    arr = np.asarray(sorted(triples), dtype=np.int64).reshape(-1, 3)
    if arr.shape[0] and (arr[:, [0, 2]].max() >= entity_count or arr[:, 1].max() >= relation_count):
        raise DataError("triple index exceeds configured entity/relation space")
    offsets = np.zeros(entity_count + 1, dtype=np.int64)
    np.add.at(offsets, arr[:, 0] + 1, 1)
    np.cumsum(offsets, out=offsets)
    return CollaborativeKG(
        triples=arr,
        head_offsets=offsets,
        entity_count=entity_count,
        relation_count=relation_count,
        triple_set=frozenset(map(tuple, arr.tolist())),
    )


def neighbors(g, h, cap, rng):
    """The sampled neighborhood of h: all triples with head h when the
    degree fits under cap, else a uniform sample without replacement."""
    block = g.neighbor_slice(h)
    if block.shape[0] <= cap:
        return block
    chosen = np.sort(rng.choice(block.shape[0], size=cap, replace=False))
    return block[chosen]


def sample_kg_negative(g, triple, rng):
    """Corrupt the tail with a uniform entity until the result leaves the
    graph; gives up after a fixed number of attempts on dense graphs."""
    h, r, _ = triple
    for _ in range(KG_NEGATIVE_ATTEMPTS):
        t_new = int(rng.integers(g.entity_count))
        if (h, r, t_new) not in g.triple_set:
            return (h, r, t_new)
    raise DataError(
        f"no corrupt tail found for ({h}, {r}, *) after "
        f"{KG_NEGATIVE_ATTEMPTS} attempts; graph too dense"
    )


def sample_rec_negative(data, u, rng):
    """Uniform item the user has not interacted with in training."""
    positives = data.train_sets[u]
    if len(positives) >= data.n_items:
        raise DataError(f"user {u} has interacted with every item")
    while True:
        j = int(rng.integers(data.n_items))
        if j not in positives:
            return j


@dataclass
class LoadedData:
    """Everything produced from one data directory."""

    dataset: InteractionDataset
    graph: CollaborativeKG
    aux: dict
    space: EntitySpace
    users: IdMap
    items: IdMap
    relations: IdMap

    @property
    def relation_names(self):
        names = ["interact", "has_aux"] + list(self.relations.names)
        if self.graph.relation_count == 2 * len(names):
            names += [f"{n}_inv" for n in names]
        return names


def load_dataset(data_dir, seed, fusion=True, inverse_relations=True):
    """Load a data directory, split interactions, and build the graph.

    With fusion off the aux file is ignored entirely (no token entities are
    interned), so the build matches an empty auxiliary map bit for bit.
    """
    data_dir = Path(data_dir)
    pairs, users, items = load_interactions(data_dir / "interactions.tsv")
    kg_triples, kg_entities, relations = load_kg_triples(data_dir / "kg.tsv")
    item_map = load_item_map(data_dir / "item_map.tsv")
    space = build_entity_space(users, items, kg_entities, item_map)
    aux = load_auxiliary(data_dir / "aux.tsv", space, items) if fusion else {}

    global_of = [space.kg_global[name] for name in kg_entities.names]
    kg_global_triples = [(global_of[h], r, global_of[t]) for h, r, t in kg_triples]

    dataset = split_interactions(pairs, seed)
    graph = build_ckg(
        kg_global_triples,
        dataset.train_pairs(),
        aux,
        space,
        n_base_relations=len(relations),
        inverse_relations=inverse_relations,
    )
    return LoadedData(
        dataset=dataset, graph=graph, aux=aux, space=space,
        users=users, items=items, relations=relations,
    )
