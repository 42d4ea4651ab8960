"""Datasets, the collaborative graph, splits, and the synthetic generator.

File formats (plain text, whitespace-separated integers):

* interactions: one line per user, ``user item item ...``. An optional first
  line ``# users=<n> items=<n>`` overrides the inferred counts
  (otherwise 1 + the largest observed id).
* kg triples: one ``head relation tail`` per line; optional first line
  ``# entities=<n> relations=<n>``.
* alignment: one ``item entity`` per line; at most one entity per item and
  one item per entity.

Global node ids are assigned in the fixed order users, items, then entities
that have no aligned item; an aligned entity shares its item's node. Forward
relation ids are the KG relations ``0..R-2`` followed by the interaction
relation ``R-1``; relation ``r``'s reverse is ``r + R``.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from ._binio import read_container, write_container
from .errors import AlignmentError, ConfigurationError, EmptyDatasetError, ParseError

_INTER_HEADER = re.compile(r"#\s*users=(\d+)\s+items=(\d+)\s*$")
_KG_HEADER = re.compile(r"#\s*entities=(\d+)\s+relations=(\d+)\s*$")

CKG_MAGIC = b"KGRECCKG"
CKG_VERSION = 1


@dataclass
class InteractionSet:
    """Observed user-item feedback pairs with declared id ranges."""

    user_count: int
    item_count: int
    pairs: set

    def __post_init__(self):
        self.pairs = set(map(tuple, self.pairs))
        for u, i in self.pairs:
            if not (0 <= u < self.user_count and 0 <= i < self.item_count):
                raise ValueError(f"pair ({u},{i}) outside declared counts")

    def by_user(self):
        """Dict of user -> sorted list of interacted items."""
        out = {}
        for u, i in self.pairs:
            out.setdefault(u, []).append(i)
        for items in out.values():
            items.sort()
        return out

    def users(self):
        return sorted({u for u, _ in self.pairs})

    def items(self):
        return sorted({i for _, i in self.pairs})


@dataclass
class TripleSet:
    """Knowledge-graph triples with declared entity/relation id ranges."""

    entity_count: int
    relation_count: int
    triples: list

    def __post_init__(self):
        self.triples = [tuple(t) for t in self.triples]
        for h, r, t in self.triples:
            if not (0 <= h < self.entity_count and 0 <= t < self.entity_count):
                raise ValueError(f"triple ({h},{r},{t}) has entity outside declared count")
            if not 0 <= r < self.relation_count:
                raise ValueError(f"triple ({h},{r},{t}) has relation outside declared count")


@dataclass
class DatasetSplit:
    """A train/test partition of an interaction set."""

    train_pairs: InteractionSet
    test_pairs: InteractionSet
    scenario: str  # "traditional" | "new-item" | "new-user"
    fold_index: int = 0

    def validate(self):
        train, test = self.train_pairs.pairs, self.test_pairs.pairs
        if self.scenario == "traditional":
            train_items = {i for _, i in train}
            missing = {i for _, i in test} - train_items
            if missing:
                raise ValueError(f"traditional split: test items {sorted(missing)[:5]} unseen in train")
        elif self.scenario == "new-item":
            overlap = {i for _, i in train} & {i for _, i in test}
            if overlap:
                raise ValueError(f"new-item split: items {sorted(overlap)[:5]} appear on both sides")
        elif self.scenario == "new-user":
            overlap = {u for u, _ in train} & {u for u, _ in test}
            if overlap:
                raise ValueError(f"new-user split: users {sorted(overlap)[:5]} appear on both sides")
        else:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        return self


def load_interactions(path):
    """Parse an interaction file into an :class:`InteractionSet`."""
    pairs = set()
    max_user = -1
    max_item = -1
    header = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _INTER_HEADER.match(line)
                if m is None or lineno != 1:
                    raise ParseError(f"{path}:{lineno}: bad header/comment line {line!r}")
                header = (int(m.group(1)), int(m.group(2)))
                continue
            tokens = line.split()
            try:
                ids = [int(tok) for tok in tokens]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token in {line!r}") from None
            if any(x < 0 for x in ids):
                raise ParseError(f"{path}:{lineno}: negative id in {line!r}")
            u, items = ids[0], ids[1:]
            max_user = max(max_user, u)
            for i in items:
                max_item = max(max_item, i)
                pairs.add((u, i))
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interaction pairs")
    user_count = max_user + 1
    item_count = max_item + 1
    if header is not None:
        if header[0] < user_count or header[1] < item_count:
            raise ParseError(f"{path}: header counts {header} below observed ids")
        user_count, item_count = header
    return InteractionSet(user_count, item_count, pairs)


def load_kg_triples(path):
    """Parse a ``head relation tail`` file into a :class:`TripleSet`."""
    triples = {}
    max_ent = -1
    max_rel = -1
    header = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _KG_HEADER.match(line)
                if m is None or lineno != 1:
                    raise ParseError(f"{path}:{lineno}: bad header/comment line {line!r}")
                header = (int(m.group(1)), int(m.group(2)))
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tokens, got {len(tokens)}")
            try:
                h, r, t = (int(tok) for tok in tokens)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token in {line!r}") from None
            if min(h, r, t) < 0:
                raise ParseError(f"{path}:{lineno}: negative id in {line!r}")
            triples[(h, r, t)] = None  # dedup, keep first-occurrence order
            max_ent = max(max_ent, h, t)
            max_rel = max(max_rel, r)
    entity_count = max_ent + 1
    relation_count = max_rel + 1
    if header is not None:
        if header[0] < entity_count or header[1] < relation_count:
            raise ParseError(f"{path}: header counts {header} below observed ids")
        entity_count, relation_count = header
    return TripleSet(entity_count, relation_count, list(triples))


def load_alignment(path):
    """Parse an ``item entity`` alignment file into a list of pairs."""
    pairs = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 tokens, got {len(tokens)}")
            try:
                i, e = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token in {line!r}") from None
            pairs[(i, e)] = None
    return list(pairs)


class CollaborativeKG:
    """Immutable multi-relational graph over users, items, and entities.

    Edges are stored CSR-style sorted by (head, relation, tail); every edge
    has its reverse-relation counterpart stored explicitly.
    """

    def __init__(self, n_users, n_items, n_entities, relation_count, entity_node, heads, rels, tails):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.n_entities = int(n_entities)
        self.relation_count = int(relation_count)  # forward relations, incl. interaction
        self.entity_node = np.asarray(entity_node, dtype=np.int64)
        n_unaligned = int((self.entity_node >= self.n_users + self.n_items).sum())
        self.node_count = self.n_users + self.n_items + n_unaligned
        order = np.lexsort((tails, rels, heads))
        self.heads = np.asarray(heads, dtype=np.int64)[order]
        self.rels = np.asarray(rels, dtype=np.int64)[order]
        self.tails = np.asarray(tails, dtype=np.int64)[order]
        counts = np.bincount(self.heads, minlength=self.node_count)
        self.indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        # entity local id for unaligned entity nodes
        self._node_entity = np.full(self.node_count, -1, dtype=np.int64)
        unaligned = self.entity_node >= self.n_users + self.n_items
        self._node_entity[self.entity_node[unaligned]] = np.nonzero(unaligned)[0]

    # --- id layout -------------------------------------------------------

    @property
    def interact_rel(self):
        return self.relation_count - 1

    def reverse_rel(self, r):
        return np.where(r < self.relation_count, r + self.relation_count, r - self.relation_count)

    def user_node(self, u):
        return u

    def item_node(self, i):
        return self.n_users + i

    def entity_node_of(self, e):
        return self.entity_node[e]

    def item_nodes(self):
        return np.arange(self.n_users, self.n_users + self.n_items, dtype=np.int64)

    def node_kind(self, g):
        """("user"|"item"|"entity", local id) for a global node id."""
        if g < self.n_users:
            return "user", g
        if g < self.n_users + self.n_items:
            return "item", g - self.n_users
        return "entity", int(self._node_entity[g])

    def relation_label(self, r):
        base = r if r < self.relation_count else r - self.relation_count
        name = "interact" if base == self.interact_rel else f"rel{base}"
        return name if r < self.relation_count else name + "_rev"

    # --- traversal -------------------------------------------------------

    def out_edges(self, nodes):
        """(heads, rels, tails) of all edges whose head is in ``nodes``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        starts = self.indptr[nodes]
        counts = self.indptr[nodes + 1] - starts
        idx = _flat_ranges(starts, counts)
        return self.heads[idx], self.rels[idx], self.tails[idx]

    def edge_set(self):
        return set(zip(self.heads.tolist(), self.rels.tolist(), self.tails.tolist()))

    # --- persistence -----------------------------------------------------

    def save(self, path):
        meta = {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_entities": self.n_entities,
            "relation_count": self.relation_count,
        }
        arrays = {
            "entity_node": self.entity_node,
            "heads": self.heads,
            "rels": self.rels,
            "tails": self.tails,
        }
        write_container(path, CKG_MAGIC, CKG_VERSION, meta, arrays)

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path, CKG_MAGIC, CKG_VERSION)
        return cls(
            meta["n_users"], meta["n_items"], meta["n_entities"], meta["relation_count"],
            arrays["entity_node"], arrays["heads"], arrays["rels"], arrays["tails"],
        )

    def __eq__(self, other):
        if not isinstance(other, CollaborativeKG):
            return NotImplemented
        return (
            (self.n_users, self.n_items, self.n_entities, self.relation_count)
            == (other.n_users, other.n_items, other.n_entities, other.relation_count)
            and np.array_equal(self.entity_node, other.entity_node)
            and np.array_equal(self.heads, other.heads)
            and np.array_equal(self.rels, other.rels)
            and np.array_equal(self.tails, other.tails)
        )


def _flat_ranges(starts, counts):
    """Concatenate arange(start, start+count) for each (start, count) pair."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    reset = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    return reset + np.arange(total, dtype=np.int64)


def build_ckg(inter, kg, alignment):
    """Merge interactions and KG triples into one reverse-closed graph.

    ``alignment`` is a list of (item, entity) pairs; each aligned entity is
    folded onto its item's node.
    """
    item_of = {}
    ent_of = {}
    for i, e in alignment:
        if not 0 <= i < inter.item_count:
            raise AlignmentError(f"alignment item {i} out of range")
        if not 0 <= e < kg.entity_count:
            raise AlignmentError(f"alignment entity {e} out of range")
        if e in item_of and item_of[e] != i:
            raise AlignmentError(f"entity {e} aligned to items {item_of[e]} and {i}")
        if i in ent_of and ent_of[i] != e:
            raise AlignmentError(f"item {i} aligned to entities {ent_of[i]} and {e}")
        item_of[e] = i
        ent_of[i] = e

    n_users, n_items = inter.user_count, inter.item_count
    entity_node = np.empty(kg.entity_count, dtype=np.int64)
    next_node = n_users + n_items
    for e in range(kg.entity_count):
        if e in item_of:
            entity_node[e] = n_users + item_of[e]
        else:
            entity_node[e] = next_node
            next_node += 1

    relation_count = kg.relation_count + 1
    interact = relation_count - 1

    if inter.pairs:
        up = np.array(sorted(inter.pairs), dtype=np.int64)
        iu, ii = up[:, 0], n_users + up[:, 1]
    else:
        iu = ii = np.empty(0, dtype=np.int64)
    if kg.triples:
        tr = np.array(kg.triples, dtype=np.int64)
        th, trel, tt = entity_node[tr[:, 0]], tr[:, 1], entity_node[tr[:, 2]]
    else:
        th = trel = tt = np.empty(0, dtype=np.int64)

    heads = np.concatenate([iu, ii, th, tt])
    rels = np.concatenate([
        np.full(len(iu), interact, dtype=np.int64),
        np.full(len(ii), interact + relation_count, dtype=np.int64),
        trel,
        trel + relation_count,
    ])
    tails = np.concatenate([ii, iu, tt, th])
    return CollaborativeKG(n_users, n_items, kg.entity_count, relation_count, entity_node, heads, rels, tails)


# --- splits ---------------------------------------------------------------


def split_traditional(inter, test_fraction=0.2, seed=0):
    """Random per-user holdout where every test item stays present in train.

    Pairs of each user are shuffled and ``test_fraction`` of them held out;
    a held-out pair whose item would vanish from the training side is moved
    back, keeping the traditional-scenario invariant.
    """
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction {test_fraction} not in (0,1)")
    rng = np.random.default_rng(seed)
    test = set()
    by_user = inter.by_user()
    for u in sorted(by_user):
        items = np.array(by_user[u], dtype=np.int64)
        k = int(len(items) * test_fraction)
        if k == 0:
            continue
        chosen = rng.permutation(items)[:k]
        test.update((u, int(i)) for i in chosen)
    train = inter.pairs - test
    train_items = {i for _, i in train}
    for u, i in sorted(test):
        if i not in train_items:
            test.discard((u, i))
            train.add((u, i))
            train_items.add(i)
    split = DatasetSplit(
        InteractionSet(inter.user_count, inter.item_count, train),
        InteractionSet(inter.user_count, inter.item_count, test),
        "traditional",
    )
    return split.validate()


def _kfold_groups(n, folds, seed):
    rng = np.random.default_rng(seed)
    return np.array_split(rng.permutation(n), folds)


def split_new_item(inter, folds, seed=0):
    """Partition all items into ``folds`` random groups; fold k tests group k."""
    if folds < 2:
        raise ConfigurationError("folds must be >= 2")
    if inter.item_count < folds:
        raise ConfigurationError(f"{inter.item_count} items cannot fill {folds} folds")
    splits = []
    for k, group in enumerate(_kfold_groups(inter.item_count, folds, seed)):
        test_items = set(group.tolist())
        test = {(u, i) for u, i in inter.pairs if i in test_items}
        train = inter.pairs - test
        split = DatasetSplit(
            InteractionSet(inter.user_count, inter.item_count, train),
            InteractionSet(inter.user_count, inter.item_count, test),
            "new-item",
            fold_index=k,
        )
        splits.append(split.validate())
    return splits


def split_new_user(inter, folds, seed=0):
    """Partition all users into ``folds`` random groups; fold k tests group k."""
    if folds < 2:
        raise ConfigurationError("folds must be >= 2")
    if inter.user_count < folds:
        raise ConfigurationError(f"{inter.user_count} users cannot fill {folds} folds")
    splits = []
    for k, group in enumerate(_kfold_groups(inter.user_count, folds, seed)):
        test_users = set(group.tolist())
        test = {(u, i) for u, i in inter.pairs if u in test_users}
        train = inter.pairs - test
        split = DatasetSplit(
            InteractionSet(inter.user_count, inter.item_count, train),
            InteractionSet(inter.user_count, inter.item_count, test),
            "new-user",
            fold_index=k,
        )
        splits.append(split.validate())
    return splits


# --- synthetic data -------------------------------------------------------


def gen_synthetic(n_users, n_items, n_entities, n_relations, cluster_count, noise, seed,
                  interactions_per_user=15, triples_per_item=3, distractors_per_item=2):
    """Planted-cluster dataset: users prefer items of their own latent cluster.

    Entities 0..n_items-1 mirror the items (and form the alignment); the
    remaining entities act as shared attribute hubs, one pool per cluster, so
    same-cluster items are two hops apart through a hub. Interaction and
    attribute targets are drawn within-cluster with probability 1 - noise.

    When n_relations >= 2, the last relation id is spurious: each item also
    points ``distractors_per_item`` edges under it straight at mirror
    entities of the *next* cluster's items. Those sit one hop closer than the
    genuinely related items, so relation-blind proximity ranking pulls the
    wrong cluster up, while a model that can discount a whole relation is
    unaffected.
    """
    if cluster_count < 2:
        raise ConfigurationError("cluster_count must be >= 2")
    if not 0 <= noise < 1:
        raise ConfigurationError(f"noise {noise} not in [0,1)")
    if cluster_count > n_items or cluster_count > n_users:
        raise ConfigurationError("more clusters than users or items")
    if n_entities < n_items:
        raise ConfigurationError("need at least one entity per item for alignment")
    if n_relations < 1:
        raise ConfigurationError("need at least one KG relation")

    rng = np.random.default_rng(seed)
    user_cluster, item_cluster = _cluster_assignments(rng, n_users, n_items, cluster_count)
    items_in = [np.nonzero(item_cluster == c)[0] for c in range(cluster_count)]
    items_out = [np.nonzero(item_cluster != c)[0] for c in range(cluster_count)]

    pairs = set()
    for u in range(n_users):
        c = user_cluster[u]
        n_cross = int((rng.random(interactions_per_user) < noise).sum())
        n_within = interactions_per_user - n_cross
        within = rng.choice(items_in[c], size=min(n_within, len(items_in[c])), replace=False)
        cross = rng.choice(items_out[c], size=min(n_cross, len(items_out[c])), replace=False)
        pairs.update((u, int(i)) for i in within)
        pairs.update((u, int(i)) for i in cross)

    alignment = [(i, i) for i in range(n_items)]
    n_hubs = n_entities - n_items
    if n_hubs > 0:
        hub_ids = np.arange(n_items, n_entities)
        hub_cluster = rng.permutation(np.arange(n_hubs) % cluster_count)
        target_in = [hub_ids[hub_cluster == c] for c in range(cluster_count)]
        target_out = [hub_ids[hub_cluster != c] for c in range(cluster_count)]
    else:
        # no spare entities: connect item mirrors directly
        target_in = [items_in[c] for c in range(cluster_count)]
        target_out = [items_out[c] for c in range(cluster_count)]

    n_attr_rel = n_relations - 1 if n_relations >= 2 else n_relations
    triples = {}
    for i in range(n_items):
        c = item_cluster[i]
        for _ in range(triples_per_item):
            pool = target_out[c] if (rng.random() < noise and len(target_out[c])) else target_in[c]
            if len(pool) == 0:
                continue
            tgt = int(rng.choice(pool))
            if tgt == i:
                continue
            r = int(rng.integers(n_attr_rel))
            triples[(i, r, tgt)] = None
    if n_relations >= 2 and distractors_per_item > 0:
        for i in range(n_items):
            pool = items_in[(item_cluster[i] + 1) % cluster_count]
            if len(pool) == 0:
                continue
            for _ in range(distractors_per_item):
                tgt = int(rng.choice(pool))
                if tgt == i:
                    continue
                triples[(i, n_relations - 1, tgt)] = None

    inter = InteractionSet(n_users, n_items, pairs)
    kg = TripleSet(n_entities, n_relations, list(triples))
    return inter, kg, alignment


def _cluster_assignments(rng, n_users, n_items, cluster_count):
    user_cluster = rng.permutation(np.arange(n_users) % cluster_count)
    item_cluster = rng.permutation(np.arange(n_items) % cluster_count)
    return user_cluster, item_cluster


def cluster_agreement(inter, user_cluster, item_cluster):
    """Fraction of pairs whose user and item share a cluster."""
    same = sum(1 for u, i in inter.pairs if user_cluster[u] == item_cluster[i])
    return same / len(inter.pairs)


def synthetic_clusters(n_users, n_items, cluster_count, seed):
    """The cluster assignment ``gen_synthetic`` uses for the same seed."""
    rng = np.random.default_rng(seed)
    return _cluster_assignments(rng, n_users, n_items, cluster_count)


# --- writers (used by the CLI) ---------------------------------------------


def write_interactions(path, inter):
    with open(path, "w") as f:
        f.write(f"# users={inter.user_count} items={inter.item_count}\n")
        by_user = inter.by_user()
        for u in sorted(by_user):
            f.write(" ".join([str(u)] + [str(i) for i in by_user[u]]) + "\n")


def write_kg(path, kg):
    with open(path, "w") as f:
        f.write(f"# entities={kg.entity_count} relations={kg.relation_count}\n")
        for h, r, t in kg.triples:
            f.write(f"{h} {r} {t}\n")


def write_alignment(path, alignment):
    with open(path, "w") as f:
        for i, e in alignment:
            f.write(f"{i} {e}\n")
