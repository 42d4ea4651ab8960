"""Layered user-centric computation graphs and their pruning.

A layered graph holds node sets V0..VL and edge lists E1..EL where layer l
edges start at layer l-1 nodes and Vl is exactly the set of their tails.
Edges within a layer are kept sorted by (head, relation, tail) so that
propagation order, and therefore floating point summation order, is fixed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass
class LayerEdges:
    head_pos: np.ndarray  # index into the previous layer's node array
    rel: np.ndarray
    tail_pos: np.ndarray  # index into this layer's node array

    def __len__(self):
        return len(self.rel)


class LayeredGraph:
    def __init__(self, user, nodes, edges):
        self.user = int(user)
        self.nodes = nodes  # list of L+1 sorted int64 arrays, nodes[0] == [user]
        self.edges = edges  # list of L LayerEdges, edges[l-1] is layer l

    @property
    def depth(self):
        return len(self.edges)

    def edge_triples(self, layer):
        """Global (heads, rels, tails) arrays of one layer (1-based)."""
        le = self.edges[layer - 1]
        return self.nodes[layer - 1][le.head_pos], le.rel, self.nodes[layer][le.tail_pos]

    def layer_edge_set(self, layer):
        h, r, t = self.edge_triples(layer)
        return set(zip(h.tolist(), r.tolist(), t.tolist()))

    def layer_node_set(self, layer):
        return set(self.nodes[layer].tolist())

    def total_edges(self):
        return sum(len(le) for le in self.edges)

    def to_json(self, scores=None):
        """Debug dump: layers with node ids, edge triples, optional node scores."""
        layers = []
        for l in range(self.depth + 1):
            entry = {"nodes": self.nodes[l].tolist()}
            if scores is not None:
                entry["scores"] = [float(scores[n]) for n in self.nodes[l]]
            if l > 0:
                h, r, t = self.edge_triples(l)
                entry["edges"] = np.stack([h, r, t], axis=1).tolist() if len(r) else []
            layers.append(entry)
        return {"user": self.user, "depth": self.depth, "layers": layers}


@dataclass
class UISubgraph:
    """Nodes whose distances to the user and the item sum to at most depth."""

    user: int
    item: int
    depth: int
    nodes: set
    edges: set


@dataclass
class ContainmentReport:
    pairs_checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


_EMPTY = np.empty(0, dtype=np.int64)


def _canonical_order(h, r, t):
    order = np.lexsort((t, r, h))
    return h[order], r[order], t[order]


def _finish_layer(prev_nodes, h, r, t):
    """Index sorted global edge arrays against prev/current layer node arrays."""
    nodes = np.unique(t)
    head_pos = np.searchsorted(prev_nodes, h)
    tail_pos = np.searchsorted(nodes, t)
    return nodes, LayerEdges(head_pos.astype(np.int64), r.astype(np.int64), tail_pos.astype(np.int64))


def _edge_keys(ckg, h, r, t):
    return (h * (2 * ckg.relation_count) + r) * ckg.node_count + t


def _topk_per_head(h, r, t, tail_score, k):
    """Keep per head the k edges with largest tail score.

    Ties broken by (tail id, relation id) ascending. Returns edges in
    canonical (head, relation, tail) order.
    """
    order = np.lexsort((r, t, -tail_score, h))
    h_s = h[order]
    starts = np.nonzero(np.concatenate(([True], h_s[1:] != h_s[:-1])))[0]
    counts = np.diff(np.concatenate((starts, [len(h_s)])))
    rank = np.arange(len(h_s)) - np.repeat(starts, counts)
    keep = order[rank < k]
    return _canonical_order(h[keep], r[keep], t[keep])


def user_computation_graph(ckg, user, depth, scores=None, k=None, exclude_edges=None, prune_rng=None):
    """Frontier expansion from a user, optionally pruned layer by layer.

    With ``k`` set, each head node keeps its k best out-edges, ranked by the
    tail's entry in ``scores``; passing ``prune_rng`` instead of ``scores``
    keeps k uniformly random edges per head (the sampling ablation).
    ``exclude_edges`` is an iterable of (head, rel, tail) triples dropped
    wherever they occur.
    """
    if depth < 1:
        raise ConfigurationError("depth must be >= 1")
    if k is not None and scores is None and prune_rng is None:
        raise ConfigurationError("pruning needs scores or prune_rng")
    excl = None
    if exclude_edges:
        triples = np.array(sorted(exclude_edges), dtype=np.int64)
        excl = np.sort(_edge_keys(ckg, triples[:, 0], triples[:, 1], triples[:, 2]))

    nodes = [np.array([user], dtype=np.int64)]
    edges = []
    for _ in range(depth):
        h, r, t = ckg.out_edges(nodes[-1])
        if excl is not None and len(h):
            mask = ~np.isin(_edge_keys(ckg, h, r, t), excl, assume_unique=False)
            h, r, t = h[mask], r[mask], t[mask]
        if k is not None and len(h):
            tail_score = scores[t] if scores is not None else prune_rng.random(len(t))
            h, r, t = _topk_per_head(h, r, t, tail_score, k)
        else:
            h, r, t = _canonical_order(h, r, t)
        layer_nodes, layer_edges = _finish_layer(nodes[-1], h, r, t)
        nodes.append(layer_nodes)
        edges.append(layer_edges)
    return LayeredGraph(user, nodes, edges)


def layered_expansion(ckg, user, depth, exclude_edges=None):
    """Exact (unpruned) user-centric computation graph."""
    return user_computation_graph(ckg, user, depth, exclude_edges=exclude_edges)


def prune_topk(layered, scores, k):
    """Per-head top-k pruning of an existing layered graph.

    Layers are pruned in order: layer l only keeps edges whose head survived
    in layer l-1, so the result equals building the expansion with pruning
    interleaved.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    nodes = [layered.nodes[0]]
    edges = []
    for layer in range(1, layered.depth + 1):
        h, r, t = layered.edge_triples(layer)
        pos = np.searchsorted(nodes[-1], h)
        pos = np.minimum(pos, max(len(nodes[-1]) - 1, 0))
        alive = len(nodes[-1]) > 0 and len(h) > 0
        mask = (nodes[-1][pos] == h) if alive else np.zeros(len(h), dtype=bool)
        h, r, t = h[mask], r[mask], t[mask]
        if len(h):
            h, r, t = _topk_per_head(h, r, t, scores[t], k)
        layer_nodes, layer_edges = _finish_layer(nodes[-1], h, r, t)
        nodes.append(layer_nodes)
        edges.append(layer_edges)
    return LayeredGraph(layered.user, nodes, edges)


# --- exact per-pair computation graphs -------------------------------------


def bfs_distances(ckg, source):
    """Shortest-path hop counts from a node; -1 where unreachable."""
    dist = np.full(ckg.node_count, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    d = 0
    while len(frontier):
        _, _, t = ckg.out_edges(frontier)
        t = np.unique(t)
        frontier = t[dist[t] < 0]
        d += 1
        dist[frontier] = d
    return dist


def extract_ui_subgraph(ckg, user, item, depth):
    """Induced subgraph of nodes with dist(user) + dist(item) <= depth."""
    du = bfs_distances(ckg, user)
    di = bfs_distances(ckg, item)
    member = (du >= 0) & (di >= 0) & (du + di <= depth)
    mask = member[ckg.heads] & member[ckg.tails]
    edges = set(zip(ckg.heads[mask].tolist(), ckg.rels[mask].tolist(), ckg.tails[mask].tolist()))
    return UISubgraph(user, item, depth, set(np.nonzero(member)[0].tolist()), edges)


def _walk_masks(ckg, source, depth):
    """masks[l][n] is True when a walk of exactly l hops reaches n from source."""
    masks = np.zeros((depth + 1, ckg.node_count), dtype=bool)
    masks[0, source] = True
    current = np.array([source], dtype=np.int64)
    for l in range(1, depth + 1):
        _, _, t = ckg.out_edges(current)
        current = np.unique(t)
        masks[l, current] = True
    return masks


def pair_computation_graph(ckg, user, item, depth):
    """Layered graph of all exactly-``depth``-hop walks from user to item.

    Reverse closure makes the backward reachability computable with forward
    edges. Layer l keeps the edges whose head lies on a prefix walk and whose
    tail still reaches the item in the remaining hops.
    """
    fwd = _walk_masks(ckg, user, depth)
    bwd = _walk_masks(ckg, item, depth)[::-1]  # bwd[l][n]: walk n -> item in depth-l hops
    nodes = [np.array([user], dtype=np.int64)]
    edges = []
    for l in range(1, depth + 1):
        h, r, t = ckg.out_edges(np.nonzero(fwd[l - 1] & bwd[l - 1])[0])
        mask = bwd[l][t]
        h, r, t = _canonical_order(h[mask], r[mask], t[mask])
        layer_nodes, layer_edges = _finish_layer(nodes[-1], h, r, t)
        nodes.append(layer_nodes)
        edges.append(layer_edges)
    return LayeredGraph(user, nodes, edges)


def enumerate_path_layer_sets(ckg, user, item, depth):
    """Per-layer node and edge sets from explicit walk enumeration.

    Independent oracle for the per-pair construction: recursively enumerates
    every walk of exactly ``depth`` hops from user to item and collects the
    visited edges/nodes per position. Exponential; for small graphs only.
    """
    node_sets = [set() for _ in range(depth + 1)]
    edge_sets = [set() for _ in range(depth + 1)]  # index 1..depth used

    def recurse(node, hop, trail):
        if hop == depth:
            if node == item:
                for l, (s, r, o) in enumerate(trail, start=1):
                    edge_sets[l].add((s, r, o))
                    node_sets[l].add(o)
                node_sets[0].add(user)
            return
        start, stop = ckg.indptr[node], ckg.indptr[node + 1]
        for j in range(start, stop):
            trail.append((node, int(ckg.rels[j]), int(ckg.tails[j])))
            recurse(int(ckg.tails[j]), hop + 1, trail)
            trail.pop()

    recurse(user, 0, [])
    return node_sets, edge_sets[1:]


def verify_containment(ckg, user, depth, items):
    """Check that each pair's walk-layer sets sit inside the user-centric ones."""
    expansion = layered_expansion(ckg, user, depth)
    exp_nodes = [expansion.layer_node_set(l) for l in range(1, depth + 1)]
    exp_edges = [expansion.layer_edge_set(l) for l in range(1, depth + 1)]
    report = ContainmentReport(pairs_checked=len(items))
    for item in items:
        node_sets, edge_sets = enumerate_path_layer_sets(ckg, user, item, depth)
        for l in range(1, depth + 1):
            extra_nodes = node_sets[l] - exp_nodes[l - 1]
            extra_edges = edge_sets[l - 1] - exp_edges[l - 1]
            if extra_nodes:
                report.violations.append((item, l, "nodes", sorted(extra_nodes)))
            if extra_edges:
                report.violations.append((item, l, "edges", sorted(extra_edges)))
    return report
