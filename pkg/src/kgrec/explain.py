"""Attention-weighted explanation subgraphs for a recommended pair.

Edges whose attention weight clears the threshold are kept, then (by
default) pruned back to the ones lying on a surviving layered path from the
user to the item, so the exported structure is always a connected
user-to-item bundle. Exports to a versioned JSON schema or Graphviz dot.
"""

import json
from dataclasses import dataclass, field

import numpy as np

EXPLANATION_SCHEMA_VERSION = 1


@dataclass
class Explanation:
    user: int  # global node id
    item: int  # global node id
    threshold: float
    edges: list  # (source, relation, target, layer, weight), sorted
    nodes: set
    node_types: dict = field(default_factory=dict)
    relation_labels: dict = field(default_factory=dict)


def extract_explanation(tape, graph, item, threshold=0.5, path_prune=True, ckg=None):
    """Filter a forward tape's edges by attention weight for one item.

    ``item`` is a global node id. With ``path_prune`` (default) only edges on
    some threshold-surviving layered path user -> item are kept; without it,
    the filter is per-edge attention alone. Passing the graph's ``ckg``
    attaches node type and relation labels for export.
    """
    depth = graph.depth
    kept = []  # per layer: (heads, rels, tails, weights)
    for layer in range(1, depth + 1):
        h, r, t = graph.edge_triples(layer)
        w = tape.alpha[layer - 1]
        mask = w >= threshold
        kept.append((h[mask], r[mask], t[mask], w[mask]))

    # forward reachability over surviving edges
    reach = [{graph.user}]
    for h, r, t, w in kept:
        prev = reach[-1]
        reach.append({int(x) for s, x in zip(h.tolist(), t.tolist()) if s in prev})

    # backward: nodes that still reach the item in the remaining layers
    if path_prune:
        keep_tail = [set() for _ in range(depth + 1)]
        keep_tail[depth] = {int(item)} if int(item) in reach[depth] else set()
        for layer in range(depth, 0, -1):
            h, r, t, w = kept[layer - 1]
            prev = reach[layer - 1]
            keep_tail[layer - 1] = {int(s) for s, o in zip(h.tolist(), t.tolist())
                                    if s in prev and int(o) in keep_tail[layer]}
        allowed = keep_tail
    else:
        allowed = None

    edges = []
    nodes = set()
    for layer in range(1, depth + 1):
        h, r, t, w = kept[layer - 1]
        for s, rel, o, weight in zip(h.tolist(), r.tolist(), t.tolist(), w.tolist()):
            if allowed is not None:
                if s not in reach[layer - 1] or o not in allowed[layer]:
                    continue
            edges.append((int(s), int(rel), int(o), layer, float(weight)))
            nodes.add(int(s))
            nodes.add(int(o))
    edges.sort(key=lambda e: (e[3], e[0], e[1], e[2]))

    node_types = {}
    relation_labels = {}
    if ckg is not None:
        for g in sorted(nodes):
            node_types[g] = ckg.node_kind(g)[0]
        for rel in sorted({e[1] for e in edges}):
            relation_labels[rel] = ckg.relation_label(rel)
    return Explanation(int(graph.user), int(item), float(threshold), edges, nodes,
                       node_types, relation_labels)


def export_explanation(expl, format="json"):
    """Render an explanation as JSON (documented schema) or Graphviz dot."""
    if format == "json":
        return _to_json(expl)
    if format == "dot":
        return _to_dot(expl)
    raise ValueError(f"unknown format {format!r}")


def _to_json(expl):
    doc = {
        "version": EXPLANATION_SCHEMA_VERSION,
        "user": expl.user,
        "item": expl.item,
        "threshold": expl.threshold,
        "nodes": [{"id": g, "type": expl.node_types.get(g, "node")} for g in sorted(expl.nodes)],
        "edges": [
            {"source": s, "relation": r, "target": o, "layer": layer, "weight": w,
             "label": expl.relation_labels.get(r, f"r{r}")}
            for s, r, o, layer, w in expl.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def parse_explanation(text):
    """Inverse of the JSON export."""
    doc = json.loads(text)
    if doc.get("version") != EXPLANATION_SCHEMA_VERSION:
        raise ValueError(f"unsupported explanation schema version {doc.get('version')}")
    edges = [(e["source"], e["relation"], e["target"], e["layer"], e["weight"])
             for e in doc["edges"]]
    nodes = {n["id"] for n in doc["nodes"]}
    node_types = {n["id"]: n["type"] for n in doc["nodes"] if n["type"] != "node"}
    relation_labels = {e["relation"]: e["label"] for e in doc["edges"]
                       if e["label"] != f"r{e['relation']}"}
    return Explanation(doc["user"], doc["item"], doc["threshold"], edges, nodes,
                       node_types, relation_labels)


def _node_name(expl, g):
    kind = expl.node_types.get(g, "node")
    return f"{kind}_{g}"


def _to_dot(expl):
    lines = ["digraph explanation {", "  rankdir=LR;"]
    by_layer = {}
    for s, r, o, layer, w in expl.edges:
        by_layer.setdefault(layer - 1, set()).add(s)
        by_layer.setdefault(layer, set()).add(o)
    for layer in sorted(by_layer):
        lines.append("  { rank=same; " +
                     " ".join(f'"{_node_name(expl, g)}";' for g in sorted(by_layer[layer])) + " }")
    for g in sorted(expl.nodes):
        shape = {"user": "ellipse", "item": "box", "entity": "diamond"}.get(
            expl.node_types.get(g, "node"), "circle")
        lines.append(f'  "{_node_name(expl, g)}" [shape={shape}];')
    for s, r, o, layer, w in expl.edges:
        label = expl.relation_labels.get(r, f"r{r}")
        lines.append(f'  "{_node_name(expl, s)}" -> "{_node_name(expl, o)}" '
                     f'[label="{label} {w:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
