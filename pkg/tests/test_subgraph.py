import collections

import numpy as np
import pytest

from kgrec import data, ppr, subgraph
from kgrec.errors import ConfigurationError


def random_ckg(seed, n_users=5, n_items=8, n_entities=12, noise=0.2):
    inter, kg, align = data.gen_synthetic(n_users, n_items, n_entities, 3, 2, noise,
                                          seed=seed, interactions_per_user=3,
                                          triples_per_item=2, distractors_per_item=1)
    return data.build_ckg(inter, kg, align)


def chain_ckg():
    """u -interact-> i0 -r0-> hub -r0-> i1 (single 3-hop path to item 1)."""
    inter = data.InteractionSet(1, 2, {(0, 0)})
    kg = data.TripleSet(3, 1, [(0, 0, 2), (2, 0, 1)])
    return data.build_ckg(inter, kg, [(0, 0), (1, 1)])


def graph_layers_equal(a, b):
    if a.depth != b.depth or a.user != b.user:
        return False
    for l in range(a.depth + 1):
        if not np.array_equal(a.nodes[l], b.nodes[l]):
            return False
    for l in range(1, a.depth + 1):
        if a.layer_edge_set(l) != b.layer_edge_set(l):
            return False
    return True


class TestUISubgraph:
    def test_adjacent_pair_depth_one(self):
        ckg = data.build_ckg(data.InteractionSet(1, 1, {(0, 0)}),
                             data.TripleSet(0, 0, []), [])
        sub = subgraph.extract_ui_subgraph(ckg, 0, 1, 1)
        assert sub.nodes == {0, 1}
        assert sub.edges == ckg.edge_set()

    def test_matches_bruteforce_distance_filter(self):
        ckg = random_ckg(0, n_users=6, n_items=9, n_entities=15)
        assert ckg.node_count <= 30
        # independent oracle: plain dict BFS over the edge list
        adj = collections.defaultdict(set)
        for s, _, o in ckg.edge_set():
            adj[s].add(o)

        def bfs(src):
            dist = {src: 0}
            frontier = [src]
            while frontier:
                nxt = []
                for n in frontier:
                    for m in adj[n]:
                        if m not in dist:
                            dist[m] = dist[n] + 1
                            nxt.append(m)
                frontier = nxt
            return dist

        user, item, depth = 0, ckg.item_node(0), 3
        du, di = bfs(user), bfs(item)
        expected = {n for n in range(ckg.node_count)
                    if n in du and n in di and du[n] + di[n] <= depth}
        sub = subgraph.extract_ui_subgraph(ckg, user, item, depth)
        assert sub.nodes == expected
        for s, r, o in sub.edges:
            assert s in expected and o in expected

    def test_disconnected_pair_empty(self):
        # item 1 is isolated
        ckg = data.build_ckg(data.InteractionSet(1, 2, {(0, 0)}),
                             data.TripleSet(0, 0, []), [])
        sub = subgraph.extract_ui_subgraph(ckg, 0, ckg.item_node(1), 3)
        assert sub.nodes == set() and sub.edges == set()


class TestExpansion:
    def test_star_graph(self):
        inter = data.InteractionSet(1, 3, {(0, 0), (0, 1), (0, 2)})
        ckg = data.build_ckg(inter, data.TripleSet(0, 0, []), [])
        g = subgraph.layered_expansion(ckg, 0, 1)
        assert len(g.edges[0]) == 3
        assert set(g.nodes[1].tolist()) == {ckg.item_node(i) for i in range(3)}

    def test_edge_counts_match_degree_sum(self):
        ckg = random_ckg(1)
        g = subgraph.layered_expansion(ckg, 0, 3)
        out_deg = collections.Counter(ckg.heads.tolist())
        for l in range(1, 4):
            expected = sum(out_deg[n] for n in g.nodes[l - 1].tolist())
            assert len(g.edges[l - 1]) == expected

    def test_layer_invariants(self):
        ckg = random_ckg(2)
        g = subgraph.layered_expansion(ckg, 1, 3)
        assert np.array_equal(g.nodes[0], [1])
        for l in range(1, 4):
            h, r, t = g.edge_triples(l)
            assert set(h.tolist()) <= set(g.nodes[l - 1].tolist())
            assert set(t.tolist()) == set(g.nodes[l].tolist())

    def test_exclusion_removes_edge_and_reverse(self):
        ckg = random_ckg(3)
        item = ckg.item_node(0)
        rel = ckg.interact_rel
        excl = [(0, rel, item), (item, rel + ckg.relation_count, 0)]
        g = subgraph.layered_expansion(ckg, 0, 3, exclude_edges=excl)
        for l in range(1, 4):
            edges = g.layer_edge_set(l)
            assert not (set(excl) & edges)

    def test_depth_zero_rejected(self):
        ckg = random_ckg(4)
        with pytest.raises(ConfigurationError):
            subgraph.layered_expansion(ckg, 0, 0)


class TestPrune:
    def small_layered(self):
        """One head with three scored tails in a single layer."""
        inter = data.InteractionSet(1, 3, {(0, 0), (0, 1), (0, 2)})
        ckg = data.build_ckg(inter, data.TripleSet(0, 0, []), [])
        return ckg, subgraph.layered_expansion(ckg, 0, 1)

    def test_group_smaller_than_k_kept_whole(self):
        ckg, g = self.small_layered()
        scores = np.zeros(ckg.node_count)
        pruned = subgraph.prune_topk(g, scores, 5)
        assert graph_layers_equal(pruned, g)

    def test_topk_by_score(self):
        ckg, g = self.small_layered()
        scores = np.zeros(ckg.node_count)
        scores[ckg.item_node(0)] = 0.5
        scores[ckg.item_node(1)] = 0.3
        scores[ckg.item_node(2)] = 0.1
        pruned = subgraph.prune_topk(g, scores, 2)
        assert set(pruned.nodes[1].tolist()) == {ckg.item_node(0), ckg.item_node(1)}

    def test_tie_break_lowest_tail_then_rel(self):
        ckg, g = self.small_layered()
        scores = np.zeros(ckg.node_count)  # all tied
        pruned = subgraph.prune_topk(g, scores, 2)
        assert set(pruned.nodes[1].tolist()) == {ckg.item_node(0), ckg.item_node(1)}

    def test_idempotent(self):
        ckg = random_ckg(5)
        store = ppr.ppr_all_users(ckg)
        g = subgraph.layered_expansion(ckg, 0, 3)
        once = subgraph.prune_topk(g, store.user_scores(0), 2)
        twice = subgraph.prune_topk(once, store.user_scores(0), 2)
        assert graph_layers_equal(once, twice)

    def test_k_at_least_max_degree_is_identity(self):
        ckg = random_ckg(6)
        g = subgraph.layered_expansion(ckg, 0, 3)
        max_deg = max(collections.Counter(ckg.heads.tolist()).values())
        scores = ppr.ppr_all_users(ckg).user_scores(0)
        assert graph_layers_equal(subgraph.prune_topk(g, scores, max_deg), g)

    def test_monotone_in_k(self):
        ckg = random_ckg(7)
        g = subgraph.layered_expansion(ckg, 0, 3)
        scores = ppr.ppr_all_users(ckg).user_scores(0)
        for k1, k2 in [(1, 2), (2, 4), (3, 6)]:
            a = subgraph.prune_topk(g, scores, k1)
            b = subgraph.prune_topk(g, scores, k2)
            for l in range(1, 4):
                assert a.layer_edge_set(l) <= b.layer_edge_set(l)

    def test_interleaved_equals_post_hoc(self):
        ckg = random_ckg(8)
        scores = ppr.ppr_all_users(ckg).user_scores(0)
        direct = subgraph.user_computation_graph(ckg, 0, 3, scores=scores, k=2)
        post = subgraph.prune_topk(subgraph.layered_expansion(ckg, 0, 3), scores, 2)
        assert graph_layers_equal(direct, post)

    def test_random_pruning_respects_k(self):
        ckg = random_ckg(9)
        rng = np.random.default_rng(0)
        g = subgraph.user_computation_graph(ckg, 0, 3, k=2, prune_rng=rng)
        for l in range(1, 4):
            h, _, _ = g.edge_triples(l)
            assert max(collections.Counter(h.tolist()).values(), default=0) <= 2

    def test_pruned_is_subgraph(self):
        ckg = random_ckg(10)
        scores = ppr.ppr_all_users(ckg).user_scores(0)
        g = subgraph.layered_expansion(ckg, 0, 3)
        pruned = subgraph.prune_topk(g, scores, 2)
        for l in range(1, 4):
            assert pruned.layer_edge_set(l) <= g.layer_edge_set(l)


class TestPairGraphs:
    def test_pair_graph_matches_walk_enumeration(self):
        for seed in range(4):
            ckg = random_ckg(seed)
            user = 0
            for item in range(min(4, ckg.n_items)):
                i = ckg.item_node(item)
                pg = subgraph.pair_computation_graph(ckg, user, i, 3)
                node_sets, edge_sets = subgraph.enumerate_path_layer_sets(ckg, user, i, 3)
                for l in range(1, 4):
                    assert pg.layer_edge_set(l) == edge_sets[l - 1]
                    tails = pg.layer_node_set(l)
                    assert tails == node_sets[l]

    def test_single_edge_pair_graph(self):
        ckg = data.build_ckg(data.InteractionSet(1, 1, {(0, 0)}),
                             data.TripleSet(0, 0, []), [])
        pg = subgraph.pair_computation_graph(ckg, 0, 1, 1)
        assert pg.layer_edge_set(1) == {(0, ckg.interact_rel, 1)}
        node_sets, edge_sets = subgraph.enumerate_path_layer_sets(ckg, 0, 1, 1)
        assert edge_sets[0] == {(0, ckg.interact_rel, 1)}

    def test_chain_pair_graph(self):
        ckg = chain_ckg()
        i1 = ckg.item_node(1)
        pg = subgraph.pair_computation_graph(ckg, 0, i1, 3)
        assert pg.layer_node_set(3) == {i1}
        # exactly one walk of length three ends at item 1
        assert len(pg.edges[0]) == 1 and pg.layer_node_set(1) == {ckg.item_node(0)}

    def test_containment_zero_violations(self):
        for seed in range(3):
            ckg = random_ckg(seed + 20)
            report = subgraph.verify_containment(ckg, 0, 3, ckg.item_nodes().tolist())
            assert report.ok, report.violations

    def test_unreachable_item_trivially_contained(self):
        ckg = data.build_ckg(data.InteractionSet(1, 2, {(0, 0)}),
                             data.TripleSet(0, 0, []), [])
        report = subgraph.verify_containment(ckg, 0, 3, [ckg.item_node(1)])
        assert report.ok
        node_sets, edge_sets = subgraph.enumerate_path_layer_sets(
            ckg, 0, ckg.item_node(1), 3)
        assert all(not s for s in edge_sets)

    def test_pair_layers_inside_user_layers(self):
        ckg = random_ckg(30)
        g = subgraph.layered_expansion(ckg, 0, 3)
        for item in range(ckg.n_items):
            pg = subgraph.pair_computation_graph(ckg, 0, ckg.item_node(item), 3)
            for l in range(1, 4):
                assert pg.layer_edge_set(l) <= g.layer_edge_set(l)
                assert pg.layer_node_set(l) <= g.layer_node_set(l)


class TestJsonDump:
    def test_debug_dump_shape(self):
        ckg = random_ckg(11)
        scores = ppr.ppr_all_users(ckg).user_scores(0)
        g = subgraph.user_computation_graph(ckg, 0, 2, scores=scores, k=3)
        doc = g.to_json(scores=scores)
        assert doc["user"] == 0 and doc["depth"] == 2
        assert len(doc["layers"]) == 3
        assert doc["layers"][0]["nodes"] == [0]
        assert "edges" in doc["layers"][1]
        assert len(doc["layers"][1]["scores"]) == len(doc["layers"][1]["nodes"])
