import math

import numpy as np
import pytest

from kgrec import data, evaluate, model, ppr, subgraph


def reference_recall(ranked, test_set, n):
    hits = 0
    for item in list(ranked)[:n]:
        if item in test_set:
            hits += 1
    return hits / len(test_set)


def reference_ndcg(ranked, test_set, n):
    gain = 0.0
    for pos, item in enumerate(list(ranked)[:n], start=1):
        if item in test_set:
            gain += 1.0 / math.log2(pos + 1)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(test_set), n) + 1))
    return gain / ideal


def fixture_dataset(seed=0):
    inter, kg, align = data.gen_synthetic(25, 20, 28, 3, 2, 0.1, seed=seed,
                                          interactions_per_user=5,
                                          triples_per_item=2, distractors_per_item=1)
    split = data.split_traditional(inter, 0.2, seed=seed)
    ckg = data.build_ckg(split.train_pairs, kg, align)
    store = ppr.ppr_all_users(ckg)
    return ckg, split, store


class TestMetrics:
    def test_recall_all_hits(self):
        assert evaluate.recall_at_n([3, 1, 2], {1, 2, 3}, 20) == 1.0

    def test_recall_half(self):
        assert evaluate.recall_at_n([5, 9], {5, 7}, 20) == 0.5

    def test_recall_capped_by_n(self):
        ranked = list(range(100))
        test_set = set(range(30))
        assert evaluate.recall_at_n(ranked, test_set, 20) == pytest.approx(20 / 30)

    def test_ndcg_rank_one(self):
        assert evaluate.ndcg_at_n([4, 1, 2], {4}, 20) == 1.0

    def test_ndcg_rank_two(self):
        assert evaluate.ndcg_at_n([9, 4, 2], {4}, 20) == pytest.approx(1.0 / math.log2(3))

    def test_ndcg_no_hits(self):
        assert evaluate.ndcg_at_n([1, 2, 3], {9}, 20) == 0.0

    def test_empty_test_set_rejected(self):
        with pytest.raises(ValueError):
            evaluate.recall_at_n([1], set(), 20)
        with pytest.raises(ValueError):
            evaluate.ndcg_at_n([1], set(), 20)

    def test_thousand_random_instances_match_reference(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            n_items = int(rng.integers(5, 60))
            ranked = rng.permutation(n_items).tolist()
            t_size = int(rng.integers(1, n_items + 1))
            test_set = set(rng.choice(n_items, size=t_size, replace=False).tolist())
            n = int(rng.integers(1, 40))
            assert abs(evaluate.recall_at_n(ranked, test_set, n)
                       - reference_recall(ranked, test_set, n)) <= 1e-12
            assert abs(evaluate.ndcg_at_n(ranked, test_set, n)
                       - reference_ndcg(ranked, test_set, n)) <= 1e-12


class TestRanking:
    def test_ties_break_by_item_id(self):
        items = np.array([4, 1, 3, 0])
        scores = np.array([1.0, 2.0, 1.0, 2.0])
        assert evaluate.rank_from_scores(items, scores, set()).tolist() == [0, 1, 3, 4]

    def test_excluded_items_dropped(self):
        items = np.arange(5)
        scores = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
        out = evaluate.rank_from_scores(items, scores, {0, 2})
        assert out.tolist() == [1, 3, 4]

    def test_zero_model_ranks_by_item_id(self):
        ckg, split, store = fixture_dataset()
        params = model.ModelParams(4, 3, 3, 2 * ckg.relation_count)
        for l in range(3):
            params.h_rel[l][...] = 0.0
        user = sorted(split.train_pairs.by_user())[0]
        positives = split.train_pairs.by_user()[user]
        ranked = evaluate.rank_items(params, ckg, store, user, positives, k=5, depth=3)
        expected = [i for i in range(ckg.n_items) if i not in set(positives)]
        assert ranked.tolist() == expected

    def test_training_positives_never_ranked(self):
        ckg, split, store = fixture_dataset(1)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 0)
        by_user = split.train_pairs.by_user()
        for user in list(by_user)[:5]:
            ranked = evaluate.rank_items(params, ckg, store, user, by_user[user],
                                         k=5, depth=3)
            assert not (set(ranked.tolist()) & set(by_user[user]))

    def test_matches_per_pair_subgraph_scoring(self):
        # unpruned user-centric scores equal scoring each item on its own
        # pair graph
        ckg, split, store = fixture_dataset(2)
        assert ckg.node_count <= 60
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 5)
        user = sorted(split.train_pairs.by_user())[0]
        items, scores = evaluate.score_items(params, ckg, store, user,
                                             k=None, depth=3, pruning="none")
        for item, score in zip(items.tolist()[:8], scores.tolist()[:8]):
            pg = subgraph.pair_computation_graph(ckg, ckg.user_node(user),
                                                 ckg.item_node(item), 3)
            tape = model.forward(pg, params, np.array([ckg.item_node(item)]))
            assert abs(tape.logits[0] - score) <= 1e-9


class TestEvaluate:
    def test_perfect_oracle_closed_form(self):
        ckg, split, store = fixture_dataset(3)
        test_by_user = split.test_pairs.by_user()
        items = np.arange(ckg.n_items, dtype=np.int64)

        def oracle(user):
            scores = np.zeros(ckg.n_items)
            scores[list(test_by_user.get(user, []))] = 1.0
            return items, scores

        n = 20
        report = evaluate._evaluate_loop(oracle, split, n)
        expected = np.mean([min(n, len(t)) / len(t) for t in test_by_user.values() if t])
        assert report.recall == pytest.approx(expected, abs=1e-12)
        assert all(r.ndcg == 1.0 for u, r in report.per_user.items()
                   if len(test_by_user[u]) <= n)

    def test_random_scores_near_hypergeometric(self):
        ckg, split, store = fixture_dataset(4)
        items = np.arange(ckg.n_items, dtype=np.int64)
        rng = np.random.default_rng(0)
        report = evaluate._evaluate_loop(
            lambda u: (items, rng.random(ckg.n_items)), split, 10)
        train_by_user = split.train_pairs.by_user()
        test_by_user = split.test_pairs.by_user()
        exp, var = [], []
        for u, t in test_by_user.items():
            cand = ckg.n_items - len(train_by_user.get(u, []))
            frac = len(t) / cand
            e_hits = 10 * frac
            v_hits = 10 * frac * (1 - frac) * (cand - 10) / (cand - 1)
            exp.append(e_hits / len(t))
            var.append(v_hits / len(t) ** 2)
        mu = float(np.mean(exp))
        sigma = math.sqrt(sum(var)) / len(exp)
        assert abs(report.recall - mu) <= 3 * sigma + 1e-12

    def test_means_equal_user_average(self):
        ckg, split, store = fixture_dataset(5)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 1)
        report = evaluate.evaluate(params, ckg, split, store, k=5, depth=3)
        assert report.recall == pytest.approx(
            np.mean([r.recall for r in report.per_user.values()]), abs=1e-12)
        assert report.ndcg == pytest.approx(
            np.mean([r.ndcg for r in report.per_user.values()]), abs=1e-12)
        assert report.users_evaluated == len(report.per_user)

    def test_monotone_score_transform_invariance(self):
        ckg, split, store = fixture_dataset(6)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 2)

        def raw(user):
            return evaluate.score_items(params, ckg, store, user, k=5, depth=3)

        def transformed(user):
            items, scores = raw(user)
            return items, 2.0 * scores + 1.0

        a = evaluate._evaluate_loop(raw, split, 20)
        b = evaluate._evaluate_loop(transformed, split, 20)
        assert a.recall == b.recall and a.ndcg == b.ndcg
        assert all(a.per_user[u].ranked == b.per_user[u].ranked for u in a.per_user)

    def test_ranking_ignores_test_interactions(self):
        # swapping the test side must not change what gets ranked
        ckg, split, store = fixture_dataset(7)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 3)
        other_test = data.InteractionSet(
            split.test_pairs.user_count, split.test_pairs.item_count,
            set(list(split.test_pairs.pairs)[: len(split.test_pairs.pairs) // 2]))
        split_b = data.DatasetSplit(split.train_pairs, other_test, "traditional")
        a = evaluate.evaluate(params, ckg, split, store, k=5, depth=3)
        b = evaluate.evaluate(params, ckg, split_b, store, k=5, depth=3)
        for u in set(a.per_user) & set(b.per_user):
            assert a.per_user[u].ranked == b.per_user[u].ranked

    def test_no_evaluable_users_raises(self):
        ckg, split, store = fixture_dataset(8)
        empty = data.DatasetSplit(
            split.train_pairs,
            data.InteractionSet(split.train_pairs.user_count,
                                split.train_pairs.item_count, set()),
            "traditional")
        with pytest.raises(ValueError):
            evaluate.evaluate(model.init_params(4, 3, 3, 2 * ckg.relation_count, 0),
                              ckg, empty, store, k=5, depth=3)

    def test_threads_match_serial(self):
        ckg, split, store = fixture_dataset(9)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 4)
        a = evaluate.evaluate(params, ckg, split, store, k=5, depth=3, threads=1)
        b = evaluate.evaluate(params, ckg, split, store, k=5, depth=3, threads=4)
        assert a.to_lines() == b.to_lines()

    def test_report_lines_format(self):
        ckg, split, store = fixture_dataset(10)
        params = model.init_params(4, 3, 3, 2 * ckg.relation_count, 5)
        report = evaluate.evaluate(params, ckg, split, store, k=5, depth=3)
        lines = report.to_lines()
        assert len(lines) == report.users_evaluated + 1
        assert '"summary"' in lines[-1]


class TestBaselines:
    def test_popularity_prefers_frequent_items(self):
        # item 0 is most popular but is user 4's own positive, so it is
        # excluded; items 1 and 2 (one interaction each) come next by id
        pairs = {(u, 0) for u in range(5)} | {(1, 1), (2, 2)} | {(0, 3)}
        inter = data.InteractionSet(5, 4, pairs)
        split = data.DatasetSplit(
            inter, data.InteractionSet(5, 4, {(4, 1)}), "traditional")
        report = evaluate.evaluate_popularity_baseline(split, n=2)
        assert report.per_user[4].ranked == [1, 2]

    def test_ppr_baseline_runs(self):
        ckg, split, store = fixture_dataset(11)
        report = evaluate.evaluate_ppr_baseline(ckg, split, store)
        assert 0.0 <= report.recall <= 1.0
