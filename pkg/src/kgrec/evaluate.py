"""All-ranking top-N evaluation: recall@N and ndcg@N per test user.

Every item except the user's training positives is ranked by model score
(descending, ties by ascending item id). Items the computation graph never
reaches score exactly zero but still participate in the ranking. Users with
an empty test set are skipped, and the reported means average over the users
actually evaluated. The ranking step never touches test interactions; they
are only read afterwards to mark relevance.
"""

import concurrent.futures
import json
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import subgraph


@dataclass
class UserResult:
    recall: float
    ndcg: float
    ranked: list  # top-N local item ids


@dataclass
class EvalReport:
    per_user: dict
    recall: float
    ndcg: float
    n: int
    users_evaluated: int

    def to_lines(self):
        """Machine-readable report: one JSON line per user plus a summary."""
        lines = []
        for u in sorted(self.per_user):
            res = self.per_user[u]
            lines.append(json.dumps(
                {"user": u, "recall": res.recall, "ndcg": res.ndcg, "top": res.ranked},
                sort_keys=True))
        lines.append(json.dumps(
            {"summary": {"n": self.n, "users": self.users_evaluated,
                         "recall": self.recall, "ndcg": self.ndcg}}, sort_keys=True))
        return lines


def recall_at_n(ranked, test_set, n):
    """|top-n intersect test| / |test|."""
    if not test_set:
        raise ValueError("recall undefined for an empty test set")
    hits = sum(1 for i in ranked[:n] if i in test_set)
    return hits / len(test_set)


def ndcg_at_n(ranked, test_set, n):
    """Discounted hit gain over the ideal gain of min(|test|, n) front slots."""
    if not test_set:
        raise ValueError("ndcg undefined for an empty test set")
    gain = sum(1.0 / np.log2(rank + 1) for rank, item in enumerate(ranked[:n], start=1)
               if item in test_set)
    ideal = sum(1.0 / np.log2(rank + 1) for rank in range(1, min(len(test_set), n) + 1))
    return gain / ideal


def rank_from_scores(item_ids, scores, exclude):
    """Sort by score descending, item id ascending; drop excluded items."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if exclude:
        keep = ~np.isin(item_ids, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
        item_ids, scores = item_ids[keep], scores[keep]
    order = np.lexsort((item_ids, -scores))
    return item_ids[order]


def score_items(params, ckg, ppr_store, user, candidate_items=None, k=35, depth=3,
                pruning="ppr", prune_rng=None):
    """Model scores for candidate (local) item ids via one pruned forward pass."""
    if candidate_items is None:
        candidate_items = np.arange(ckg.n_items, dtype=np.int64)
    candidate_items = np.asarray(candidate_items, dtype=np.int64)
    kwargs = {}
    if pruning == "ppr":
        kwargs = {"scores": ppr_store.user_scores(user), "k": k}
    elif pruning == "random":
        kwargs = {"k": k, "prune_rng": prune_rng or np.random.default_rng([11, user])}
    graph = subgraph.user_computation_graph(ckg, ckg.user_node(user), depth, **kwargs)
    tape = model_mod.forward(graph, params, ckg.item_node(candidate_items))
    return candidate_items, tape.logits


def rank_items(params, ckg, ppr_store, user, train_positives, candidate_items=None,
               k=35, depth=3, pruning="ppr"):
    """Ranked recommendation list (local item ids) for one user."""
    items, scores = score_items(params, ckg, ppr_store, user, candidate_items,
                                k=k, depth=depth, pruning=pruning)
    return rank_from_scores(items, scores, set(train_positives))


def _evaluate_loop(score_fn, split, n, threads=1):
    """Shared metric loop: score_fn(user) -> (item_ids, scores)."""
    train_by_user = split.train_pairs.by_user()
    test_by_user = split.test_pairs.by_user()
    users = [u for u in sorted(test_by_user) if test_by_user[u]]
    if not users:
        raise ValueError("no evaluable users: every test set is empty")

    def one(user):
        items, scores = score_fn(user)
        ranked = rank_from_scores(items, scores, set(train_by_user.get(user, ())))
        test_set = set(test_by_user[user])
        return user, UserResult(
            recall_at_n(ranked, test_set, n),
            ndcg_at_n(ranked, test_set, n),
            [int(i) for i in ranked[:n]],
        )

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(one, users))
    else:
        results = dict(one(u) for u in users)
    recall = float(np.mean([results[u].recall for u in users]))
    ndcg = float(np.mean([results[u].ndcg for u in users]))
    return EvalReport(results, recall, ndcg, n, len(users))


def evaluate(params, ckg, split, ppr_store, k=35, depth=3, n=20, pruning="ppr", threads=1):
    """Model evaluation over all test users of a split."""
    return _evaluate_loop(
        lambda u: score_items(params, ckg, ppr_store, u, k=k, depth=depth, pruning=pruning),
        split, n, threads=threads)


def evaluate_ppr_baseline(ckg, split, ppr_store, n=20, threads=1):
    """Rank items directly by the user's PPR score of the item node."""
    item_nodes = ckg.item_nodes()

    def score_fn(user):
        return np.arange(ckg.n_items, dtype=np.int64), ppr_store.scores[user][item_nodes]

    return _evaluate_loop(score_fn, split, n, threads=threads)


def evaluate_popularity_baseline(split, n=20):
    """Rank items by training interaction count, identically for every user."""
    counts = np.zeros(split.train_pairs.item_count)
    for _, i in split.train_pairs.pairs:
        counts[i] += 1
    items = np.arange(split.train_pairs.item_count, dtype=np.int64)
    return _evaluate_loop(lambda u: (items, counts), split, n)
