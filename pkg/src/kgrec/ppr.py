"""Per-user PageRank-with-restart scores over the collaborative graph.

Scores are computed by power iteration on the column-normalized structural
adjacency (relation-agnostic: parallel edges under different relations count
once). A node with no out-neighbors keeps an all-zero column, so a little
probability mass can leak; score order on the reachable set is unaffected,
which is all the pruning consumes.
"""

import concurrent.futures
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._binio import read_container, write_container

PPR_MAGIC = b"KGRECPPR"
PPR_VERSION = 1

DEFAULT_ALPHA = 0.15
DEFAULT_ITERATIONS = 20


@dataclass
class ColumnStochasticAdjacency:
    """Sparse matrix with column j holding 1/out-degree(j) at j's neighbors."""

    matrix: sp.csr_matrix
    node_count: int


def normalized_adjacency(ckg):
    """Column-normalized structural adjacency of a built graph."""
    n = ckg.node_count
    if len(ckg.heads) == 0:
        return ColumnStochasticAdjacency(sp.csr_matrix((n, n)), n)
    key = ckg.heads * n + ckg.tails
    uniq = np.unique(key)
    h = uniq // n
    t = uniq % n
    out_deg = np.bincount(h, minlength=n)
    data = 1.0 / out_deg[h]
    mat = sp.csr_matrix((data, (t, h)), shape=(n, n))
    return ColumnStochasticAdjacency(mat, n)


def ppr_scores(adj, user, alpha=DEFAULT_ALPHA, iterations=DEFAULT_ITERATIONS):
    """Restart-walk scores of all nodes for a single source node."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha {alpha} not in (0,1)")
    if not 0 <= user < adj.node_count:
        raise IndexError(f"node {user} out of range [0,{adj.node_count})")
    p = np.zeros(adj.node_count)
    p[user] = 1.0
    r = p.copy()
    for _ in range(iterations):
        r = (1.0 - alpha) * (adj.matrix @ r) + alpha * p
    return r


def _ppr_block(adj, users, alpha, iterations):
    n = adj.node_count
    p = np.zeros((n, len(users)))
    p[users, np.arange(len(users))] = 1.0
    r = p.copy()
    for _ in range(iterations):
        r = (1.0 - alpha) * (adj.matrix @ r) + alpha * p
    return r.T


@dataclass
class PPRStore:
    """Per-user score vectors (row u is user u's scores over all nodes)."""

    scores: np.ndarray
    alpha: float
    iterations: int

    def user_scores(self, u):
        return self.scores[u]

    def save(self, path):
        meta = {"alpha": self.alpha, "iterations": self.iterations}
        write_container(path, PPR_MAGIC, PPR_VERSION, meta, {"scores": self.scores})

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path, PPR_MAGIC, PPR_VERSION)
        return cls(arrays["scores"], meta["alpha"], meta["iterations"])


def ppr_all_users(ckg, alpha=DEFAULT_ALPHA, iterations=DEFAULT_ITERATIONS, threads=1, block=256):
    """Scores for every user node, iterated in blocks of one-hot columns."""
    adj = normalized_adjacency(ckg)
    users = np.arange(ckg.n_users, dtype=np.int64)
    blocks = [users[i:i + block] for i in range(0, len(users), block)]
    out = np.empty((ckg.n_users, ckg.node_count))
    if threads > 1 and len(blocks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: _ppr_block(adj, b, alpha, iterations), blocks))
        for b, res in zip(blocks, results):
            out[b] = res
    else:
        for b in blocks:
            out[b] = _ppr_block(adj, b, alpha, iterations)
    return PPRStore(out, alpha, iterations)
