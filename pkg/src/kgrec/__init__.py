"""Knowledge-graph recommender based on user-centric subgraph encoding.

The pipeline: build a collaborative graph from interactions plus a knowledge
graph, precompute per-user PageRank-with-restart scores, expand and prune a
layered computation graph per user, score items with an attention message
passing network, train with pairwise ranking loss, and evaluate with
all-ranking top-N metrics.
"""

__version__ = "0.1.0"
