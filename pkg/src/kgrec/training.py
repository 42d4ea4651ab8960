"""Pairwise ranking optimization of the message passing model.

Each epoch walks the training users in shuffled visits. A visit builds the
user's pruned computation graph once, scores a chunk of that user's positives
together with freshly sampled negatives in a single forward pass, and
accumulates gradients of the pairwise softplus loss; Adam steps once per
batch of visits. When label-edge exclusion is on (the default) the
interaction edges of exactly the positives being scored, and their reverses,
are dropped from that visit's expansion, so the model cannot read the answer
off the graph; the user's remaining interactions stay in place.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import model as model_mod
from . import subgraph
from .errors import ConfigurationError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.0
    batch_size: int = 20  # visits per optimizer step
    epochs: int = 30
    k: int = 35
    depth: int = 3
    d: int = 36
    d_alpha: int = 3
    activation: str = "relu"
    use_attention: bool = True
    negatives_per_positive: int = 1
    positives_per_visit: int = 8  # 0 = all of the user's positives at once
    exclude_scored_edges: bool = True
    pruning: str = "ppr"  # "ppr" | "random" | "none"
    seed: int = 0
    patience: int = 0  # 0 = never stop early
    eval_every: int = 1  # epochs between validation passes

    def validate(self):
        if self.learning_rate < 0 or self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ConfigurationError("learning_rate/weight_decay/dropout out of range")
        for name, lo, hi in (("learning_rate", 1e-6, 1e-2),
                             ("weight_decay", 1e-5, 1e-2),
                             ("dropout", 0.0, 0.2)):
            val = getattr(self, name)
            if not lo <= val <= hi and val != 0:
                warnings.warn(f"{name}={val} outside the usual tuning range [{lo}, {hi}]",
                              stacklevel=2)
        if self.pruning not in ("ppr", "random", "none"):
            raise ConfigurationError(f"unknown pruning mode {self.pruning!r}")
        if self.batch_size < 1 or self.depth < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size, depth must be >= 1 and epochs >= 0")
        if self.pruning != "none" and self.k < 1:
            raise ConfigurationError("k must be >= 1 when pruning")
        return self


def bpr_loss(pos_logit, neg_logit):
    """Pairwise softplus ranking loss and its two logit gradients.

    loss = -ln sigmoid(pos - neg), computed as softplus(neg - pos) so large
    margins cannot overflow. Gradients: d/dpos = -sigmoid(neg - pos) and
    d/dneg the negation, summing to zero.
    """
    margin = np.asarray(pos_logit, dtype=np.float64) - np.asarray(neg_logit, dtype=np.float64)
    loss = np.logaddexp(0.0, -margin)
    s = expit(-margin)
    return loss, -s, s


def sample_negatives(user, train_pairs, n, rng):
    """n items the user has not interacted with, uniform with replacement."""
    positives = {i for u, i in train_pairs.pairs if u == user}
    if len(positives) >= train_pairs.item_count:
        raise ValueError(f"user {user} interacted with every item; cannot sample negatives")
    out = []
    while len(out) < n:
        j = int(rng.integers(train_pairs.item_count))
        if j not in positives:
            out.append(j)
    return out


def _sample_negatives_fast(positives_set, item_count, n, rng):
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        j = int(rng.integers(item_count))
        if j not in positives_set:
            out[filled] = j
            filled += 1
    return out


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(m={n: np.zeros_like(a) for n, a in params.param_dict().items()},
                   v={n: np.zeros_like(a) for n, a in params.param_dict().items()})


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """In-place Adam update with bias correction and decoupled weight decay."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, arr in params.param_dict().items():
        g = grads[name]
        if weight_decay:
            arr *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.assert_finite()
    return params, state


def _user_visits(by_user, positives_per_visit, rng):
    """Shuffled (user, positive-chunk) visits covering every pair once."""
    visits = []
    for u in sorted(by_user):
        items = np.array(by_user[u], dtype=np.int64)
        items = items[rng.permutation(len(items))]
        step = positives_per_visit if positives_per_visit > 0 else len(items)
        for k in range(0, len(items), step):
            visits.append((u, items[k:k + step]))
    order = rng.permutation(len(visits))
    return [visits[i] for i in order]


def train(ckg, split, ppr_store, config, val_pairs=None, log_fn=None):
    """Optimize model parameters on a split's training pairs.

    Returns (params, log) where log is one dict per epoch. With ``val_pairs``
    given, the checkpoint returned is the best-by-validation-recall one and
    ``config.patience`` > 0 stops after that many non-improving validations.
    """
    config.validate()
    train_pairs = split.train_pairs
    by_user = train_pairs.by_user()
    params = model_mod.init_params(
        config.d, config.d_alpha, config.depth, 2 * ckg.relation_count,
        np.random.default_rng([config.seed, 0]).integers(2 ** 31),
        activation=config.activation, use_attention=config.use_attention)
    state = AdamState.for_params(params)
    log = []
    best = {"recall": -1.0, "params": None, "bad": 0}
    pos_by_user = {u: set(items) for u, items in by_user.items()}

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        epoch_rng = np.random.default_rng([config.seed, 1, epoch])
        visits = _user_visits(by_user, config.positives_per_visit, epoch_rng)
        total_loss = 0.0
        total_pairs = 0
        grads = None
        in_batch = 0
        for visit_no, (user, pos_items) in enumerate(visits):
            rng = np.random.default_rng([config.seed, 2, epoch, visit_no])
            loss_sum, n_pairs, g = _visit_gradients(
                ckg, ppr_store, params, config, user, pos_items, pos_by_user[user], rng)
            total_loss += loss_sum
            total_pairs += n_pairs
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
            in_batch += 1
            if in_batch == config.batch_size or visit_no == len(visits) - 1:
                adam_step(params, grads, state, config.learning_rate, config.weight_decay)
                grads = None
                in_batch = 0
        entry = {
            "epoch": epoch,
            "loss": total_loss / max(total_pairs, 1),
            "pairs": total_pairs,
            "seconds": round(time.perf_counter() - t0, 3),
        }
        if val_pairs is not None and (epoch + 1) % config.eval_every == 0:
            recall = _validation_recall(ckg, ppr_store, params, config, train_pairs, val_pairs)
            entry["val_recall"] = recall
            if recall > best["recall"]:
                best.update(recall=recall, params=params.copy(), bad=0)
            else:
                best["bad"] += 1
                if config.patience and best["bad"] >= config.patience:
                    log.append(entry)
                    if log_fn:
                        log_fn(entry)
                    break
        log.append(entry)
        if log_fn:
            log_fn(entry)

    if val_pairs is not None and best["params"] is not None:
        return best["params"], log
    return params, log


def _visit_gradients(ckg, ppr_store, params, config, user, pos_items, user_positives, rng):
    """Forward/backward for one user visit; returns (loss_sum, n_pairs, grads)."""
    user_node = ckg.user_node(user)
    pos_nodes = ckg.item_node(pos_items)
    exclude = None
    if config.exclude_scored_edges:
        interact = ckg.interact_rel
        rev = interact + ckg.relation_count
        exclude = [(user_node, interact, int(p)) for p in pos_nodes]
        exclude += [(int(p), rev, user_node) for p in pos_nodes]
    graph = _build_graph(ckg, ppr_store, config, user, exclude, rng)

    negs = _sample_negatives_fast(
        user_positives, ckg.n_items,
        len(pos_items) * config.negatives_per_positive, rng)
    neg_nodes = ckg.item_node(negs)
    candidates, inverse = np.unique(np.concatenate([pos_nodes, neg_nodes]), return_inverse=True)
    pos_idx = inverse[:len(pos_nodes)]
    neg_idx = inverse[len(pos_nodes):]

    tape = model_mod.forward(graph, params, candidates,
                             dropout=config.dropout, rng=rng)
    rep = config.negatives_per_positive
    pos_rep = np.repeat(pos_idx, rep)
    losses, dpos, dneg = bpr_loss(tape.logits[pos_rep], tape.logits[neg_idx])
    dlogits = np.zeros(len(candidates))
    np.add.at(dlogits, pos_rep, dpos)
    np.add.at(dlogits, neg_idx, dneg)
    grads = model_mod.backward(tape, dlogits)
    return float(losses.sum()), len(losses), grads


def _build_graph(ckg, ppr_store, config, user, exclude, rng):
    if config.pruning == "ppr":
        return subgraph.user_computation_graph(
            ckg, ckg.user_node(user), config.depth,
            scores=ppr_store.user_scores(user), k=config.k, exclude_edges=exclude)
    if config.pruning == "random":
        return subgraph.user_computation_graph(
            ckg, ckg.user_node(user), config.depth,
            k=config.k, exclude_edges=exclude, prune_rng=rng)
    return subgraph.user_computation_graph(
        ckg, ckg.user_node(user), config.depth, exclude_edges=exclude)


def _validation_recall(ckg, ppr_store, params, config, train_pairs, val_pairs, n=20):
    from . import evaluate as eval_mod
    from .data import DatasetSplit

    split = DatasetSplit(train_pairs, val_pairs, "traditional")
    report = eval_mod.evaluate(params, ckg, split, ppr_store,
                               k=config.k, depth=config.depth, n=n, pruning=config.pruning)
    return report.recall
