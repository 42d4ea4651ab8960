"""Attention message passing over a layered graph, with exact gradients.

Per layer, each edge (s, r, o) contributes a message
``alpha * W (h_s + h_r)`` to its tail's accumulator, where ``alpha`` is a
sigmoid-bounded attention weight computed from the source representation and
the relation embedding; tails then pass through the activation. The user's
layer-0 representation is the zero vector, so everything a node's
representation carries arrives through edges on walks from the user. The
final score of an item is a dot product with the output vector, and items
absent from the last layer score exactly zero.

Backward is hand-derived reverse mode over the recorded tape; there is no
generic autodiff here.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from ._binio import read_container, write_container
from .errors import ConfigurationError

CHECKPOINT_MAGIC = b"KGRECCKP"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "identity", "tanh")


def _activate(name, pre):
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _activate_deriv(name, pre, post):
    if name == "relu":
        return (pre > 0.0).astype(np.float64)  # subgradient 0 at the kink
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


class ModelParams:
    """All learnable arrays, keyed layer by layer.

    ``relation_count`` is the full relation vocabulary including reverses.
    ``b_att`` is one vector shared by every layer's attention.
    """

    def __init__(self, d, d_alpha, depth, relation_count, activation="relu", use_attention=True):
        if min(d, d_alpha, depth) < 1:
            raise ConfigurationError("d, d_alpha and depth must be >= 1")
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}")
        self.d = d
        self.d_alpha = d_alpha
        self.depth = depth
        self.relation_count = relation_count
        self.activation = activation
        self.use_attention = use_attention
        self.h_rel = [np.zeros((relation_count, d)) for _ in range(depth)]
        self.W = [np.zeros((d, d)) for _ in range(depth)]
        self.w_att = [np.zeros(d_alpha) for _ in range(depth)]
        self.W_att_src = [np.zeros((d_alpha, d)) for _ in range(depth)]
        self.W_att_rel = [np.zeros((d_alpha, d)) for _ in range(depth)]
        self.b_att = np.zeros(d_alpha)
        self.w_out = np.zeros(d)

    def param_dict(self):
        """Name -> live array view, in a fixed iteration order."""
        out = {}
        for l in range(self.depth):
            out[f"h_rel.{l + 1}"] = self.h_rel[l]
            out[f"W.{l + 1}"] = self.W[l]
            out[f"w_att.{l + 1}"] = self.w_att[l]
            out[f"W_att_src.{l + 1}"] = self.W_att_src[l]
            out[f"W_att_rel.{l + 1}"] = self.W_att_rel[l]
        out["b_att"] = self.b_att
        out["w_out"] = self.w_out
        return out

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.param_dict().items()}

    def copy(self):
        other = ModelParams(self.d, self.d_alpha, self.depth, self.relation_count,
                            self.activation, self.use_attention)
        for name, arr in self.param_dict().items():
            other.param_dict()[name][...] = arr
        return other

    def config_dict(self):
        return {
            "d": self.d,
            "d_alpha": self.d_alpha,
            "depth": self.depth,
            "relation_count": self.relation_count,
            "activation": self.activation,
            "use_attention": self.use_attention,
        }

    def assert_finite(self):
        for name, arr in self.param_dict().items():
            if not np.isfinite(arr).all():
                raise FloatingPointError(f"parameter {name} contains NaN/Inf")

    def save(self, path):
        write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                        self.config_dict(), self.param_dict())

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        params = cls(meta["d"], meta["d_alpha"], meta["depth"], meta["relation_count"],
                     meta["activation"], meta["use_attention"])
        for name, arr in params.param_dict().items():
            arr[...] = arrays[name]
        return params


def init_params(d, d_alpha, depth, relation_count, seed, activation="relu", use_attention=True):
    """Uniform Glorot-style init: matrices in +-sqrt(6/(fan_in+fan_out)),
    relation embeddings in +-sqrt(6/d), vectors treated as 1-row matrices,
    attention bias zero."""
    params = ModelParams(d, d_alpha, depth, relation_count, activation, use_attention)
    rng = np.random.default_rng(seed)

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, size=shape)

    for l in range(depth):
        params.h_rel[l][...] = uniform((relation_count, d), np.sqrt(6.0 / d))
        params.W[l][...] = uniform((d, d), np.sqrt(6.0 / (d + d)))
        params.w_att[l][...] = uniform(d_alpha, np.sqrt(6.0 / (d_alpha + 1)))
        params.W_att_src[l][...] = uniform((d_alpha, d), np.sqrt(6.0 / (d_alpha + d)))
        params.W_att_rel[l][...] = uniform((d_alpha, d), np.sqrt(6.0 / (d_alpha + d)))
    params.b_att[...] = 0.0
    params.w_out[...] = uniform(d, np.sqrt(6.0 / (d + 1)))
    return params


def attention_weight(h_src, h_relation, w_att, W_att_src, W_att_rel, b_att):
    """Sigmoid edge weight from source and relation representations."""
    hidden = np.maximum(W_att_src @ h_src + W_att_rel @ h_relation + b_att, 0.0)
    return float(expit(w_att @ hidden))


@dataclass
class ForwardTape:
    """Everything forward computed, recorded for the backward pass."""

    graph: object
    params: ModelParams
    h: list  # per layer 0..L node representations
    pre: list  # per layer 1..L pre-activations
    m_in: list
    msg: list
    a_hidden: list
    alpha: list
    drop_mask: list
    candidates: np.ndarray
    cand_pos: np.ndarray  # -1 where the candidate is absent from the last layer
    logits: np.ndarray
    extras: dict = field(default_factory=dict)


def forward(graph, params, candidates=None, dropout=0.0, rng=None):
    """Run message passing and score candidate nodes.

    ``candidates`` are global node ids (default: every last-layer node).
    ``dropout`` > 0 needs ``rng`` and zeroes whole edge messages after the
    attention product (inverted scaling), training mode only.
    """
    if graph.depth != params.depth:
        raise ConfigurationError(f"graph depth {graph.depth} != params depth {params.depth}")
    if dropout and rng is None:
        raise ConfigurationError("dropout requires an rng")
    d = params.d
    h = [np.zeros((len(graph.nodes[0]), d))]
    pre_list, m_in_list, msg_list, hid_list, alpha_list, mask_list = [], [], [], [], [], []
    for l in range(1, params.depth + 1):
        le = graph.edges[l - 1]
        n_tails = len(graph.nodes[l])
        if len(le) and le.rel.max() >= params.relation_count:
            raise ConfigurationError("graph relation id outside the model's vocabulary")
        h_src = h[l - 1][le.head_pos]
        h_rel = params.h_rel[l - 1][le.rel]
        m_in = h_src + h_rel
        if params.use_attention:
            z = h_src @ params.W_att_src[l - 1].T + h_rel @ params.W_att_rel[l - 1].T + params.b_att
            a_hidden = np.maximum(z, 0.0)
            alpha = expit(a_hidden @ params.w_att[l - 1])
        else:
            a_hidden = None
            alpha = np.ones(len(le))
        msg = m_in @ params.W[l - 1].T
        weighted = alpha[:, None] * msg
        if dropout:
            mask = (rng.random(len(le)) >= dropout) / (1.0 - dropout)
            weighted = weighted * mask[:, None]
        else:
            mask = None
        agg = np.zeros((n_tails, d))
        if len(le):
            _kernels.scatter_add_rows(agg, le.tail_pos, np.ascontiguousarray(weighted))
        h.append(_activate(params.activation, agg))
        pre_list.append(agg)
        m_in_list.append(m_in)
        msg_list.append(msg)
        hid_list.append(a_hidden)
        alpha_list.append(alpha)
        mask_list.append(mask)

    if candidates is None:
        candidates = graph.nodes[-1].copy()
    candidates = np.asarray(candidates, dtype=np.int64)
    last = graph.nodes[-1]
    pos = np.searchsorted(last, candidates)
    pos_c = np.minimum(pos, max(len(last) - 1, 0))
    found = (last[pos_c] == candidates) if len(last) else np.zeros(len(candidates), dtype=bool)
    cand_pos = np.where(found, pos_c, -1)
    logits = np.zeros(len(candidates))
    if found.any():
        logits[found] = h[-1][cand_pos[found]] @ params.w_out
    return ForwardTape(graph, params, h, pre_list, m_in_list, msg_list, hid_list,
                       alpha_list, mask_list, candidates, cand_pos, logits)


def backward(tape, dlogits):
    """Gradients of sum(dlogits * logits) for every parameter."""
    params = tape.params
    graph = tape.graph
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != tape.logits.shape:
        raise ValueError("dlogits shape does not match the tape's logits")
    grads = params.zero_grads()

    dh = np.zeros_like(tape.h[-1])
    found = tape.cand_pos >= 0
    if found.any():
        pos = tape.cand_pos[found]
        dl = dlogits[found]
        grads["w_out"] += tape.h[-1][pos].T @ dl
        _kernels.scatter_add_rows(dh, pos, np.ascontiguousarray(dl[:, None] * params.w_out[None, :]))

    for l in range(params.depth, 0, -1):
        le = graph.edges[l - 1]
        d_pre = dh * _activate_deriv(params.activation, tape.pre[l - 1], tape.h[l])
        dh = np.zeros_like(tape.h[l - 1])
        if len(le) == 0:
            continue
        d_weighted = d_pre[le.tail_pos]
        mask = tape.drop_mask[l - 1]
        if mask is not None:
            d_weighted = d_weighted * mask[:, None]
        alpha = tape.alpha[l - 1]
        msg = tape.msg[l - 1]
        m_in = tape.m_in[l - 1]
        d_alpha_w = (d_weighted * msg).sum(axis=1)
        d_msg = alpha[:, None] * d_weighted
        grads[f"W.{l}"] += d_msg.T @ m_in
        d_m_in = d_msg @ params.W[l - 1]
        h_src = tape.h[l - 1][le.head_pos]
        h_rel = m_in - h_src
        if params.use_attention:
            a_hidden = tape.a_hidden[l - 1]
            d_a_pre = d_alpha_w * alpha * (1.0 - alpha)
            grads[f"w_att.{l}"] += a_hidden.T @ d_a_pre
            dz = d_a_pre[:, None] * params.w_att[l - 1][None, :]
            dz = dz * (a_hidden > 0.0)
            grads[f"W_att_src.{l}"] += dz.T @ h_src
            grads[f"W_att_rel.{l}"] += dz.T @ h_rel
            grads["b_att"] += dz.sum(axis=0)
            d_h_src = d_m_in + dz @ params.W_att_src[l - 1]
            d_h_rel = d_m_in + dz @ params.W_att_rel[l - 1]
        else:
            d_h_src = d_m_in
            d_h_rel = d_m_in
        _kernels.scatter_add_rows(grads[f"h_rel.{l}"], le.rel, np.ascontiguousarray(d_h_rel))
        _kernels.scatter_add_rows(dh, le.head_pos, np.ascontiguousarray(d_h_src))
    return grads


def numeric_gradients(objective, params, eps=1e-5):
    """Central finite differences of a scalar objective over every parameter."""
    grads = {}
    for name, arr in params.param_dict().items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = objective()
            flat[idx] = orig - eps
            lo = objective()
            flat[idx] = orig
            gflat[idx] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|) over all parameter coordinates."""
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def _random_small_ckg(rng, n_nodes):
    """A little random reverse-closed graph for gradient checking."""
    from .data import InteractionSet, TripleSet, build_ckg

    n_users = max(2, n_nodes // 5)
    n_items = max(3, n_nodes // 3)
    n_entities = max(n_items + 2, n_nodes - n_users)
    pairs = {(int(rng.integers(n_users)), int(rng.integers(n_items))) for _ in range(2 * n_nodes)}
    pairs |= {(u, int(rng.integers(n_items))) for u in range(n_users)}
    triples = {(int(rng.integers(n_entities)), int(rng.integers(2)), int(rng.integers(n_entities)))
               for _ in range(2 * n_nodes)}
    inter = InteractionSet(n_users, n_items, pairs)
    kg = TripleSet(n_entities, 2, [t for t in triples if t[0] != t[2]])
    alignment = [(i, i) for i in range(n_items)]
    return build_ckg(inter, kg, alignment)


def grad_check(seed, graph_size=20, depth=3, d=4, d_alpha=3, activation="relu",
               use_attention=True, eps=1e-5):
    """Compare backward() with central differences on a random small graph.

    The objective is a fixed random linear functional of the candidate
    logits. Returns the max relative error over every parameter coordinate.
    """
    from .subgraph import layered_expansion

    rng = np.random.default_rng(seed)
    ckg = _random_small_ckg(rng, graph_size)
    graph = layered_expansion(ckg, 0, depth)
    params = init_params(d, d_alpha, depth, 2 * ckg.relation_count, seed + 1,
                         activation=activation, use_attention=use_attention)
    candidates = ckg.item_nodes()
    coeff = rng.normal(size=len(candidates))

    tape = forward(graph, params, candidates)
    analytic = backward(tape, coeff)
    numeric = numeric_gradients(
        lambda: float(coeff @ forward(graph, params, candidates).logits), params, eps=eps)
    return max_relative_error(analytic, numeric)
