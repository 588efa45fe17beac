"""Label-distribution recovery: instance embedding, graph interaction, label-graph refinement.

Per-bag logits are the sum of three branches (pooled raw features, pooled
graph-propagated embeddings, logical labels); a single label-graph propagation
pass refines the stacked batch logits. Distributions are the row-softmax of
the refined logits, confidences their elementwise sigmoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Bag
from .errors import ConfigError, ShapeError
from .graph import mutual_knn_median, mutual_knn_median_backward
from .nets import (
    FeedForwardNet,
    backward_batch,
    forward_batch,
    grads_to_vector,
    init_net,
    net_from_json_dict,
    net_to_json_dict,
    net_to_vector,
    num_params,
    vector_to_net,
)

# Counts instance-graph constructions only; the label graph is counted separately
# by graph.graph_build_count(). Lets ablation C prove its branch is dead.
_instance_graph_builds = 0


def instance_graph_build_count() -> int:
    return _instance_graph_builds


def reset_instance_graph_build_count() -> None:
    global _instance_graph_builds
    _instance_graph_builds = 0


@dataclass
class EnhancerModel:
    sigma_net: FeedForwardNet  # d -> p instance embedding
    omega1_net: FeedForwardNet  # d -> t, pooled raw features
    omega2_net: FeedForwardNet  # p -> t, pooled graph interaction
    omega3_net: FeedForwardNet  # t -> t, logical labels
    instance_k: int = 3
    k_label: int = 3
    use_instance_graph: bool = True

    def __post_init__(self):
        t = self.omega1_net.output_dim
        if self.omega2_net.output_dim != t or self.omega3_net.output_dim != t:
            raise ConfigError("omega nets must share the label-count output dim")
        if self.sigma_net.output_dim != self.omega2_net.input_dim:
            raise ConfigError("sigma output dim must match omega2 input dim")

    @property
    def label_count(self) -> int:
        return self.omega1_net.output_dim

    @property
    def embed_dim(self) -> int:
        return self.sigma_net.output_dim

    @property
    def nets(self):
        return (self.sigma_net, self.omega1_net, self.omega2_net, self.omega3_net)


@dataclass(frozen=True)
class EnhancedBatch:
    logits: np.ndarray  # (B, t) refined logits
    distributions: np.ndarray  # (B, t) row-softmax of logits
    confidences: np.ndarray  # (B, t) elementwise sigmoid of logits


def init_enhancer(feature_dim: int, label_count: int, embed_dim: int = 8,
                  instance_k: int = 3, k_label: int = 3, seed: int = 0,
                  use_instance_graph: bool = True) -> EnhancerModel:
    """Two-layer tanh nets, hidden width max(16, 2t), identity outputs."""
    if label_count < 2:
        raise ConfigError("enhancer needs label_count >= 2")
    h = max(16, 2 * label_count)
    return EnhancerModel(
        sigma_net=init_net([feature_dim, h, embed_dim], "tanh", seed=seed * 4 + 1),
        omega1_net=init_net([feature_dim, h, label_count], "tanh", seed=seed * 4 + 2),
        omega2_net=init_net([embed_dim, h, label_count], "tanh", seed=seed * 4 + 3),
        omega3_net=init_net([label_count, h, label_count], "tanh", seed=seed * 4 + 4),
        instance_k=instance_k,
        k_label=k_label,
        use_instance_graph=use_instance_graph,
    )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_backward(soft: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return soft * (grad - (grad * soft).sum(axis=1, keepdims=True))


def embed_instances(model: EnhancerModel, bag: Bag) -> np.ndarray:
    """Row k is the sigma-net embedding of instance k (order preserving)."""
    if bag.instances.shape[1] != model.sigma_net.input_dim:
        raise ShapeError(
            f"bag feature dim {bag.instances.shape[1]} != sigma input {model.sigma_net.input_dim}"
        )
    out, _ = forward_batch(model.sigma_net, bag.instances)
    return out


def _bag_branches(model: EnhancerModel, bag: Bag):
    """Pooled branch inputs for one bag, plus the caches backprop needs."""
    global _instance_graph_builds
    U = bag.instances
    m1 = U.mean(axis=0)
    if not model.use_instance_graph:
        return m1, np.zeros(model.embed_dim), None
    E, sig_cache = forward_batch(model.sigma_net, U)
    _instance_graph_builds += 1
    A, gcache = mutual_knn_median(E, model.instance_k)
    P = A @ E
    m2 = P.mean(axis=0)
    return m1, m2, {"sig_cache": sig_cache, "E": E, "A": A, "gcache": gcache, "n": U.shape[0]}


def recover_logits(model: EnhancerModel, bag: Bag) -> np.ndarray:
    """Base (pre-refinement) logits for one bag: sum of the three branches."""
    m1, m2, _ = _bag_branches(model, bag)
    o1, _ = forward_batch(model.omega1_net, m1[None, :])
    o2, _ = forward_batch(model.omega2_net, m2[None, :])
    o3, _ = forward_batch(model.omega3_net, bag.logical_labels.astype(np.float64)[None, :])
    return (o1 + o2 + o3)[0]


def _row_normalize(adj: np.ndarray):
    """Scale rows with sum > 1 down to sum exactly 1; smaller rows untouched."""
    sums = adj.sum(axis=1)
    scale = np.where(sums > 1.0, sums, 1.0)
    return adj / scale[:, None], scale


def refine_with_label_graph(model: EnhancerModel, batch_logits: np.ndarray) -> EnhancedBatch:
    batch, _ = _refine_forward(model, np.asarray(batch_logits, dtype=np.float64))
    return batch


def _refine_forward(model: EnhancerModel, base_logits: np.ndarray):
    if base_logits.ndim != 2 or base_logits.shape[0] < 1:
        raise ShapeError("batch logits must be a non-empty 2-D matrix")
    t = base_logits.shape[1]
    if t < 2:
        raise ConfigError("label-graph refinement needs label_count >= 2")
    d0 = _softmax_rows(base_logits)
    adj, lab_cache = mutual_knn_median(d0.T, model.k_label)
    adj_n, scale = _row_normalize(adj)
    refined = base_logits + base_logits @ adj_n.T
    batch = EnhancedBatch(
        logits=refined,
        distributions=_softmax_rows(refined),
        confidences=1.0 / (1.0 + np.exp(-refined)),
    )
    cache = {"base": base_logits, "d0": d0, "adj": adj, "adj_n": adj_n,
             "scale": scale, "lab_cache": lab_cache}
    return batch, cache


def enhance_batch(model: EnhancerModel, bags) -> EnhancedBatch:
    batch, _ = enhancer_forward(model, bags)
    return batch


def enhancer_forward(model: EnhancerModel, bags):
    """Full forward over a batch of bags; returns (EnhancedBatch, cache)."""
    if not bags:
        raise ShapeError("enhance_batch needs at least one bag")
    m1s, m2s, bag_caches = [], [], []
    for bag in bags:
        m1, m2, bc = _bag_branches(model, bag)
        m1s.append(m1)
        m2s.append(m2)
        bag_caches.append(bc)
    M1 = np.stack(m1s)
    M2 = np.stack(m2s)
    Lmat = np.stack([b.logical_labels for b in bags]).astype(np.float64)
    o1, c1 = forward_batch(model.omega1_net, M1)
    o2, c2 = forward_batch(model.omega2_net, M2)
    o3, c3 = forward_batch(model.omega3_net, Lmat)
    base = o1 + o2 + o3
    batch, refine_cache = _refine_forward(model, base)
    cache = {"bag_caches": bag_caches, "c1": c1, "c2": c2, "c3": c3,
             "refine": refine_cache, "batch": batch}
    return batch, cache


def _row_normalize_backward(adj: np.ndarray, scale: np.ndarray, grad_n: np.ndarray) -> np.ndarray:
    sums = adj.sum(axis=1)
    grad = grad_n / scale[:, None]
    scaled = sums > 1.0
    if scaled.any():
        inner = (grad_n * adj).sum(axis=1) / (scale * scale)
        grad = grad - np.where(scaled, inner, 0.0)[:, None]
    return grad


def enhancer_backward(model: EnhancerModel, cache, grad_refined: np.ndarray) -> np.ndarray:
    """Gradient of a scalar wrt all enhancer parameters, given its gradient on
    the refined logits. Returns a flat vector aligned with enhancer_params()."""
    rc = cache["refine"]
    base, d0, adj_n = rc["base"], rc["d0"], rc["adj_n"]

    g_base = grad_refined + grad_refined @ adj_n
    g_adj_n = grad_refined.T @ base
    g_adj = _row_normalize_backward(rc["adj"], rc["scale"], g_adj_n)
    g_cols = mutual_knn_median_backward(rc["lab_cache"], g_adj)  # (t, B)
    g_base += _softmax_rows_backward(d0, g_cols.T)

    g1, _ = backward_batch(model.omega1_net, cache["c1"], g_base)
    g2, g_m2 = backward_batch(model.omega2_net, cache["c2"], g_base)
    g3, _ = backward_batch(model.omega3_net, cache["c3"], g_base)

    sigma_grad = np.zeros(num_params(model.sigma_net))
    for i, bc in enumerate(cache["bag_caches"]):
        if bc is None:
            continue
        n, E, A = bc["n"], bc["E"], bc["A"]
        g_p = np.tile(g_m2[i] / n, (n, 1))
        g_e = A.T @ g_p
        g_a = g_p @ E.T
        g_e += mutual_knn_median_backward(bc["gcache"], g_a)
        sg, _ = backward_batch(model.sigma_net, bc["sig_cache"], g_e)
        sigma_grad += grads_to_vector(sg)

    return np.concatenate([
        sigma_grad, grads_to_vector(g1), grads_to_vector(g2), grads_to_vector(g3)
    ])


def enhancer_params(model: EnhancerModel) -> np.ndarray:
    return np.concatenate([net_to_vector(n) for n in model.nets])


def set_enhancer_params(model: EnhancerModel, vec: np.ndarray) -> None:
    pos = 0
    for net in model.nets:
        size = num_params(net)
        vector_to_net(vec[pos:pos + size], net)
        pos += size
    if pos != vec.size:
        raise ShapeError("parameter vector length mismatch")


def enhancer_to_json_dict(model: EnhancerModel) -> dict:
    return {
        "kind": "enhancer",
        "instance_k": model.instance_k,
        "k_label": model.k_label,
        "use_instance_graph": model.use_instance_graph,
        "sigma": net_to_json_dict(model.sigma_net),
        "omega1": net_to_json_dict(model.omega1_net),
        "omega2": net_to_json_dict(model.omega2_net),
        "omega3": net_to_json_dict(model.omega3_net),
    }


def enhancer_from_json_dict(doc: dict) -> EnhancerModel:
    return EnhancerModel(
        sigma_net=net_from_json_dict(doc["sigma"]),
        omega1_net=net_from_json_dict(doc["omega1"]),
        omega2_net=net_from_json_dict(doc["omega2"]),
        omega3_net=net_from_json_dict(doc["omega3"]),
        instance_k=int(doc["instance_k"]),
        k_label=int(doc["k_label"]),
        use_instance_graph=bool(doc["use_instance_graph"]),
    )


def save_enhancer(model: EnhancerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(enhancer_to_json_dict(model), fh, sort_keys=True)


def load_enhancer(path) -> EnhancerModel:
    with open(path, "r", encoding="utf-8") as fh:
        return enhancer_from_json_dict(json.load(fh))
