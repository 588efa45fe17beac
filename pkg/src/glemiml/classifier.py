"""MIML prediction model: per-instance transform, max pooling, label logits.

Depth counts affine layers including the head: depth 1 is a single affine head
on max-pooled raw features, depth 2 adds one hidden layer applied per instance,
depth 3 adds two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Bag, MIMLDataset
from .errors import ConfigError, ShapeError
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


@dataclass
class ClassifierModel:
    depth: int
    instance_net: FeedForwardNet | None  # per-instance transform; None at depth 1
    head: FeedForwardNet  # pooled features -> label logits

    def __post_init__(self):
        if self.depth not in (1, 2, 3):
            raise ConfigError(f"depth must be 1, 2 or 3, got {self.depth}")
        if (self.depth == 1) != (self.instance_net is None):
            raise ConfigError("instance net present iff depth > 1")

    @property
    def label_count(self) -> int:
        return self.head.output_dim

    @property
    def feature_dim(self) -> int:
        return self.instance_net.input_dim if self.instance_net else self.head.input_dim


def init_classifier(feature_dim: int, label_count: int, depth: int = 2,
                    seed: int = 0) -> ClassifierModel:
    """Relu hidden layers of width max(32, 2t); identity-activation head."""
    h = max(32, 2 * label_count)
    if depth == 1:
        return ClassifierModel(depth=1, instance_net=None,
                               head=init_net([feature_dim, label_count], "relu", seed=seed * 2 + 1))
    if depth == 2:
        inst = init_net([feature_dim, h], "relu", seed=seed * 2 + 1, output_activation="relu")
    elif depth == 3:
        inst = init_net([feature_dim, h, h], "relu", seed=seed * 2 + 1, output_activation="relu")
    else:
        raise ConfigError(f"depth must be 1, 2 or 3, got {depth}")
    return ClassifierModel(depth=depth, instance_net=inst,
                           head=init_net([h, label_count], "relu", seed=seed * 2 + 2))


def predict_bag(model: ClassifierModel, bag: Bag):
    """Returns (logits, sigmoid probabilities) for one bag."""
    s, _, _ = _bag_forward(model, bag)
    return s, 1.0 / (1.0 + np.exp(-s))


def _bag_forward(model: ClassifierModel, bag: Bag):
    if bag.instances.shape[1] != model.feature_dim:
        raise ShapeError(
            f"bag feature dim {bag.instances.shape[1]} != model feature dim {model.feature_dim}"
        )
    if model.instance_net is None:
        hidden, inst_cache = bag.instances, None
    else:
        hidden, inst_cache = forward_batch(model.instance_net, bag.instances)
    pool_idx = hidden.argmax(axis=0)
    pooled = hidden[pool_idx, np.arange(hidden.shape[1])]
    s, head_cache = forward_batch(model.head, pooled[None, :])
    return s[0], (inst_cache, pool_idx, hidden.shape[0], head_cache), pooled


def predict_dataset(model: ClassifierModel, ds: MIMLDataset):
    """Stacked (B, t) logits and probabilities, one row per bag."""
    rows = [predict_bag(model, bag) for bag in ds.bags]
    return np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows])


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strict inequality: ties resolve to negative."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold!r}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ShapeError("probabilities must lie in [0, 1]")
    return (probs > threshold).astype(np.int64)


def classifier_forward(model: ClassifierModel, bags):
    """Batched forward with caches. Returns (logits (B, t), probs, cache)."""
    caches, logits = [], []
    for bag in bags:
        s, cache, _ = _bag_forward(model, bag)
        logits.append(s)
        caches.append(cache)
    S = np.stack(logits)
    return S, 1.0 / (1.0 + np.exp(-S)), caches


def classifier_backward(model: ClassifierModel, caches, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient wrt all classifier parameters, flat, aligned with classifier_params()."""
    head_grad = np.zeros(num_params(model.head))
    inst_grad = (np.zeros(num_params(model.instance_net))
                 if model.instance_net is not None else None)
    for i, (inst_cache, pool_idx, n_inst, head_cache) in enumerate(caches):
        hg, g_pooled = backward_batch(model.head, head_cache, grad_logits[i][None, :])
        head_grad += grads_to_vector(hg)
        if model.instance_net is None:
            continue
        g_hidden = np.zeros((n_inst, pool_idx.shape[0]))
        g_hidden[pool_idx, np.arange(pool_idx.shape[0])] = g_pooled[0]
        ig, _ = backward_batch(model.instance_net, inst_cache, g_hidden)
        inst_grad += grads_to_vector(ig)
    if inst_grad is None:
        return head_grad
    return np.concatenate([inst_grad, head_grad])


def classifier_params(model: ClassifierModel) -> np.ndarray:
    parts = []
    if model.instance_net is not None:
        parts.append(net_to_vector(model.instance_net))
    parts.append(net_to_vector(model.head))
    return np.concatenate(parts)


def set_classifier_params(model: ClassifierModel, vec: np.ndarray) -> None:
    pos = 0
    if model.instance_net is not None:
        size = num_params(model.instance_net)
        vector_to_net(vec[pos:pos + size], model.instance_net)
        pos += size
    size = num_params(model.head)
    vector_to_net(vec[pos:pos + size], model.head)
    if pos + size != vec.size:
        raise ShapeError("parameter vector length mismatch")


def classifier_to_json_dict(model: ClassifierModel) -> dict:
    return {
        "kind": "classifier",
        "depth": model.depth,
        "pooling": "max",
        "instance_net": (net_to_json_dict(model.instance_net)
                         if model.instance_net is not None else None),
        "head": net_to_json_dict(model.head),
    }


def classifier_from_json_dict(doc: dict) -> ClassifierModel:
    inst = doc.get("instance_net")
    return ClassifierModel(
        depth=int(doc["depth"]),
        instance_net=net_from_json_dict(inst) if inst is not None else None,
        head=net_from_json_dict(doc["head"]),
    )


def save_classifier(model: ClassifierModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(classifier_to_json_dict(model), fh, sort_keys=True)


def load_classifier(path) -> ClassifierModel:
    with open(path, "r", encoding="utf-8") as fh:
        return classifier_from_json_dict(json.load(fh))
