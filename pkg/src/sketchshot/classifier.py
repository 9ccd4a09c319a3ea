"""Cosine-similarity classification head.

Logits are a fixed scale times the cosine between the embedding and each
l2-normalised class weight row, so predictions are invariant to the norm
of the embedding and of every individual row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Array, Tensor, as_f64

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ClassifierWeights:
    """Raw (unnormalised) per-class weight rows plus their class identities."""
    weights: Array          # (num_classes, d)
    class_ids: tuple[int, ...]
    scale: float = 10.0

    def __post_init__(self):
        w = as_f64(self.weights)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or w.shape[0] != len(self.class_ids):
            raise ValueError(f"need one weight row per class id: "
                             f"{w.shape} vs {len(self.class_ids)} ids")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def row_index(self, class_id: int) -> int:
        return self.class_ids.index(class_id)


def normalize_rows(weights: Array, class_ids: tuple[int, ...] | None = None) -> Array:
    """l2-normalise every row; zero rows are rejected by class id."""
    w = as_f64(weights)
    norms = np.linalg.norm(w, axis=1)
    bad = np.nonzero(norms <= 1e-12)[0]
    if bad.size:
        which = class_ids[bad[0]] if class_ids is not None else int(bad[0])
        raise ValueError(f"zero weight row for class {which}")
    return w / norms[:, None]


def predict(cw: ClassifierWeights, embedding: Array) -> Array:
    """Probability vector over cw.class_ids for one embedding."""
    return predict_batch(cw, as_f64(embedding).reshape(1, -1))[0]


def predict_batch(cw: ClassifierWeights, embeddings: Array) -> Array:
    """(n, d) embeddings -> (n, num_classes) probabilities."""
    f = as_f64(embeddings)
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise ValueError("zero embedding cannot be classified")
    w_hat = normalize_rows(cw.weights, cw.class_ids)
    logits = cw.scale * ((f / norms) @ w_hat.T)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite prediction")
    return probs


def cross_entropy(pred: Array, target: Array) -> float:
    """H(target, pred) = -sum target_i * log(max(pred_i, 1e-12))."""
    p = as_f64(pred).reshape(-1)
    t = as_f64(target).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: pred {p.shape} vs target {t.shape}")
    for name, v in (("pred", p), ("target", t)):
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} does not sum to 1 (got {v.sum()!r})")
    return float(-(t * np.log(np.maximum(p, LOG_CLAMP))).sum())


def cosine_logits(weight_rows: Tensor, embeddings: Tensor, scale: float) -> Tensor:
    """In-graph scaled cosine logits: (n, d) embeddings vs (C, d) rows -> (n, C)."""
    w_hat = T.l2_normalize(weight_rows)
    f_hat = T.l2_normalize(embeddings)
    return T.scale(T.matmul(f_hat, T.transpose(w_hat)), scale)
