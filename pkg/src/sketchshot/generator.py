"""Classifier weight generation for incremental classes.

New-class rows start as l2-normalised mean support embeddings, get
concatenated after the existing base rows, and are then refined jointly
with them by rounds of graph-attention message passing. Weights are
shared across nodes, so the module handles any number of incoming
classes and is equivariant to their order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Array, Tensor, as_f64

PARAM_PREFIX = "generator."
QUERY = PARAM_PREFIX + "query_proj"
KEY = PARAM_PREFIX + "key_proj"
VALUE = PARAM_PREFIX + "value_proj"


@dataclass(frozen=True)
class GatParams:
    """Learnable d x d projections for attention logits (query/key) and
    messages (value), plus the number of refinement rounds."""
    query_proj: Array
    key_proj: Array
    value_proj: Array
    rounds: int = 1

    def __post_init__(self):
        for name in ("query_proj", "key_proj", "value_proj"):
            m = as_f64(getattr(self, name))
            object.__setattr__(self, name, m)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got {m.shape}")
            if m.shape != self.query_proj.shape:
                raise ValueError("projection shapes disagree")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")

    def as_entries(self) -> dict[str, Array]:
        return {QUERY: self.query_proj, KEY: self.key_proj, VALUE: self.value_proj}

    @staticmethod
    def from_entries(entries, rounds: int = 1) -> "GatParams":
        return GatParams(entries[QUERY], entries[KEY], entries[VALUE], rounds=rounds)


def init_generator(embed_dim: int, rng: np.random.Generator,
                   rounds: int = 1) -> GatParams:
    # near-zero start keeps the first refinements close to the identity
    limit = 0.01 * np.sqrt(1.0 / embed_dim)
    def mk():
        return rng.uniform(-limit, limit, size=(embed_dim, embed_dim))
    return GatParams(mk(), mk(), mk(), rounds=rounds)


def class_prototype(support_embeddings) -> Array:
    """l2-normalised mean of the support embeddings for one class."""
    embs = as_f64(support_embeddings)
    if embs.ndim != 2 or embs.shape[0] < 1:
        raise ValueError(f"need a (k, d) stack of embeddings, got {embs.shape}")
    mean = embs.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 1e-12:
        raise ValueError("support embeddings average to a zero vector")
    return mean / norm


@dataclass
class WeightAssembly:
    rows: Tensor                 # (k_base + k_novel, d)
    k_base: int
    k_novel: int
    class_ids: tuple[int, ...]   # base ids first, then novel ids


def assemble(base_rows: Tensor, novel_rows: Tensor, base_ids, novel_ids) -> WeightAssembly:
    if base_rows.data.shape[1] != novel_rows.data.shape[1]:
        raise ValueError(f"embedding dims disagree: base d={base_rows.data.shape[1]}, "
                         f"novel d={novel_rows.data.shape[1]}")
    norms = np.linalg.norm(novel_rows.data, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("novel rows must be unit-norm at assembly")
    rows = T.concat_rows([base_rows, novel_rows])
    return WeightAssembly(rows=rows, k_base=base_rows.data.shape[0],
                          k_novel=novel_rows.data.shape[0],
                          class_ids=tuple(base_ids) + tuple(novel_ids))


def gat_attention(rows: Tensor, query_proj: Tensor, key_proj: Tensor) -> Tensor:
    """Row-stochastic attention over every ordered pair of weight rows."""
    q = T.matmul(rows, T.transpose(query_proj))
    k = T.matmul(rows, T.transpose(key_proj))
    logits = T.matmul(q, T.transpose(k))
    T.require_finite("attention logits", logits.data)
    return T.row_softmax(logits)


def gat_update(rows: Tensor, attention: Tensor, value_proj: Tensor,
               literal_self_message: bool = False) -> Tensor:
    """One residual refinement round.

    The default message for row i aggregates the transformed neighbour
    rows, weighted by attention. `literal_self_message` instead scales
    row i's own transform by the attention mass (which sums to one), so
    no neighbour information flows; kept only for comparison runs.
    """
    transformed = T.matmul(rows, T.transpose(value_proj))
    if literal_self_message:
        k_total = rows.data.shape[0]
        mass = T.matmul(attention, T.constant(np.ones((k_total, 1))))
        message = T.mul(mass, transformed)
    else:
        message = T.matmul(attention, transformed)
    return T.add(rows, message)


def refine(rows: Tensor, query_proj: Tensor, key_proj: Tensor, value_proj: Tensor,
           rounds: int = 1, literal_self_message: bool = False) -> Tensor:
    """`rounds` refinement passes, recomputing attention each round."""
    for _ in range(rounds):
        a = gat_attention(rows, query_proj, key_proj)
        rows = gat_update(rows, a, value_proj, literal_self_message=literal_self_message)
    return rows


def generate(gat_leaves, base_rows: Tensor, support_embeddings: list,
             base_ids=None, novel_ids=None, use_gat: bool = True,
             rounds: int = 1, literal_self_message: bool = False) -> tuple[Tensor, WeightAssembly]:
    """Full pipeline: prototypes -> concatenation -> attention refinement.

    `support_embeddings` is one Tensor or array of shape (k_i, d) per new
    class. `gat_leaves` maps the generator parameter names to Tensors
    (graph leaves during training, constants at inference).
    """
    if not support_embeddings:
        raise ValueError("need support embeddings for at least one new class")
    protos = []
    for embs in support_embeddings:
        t = embs if isinstance(embs, Tensor) else T.constant(as_f64(embs))
        if t.data.ndim != 2:
            raise ValueError(f"support stack must be (k, d), got {t.data.shape}")
        protos.append(T.l2_normalize(T.mean_rows(t)))
    novel_rows = T.concat_rows(protos)
    if base_ids is None:
        base_ids = tuple(range(base_rows.data.shape[0]))
    if novel_ids is None:
        novel_ids = tuple(range(len(base_ids), len(base_ids) + len(protos)))
    wa = assemble(base_rows, novel_rows, base_ids, novel_ids)
    if not use_gat:
        return wa.rows, wa
    refined = refine(wa.rows, gat_leaves[QUERY], gat_leaves[KEY], gat_leaves[VALUE],
                     rounds=rounds, literal_self_message=literal_self_message)
    return refined, wa


def generate_rows(gat: GatParams, base_rows: Array, support_embeddings: list,
                  use_gat: bool = True, literal_self_message: bool = False) -> Array:
    """Inference convenience: plain arrays in, refined weight matrix out."""
    leaves = {name: T.constant(arr) for name, arr in gat.as_entries().items()}
    out, _ = generate(leaves, T.constant(as_f64(base_rows)), support_embeddings,
                      use_gat=use_gat, rounds=gat.rounds,
                      literal_self_message=literal_self_message)
    return out.data
