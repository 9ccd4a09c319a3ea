"""Convolutional feature extractor: strided conv blocks, global average
pooling, and a linear projection to a d-dimensional embedding.

Desk-scale by default (3 blocks, d=64) but fully configurable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import Array, ParameterSet, Tensor, as_f64

PARAM_PREFIX = "backbone."


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 32
    in_channels: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    embed_dim: int = 64
    # tanh: signed activations keep pooled features spread without batchnorm
    nonlinearity: str = "tanh"

    def __post_init__(self):
        if self.embed_dim < 8:
            raise ValueError("embed_dim must be at least 8")
        if self.nonlinearity not in ("relu", "tanh"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        size = self.image_size
        for _ in self.channels:
            size = (size + 2 * (self.kernel // 2) - self.kernel) // self.stride + 1
            if size < 1:
                raise ValueError("image too small for this many strided blocks")

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "in_channels": self.in_channels,
                "channels": list(self.channels), "kernel": self.kernel,
                "stride": self.stride, "embed_dim": self.embed_dim,
                "nonlinearity": self.nonlinearity}

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return BackboneConfig(**d)


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Array:
    # LeCun-style: uniform with variance 1/fan_in
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, Array]:
    """Fan-in scaled uniform weights, zero biases."""
    params: dict[str, Array] = {}
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.channels):
        fan_in = cfg.kernel * cfg.kernel * cin
        params[f"{PARAM_PREFIX}conv{i}.w"] = _fan_in_uniform(
            rng, (cfg.kernel, cfg.kernel, cin, cout), fan_in)
        params[f"{PARAM_PREFIX}conv{i}.b"] = np.zeros(cout)
        cin = cout
    params[f"{PARAM_PREFIX}proj.w"] = _fan_in_uniform(rng, (cin, cfg.embed_dim), cin)
    params[f"{PARAM_PREFIX}proj.b"] = np.zeros(cfg.embed_dim)
    return params


def preprocess(images: Array) -> Array:
    """Center each image on its own mean so the dominant background DC
    component cannot swamp the pooled features."""
    x = as_f64(images)
    return x - x.mean(axis=(1, 2, 3), keepdims=True)


def embed_graph(leaves: Mapping[str, Tensor], images: Array, cfg: BackboneConfig) -> Tensor:
    """In-graph embedding of an NHWC image batch -> (N, embed_dim).

    Takes raw [0, 1] images as a plain array; centering happens here."""
    images = as_f64(images)
    if images.ndim != 4 or images.shape[1:] != (cfg.image_size, cfg.image_size,
                                                cfg.in_channels):
        raise ValueError(f"image batch shape {images.shape} does not match config "
                         f"(N, {cfg.image_size}, {cfg.image_size}, {cfg.in_channels})")
    act = T.relu if cfg.nonlinearity == "relu" else T.tanh
    h = T.constant(preprocess(images))
    pad = cfg.kernel // 2
    for i in range(len(cfg.channels)):
        h = act(T.conv2d(h, leaves[f"{PARAM_PREFIX}conv{i}.w"],
                         leaves[f"{PARAM_PREFIX}conv{i}.b"],
                         stride=cfg.stride, pad=pad))
    pooled = T.global_avg_pool(h)
    return T.add(T.matmul(pooled, leaves[f"{PARAM_PREFIX}proj.w"]),
                 leaves[f"{PARAM_PREFIX}proj.b"])


def embed(params: ParameterSet, image: Array, cfg: BackboneConfig) -> Array:
    """Embedding of a single (H, W, C) image."""
    img = as_f64(image)
    if img.ndim != 3:
        raise ValueError(f"expected one (H, W, C) image, got shape {img.shape}")
    leaves = params.leaves(lambda _: False)
    out = embed_graph(leaves, img[None], cfg)
    T.require_finite("embedding", out.data)
    return out.data[0]


def embed_batch(params: ParameterSet, images, cfg: BackboneConfig) -> Array:
    """Embeddings of a list/array of images; elementwise identical to
    calling embed() per item."""
    return np.stack([embed(params, img, cfg) for img in images])


def embed_many(params: ParameterSet, images: Array, cfg: BackboneConfig) -> Array:
    """Batched fast path used by training/eval loops. Matches embed() to
    floating-point reordering (~1e-9), not bitwise."""
    leaves = params.leaves(lambda _: False)
    return embed_graph(leaves, as_f64(images), cfg).data


@dataclass(frozen=True)
class FrozenView:
    """Marks parameter prefixes whose gradients are disabled.

    Stage-2 training consults `trainable` when creating graph leaves and
    when applying updates, so frozen entries stay bit-identical.
    """
    params: ParameterSet
    prefixes: tuple[str, ...] = (PARAM_PREFIX,)

    def trainable(self, name: str) -> bool:
        return not name.startswith(self.prefixes)


def freeze(params: ParameterSet, prefixes: tuple[str, ...] = (PARAM_PREFIX,)) -> FrozenView:
    return FrozenView(params=params, prefixes=tuple(prefixes))


def shift_image(image: Array, dy: int, dx: int) -> Array:
    """Translate without wraparound; vacated pixels take the mean colour."""
    img = as_f64(image)
    out = np.full_like(img, img.mean(axis=(0, 1)))
    h, w = img.shape[:2]
    out[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)] = \
        img[max(0, -dy):min(h, h - dy), max(0, -dx):min(w, w - dx)]
    return out


def translation_shift_ratio(params: ParameterSet, cfg: BackboneConfig,
                            image: Array, shift: int | None = None) -> float:
    """Relative embedding change when the content translates by the total
    conv stride (content must stay in frame). A sanity diagnostic for
    pooled-feature equivariance, not an exactness claim."""
    if shift is None:
        shift = cfg.stride ** len(cfg.channels)
    base = embed(params, image, cfg)
    moved = embed(params, shift_image(image, shift, 0), cfg)
    return float(np.linalg.norm(moved - base) / (np.linalg.norm(base) + 1e-12))
