"""Merge two per-domain gradient sets by element-wise sign agreement.

Components whose signs agree in both domains are summed; conflicting
components are zeroed. sign(0) is treated as its own sign, so a zero
component conflicts with any nonzero one.
"""
from __future__ import annotations

import numpy as np

from .tensor import Array, GradientSet


def _check_aligned(a: GradientSet, b: GradientSet) -> None:
    if a.values.keys() != b.values.keys():
        only_a = sorted(a.values.keys() - b.values.keys())
        only_b = sorted(b.values.keys() - a.values.keys())
        raise ValueError(f"gradient key mismatch: only-left={only_a} only-right={only_b}")
    for name in a.values:
        if a.values[name].shape != b.values[name].shape:
            raise ValueError(f"gradient shape mismatch for '{name}': "
                             f"{a.values[name].shape} vs {b.values[name].shape}")


def sign_agreement(g_photo: GradientSet, g_sketch: GradientSet) -> dict[str, Array]:
    """0/1 mask per parameter: 1 where both components carry the same sign."""
    _check_aligned(g_photo, g_sketch)
    return {name: (np.sign(g_photo.values[name]) == np.sign(g_sketch.values[name])).astype(np.float64)
            for name in g_photo.values}


def consensus_merge(g_photo: GradientSet, g_sketch: GradientSet) -> GradientSet:
    """Sum of the two gradients where signs agree, zero elsewhere."""
    mask = sign_agreement(g_photo, g_sketch)
    merged = {name: (g_photo.values[name] + g_sketch.values[name]) * mask[name]
              for name in mask}
    return GradientSet(merged, tag="merged")


def zeroed_fraction(mask: dict[str, Array]) -> float:
    """Fraction of scalar components the merge zeroed out."""
    total = sum(m.size for m in mask.values())
    if total == 0:
        return 0.0
    kept = sum(float(m.sum()) for m in mask.values())
    return 1.0 - kept / total
