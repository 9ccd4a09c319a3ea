import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchshot.classifier import (ClassifierWeights, cross_entropy,
                                   normalize_rows, predict, predict_batch)


def test_normalize_345():
    assert np.allclose(normalize_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]])


def test_normalize_idempotent():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(5, 4))
    once = normalize_rows(w)
    assert np.abs(normalize_rows(once) - once).max() < 1e-12


def test_normalize_scale_invariant():
    w = np.array([[1.0, 2.0, -3.0]])
    assert np.allclose(normalize_rows(w), normalize_rows(7.0 * w))


def test_normalize_zero_row_names_class():
    w = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="class 42"):
        normalize_rows(w, class_ids=(7, 42))


def test_predict_closed_form():
    cw = ClassifierWeights(np.eye(2), class_ids=(0, 1), scale=10.0)
    probs = predict(cw, np.array([1.0, 0.0]))
    # softmax of (10, 0)
    expected = np.array([1.0, math.exp(-10.0)])
    expected /= expected.sum()
    assert probs == pytest.approx(expected, abs=1e-9)
    assert probs[0] == pytest.approx(0.9999546, abs=1e-7)
    assert probs[1] == pytest.approx(4.54e-5, rel=1e-2)


def test_predict_embedding_scale_invariance_exact():
    rng = np.random.default_rng(2)
    cw = ClassifierWeights(rng.normal(size=(4, 6)), class_ids=tuple(range(4)))
    f = rng.normal(size=6)
    p1 = predict(cw, f)
    p2 = predict(cw, 2.0 * f)
    assert np.array_equal(np.argmax(p1), np.argmax(p2))
    assert np.abs(p1 - p2).max() < 1e-12


def test_predict_row_scale_invariance():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 5))
    f = rng.normal(size=5)
    p1 = predict(ClassifierWeights(w, class_ids=(0, 1, 2)), f)
    w2 = w.copy()
    w2[1] *= 9.0
    p2 = predict(ClassifierWeights(w2, class_ids=(0, 1, 2)), f)
    assert np.abs(p1 - p2).max() < 1e-12


def test_predict_uniform_under_symmetry():
    cw = ClassifierWeights(np.eye(3), class_ids=(0, 1, 2))
    probs = predict(cw, np.ones(3))
    assert np.abs(probs - 1.0 / 3.0).max() < 1e-12


def test_predict_rejects_zero_embedding():
    cw = ClassifierWeights(np.eye(2), class_ids=(0, 1))
    with pytest.raises(ValueError, match="zero embedding"):
        predict(cw, np.zeros(2))


def test_predict_batch_matches_single():
    rng = np.random.default_rng(4)
    cw = ClassifierWeights(rng.normal(size=(5, 8)), class_ids=tuple(range(5)))
    fs = rng.normal(size=(6, 8))
    batch = predict_batch(cw, fs)
    for i in range(6):
        assert np.abs(batch[i] - predict(cw, fs[i])).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 50.0))
def test_predict_properties_randomized(seed, alpha):
    rng = np.random.default_rng(seed)
    c, d = int(rng.integers(2, 6)), int(rng.integers(2, 8))
    cw = ClassifierWeights(rng.normal(size=(c, d)) + 1e-3, class_ids=tuple(range(c)))
    f = rng.normal(size=d)
    if np.linalg.norm(f) <= 1e-12:
        return
    p = predict(cw, f)
    assert p.min() >= 0.0
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.abs(predict(cw, alpha * f) - p).max() < 1e-12


def test_monotone_in_cosine_similarity():
    # rotating the embedding towards class-0's row raises p0 strictly
    cw = ClassifierWeights(np.eye(2), class_ids=(0, 1))
    angles = np.linspace(0.2, 1.2, 6)[::-1]  # decreasing angle to row 0
    probs = [predict(cw, np.array([np.cos(a), np.sin(a)]))[0] for a in angles]
    assert all(b > a for a, b in zip(probs, probs[1:]))


def test_cross_entropy_matching_onehot_near_zero():
    assert cross_entropy([1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_uniform_vs_onehot():
    pred = np.full(5, 0.2)
    target = np.eye(5)[2]
    assert cross_entropy(pred, target) == pytest.approx(math.log(5.0), abs=1e-12)


def test_cross_entropy_self_entropy():
    assert cross_entropy([0.5, 0.5], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)


def test_cross_entropy_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        cross_entropy([0.5, 0.5], [1.0, 0.0, 0.0])
