import math

import numpy as np
import pytest

from sketchshot import tensor as T
from sketchshot.generator import (GatParams, KEY, QUERY, VALUE, assemble,
                                  class_prototype, gat_attention, gat_update,
                                  generate, generate_rows, init_generator,
                                  refine)
from sketchshot.tensor import ParameterSet


def leaves_from(gat: GatParams):
    return {name: T.constant(arr) for name, arr in gat.as_entries().items()}


def test_prototype_closed_form():
    p = class_prototype([[1.0, 0.0], [0.0, 1.0]])
    assert p == pytest.approx([0.70710678, 0.70710678])


def test_prototype_k1_is_normalized_embedding():
    v = np.array([3.0, 4.0])
    assert class_prototype(v[None]) == pytest.approx([0.6, 0.8])


def test_prototype_identical_vectors():
    v = np.array([2.0, -1.0, 2.0])
    p = class_prototype(np.tile(v, (5, 1)))
    assert p == pytest.approx(v / 3.0)


def test_prototype_zero_mean_rejected():
    with pytest.raises(ValueError, match="zero"):
        class_prototype([[1.0, 0.0], [-1.0, 0.0]])


def test_assemble_shapes_and_order():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(10, 6))
    novel = rng.normal(size=(3, 6))
    novel /= np.linalg.norm(novel, axis=1, keepdims=True)
    wa = assemble(T.constant(base), T.constant(novel), range(10), (20, 21, 22))
    assert wa.rows.data.shape == (13, 6)
    assert np.array_equal(wa.rows.data[:10], base)
    assert np.array_equal(wa.rows.data[10:], novel)
    assert wa.class_ids == tuple(range(10)) + (20, 21, 22)


def test_assemble_zero_novel_is_identity():
    base = np.random.default_rng(1).normal(size=(4, 5))
    wa = assemble(T.constant(base), T.constant(np.zeros((0, 5))), range(4), ())
    assert np.array_equal(wa.rows.data, base)


def test_assemble_dim_mismatch():
    with pytest.raises(ValueError, match="dims disagree"):
        assemble(T.constant(np.zeros((2, 4))), T.constant(np.ones((1, 5))), (0, 1), (2,))


def test_attention_uniform_when_projections_zero():
    rows = T.constant(np.random.default_rng(2).normal(size=(5, 4)))
    zero = T.constant(np.zeros((4, 4)))
    a = gat_attention(rows, zero, zero)
    assert np.abs(a.data - 0.2).max() < 1e-12


def test_attention_orthonormal_closed_form():
    rows = T.constant(np.eye(3))
    eye = T.constant(np.eye(3))
    a = gat_attention(rows, eye, eye)
    diag = math.e / (math.e + 2.0)
    off = 1.0 / (math.e + 2.0)
    expected = np.full((3, 3), off) + (diag - off) * np.eye(3)
    assert np.abs(a.data - expected).max() < 1e-12
    assert diag == pytest.approx(0.5761, abs=1e-4)
    assert off == pytest.approx(0.2119, abs=1e-4)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(3)
    rows = T.constant(rng.normal(size=(7, 5)))
    a = gat_attention(rows, T.constant(rng.normal(size=(5, 5))),
                      T.constant(rng.normal(size=(5, 5))))
    assert np.abs(a.data.sum(axis=1) - 1.0).max() < 1e-9
    assert a.data.min() >= 0.0


def test_update_zero_value_proj_is_identity():
    rng = np.random.default_rng(4)
    rows = T.constant(rng.normal(size=(6, 4)))
    a = gat_attention(rows, T.constant(rng.normal(size=(4, 4))),
                      T.constant(rng.normal(size=(4, 4))))
    out = gat_update(rows, a, T.constant(np.zeros((4, 4))))
    assert np.array_equal(out.data, rows.data)


def test_update_uniform_attention_closed_form():
    rows_np = np.array([[1.0, 2.0], [3.0, -1.0]])
    rows = T.constant(rows_np)
    a = T.constant(np.full((2, 2), 0.5))
    out = gat_update(rows, a, T.constant(np.eye(2)))
    mean = rows_np.mean(axis=0)
    assert np.allclose(out.data, rows_np + mean)


def test_literal_self_message_ignores_neighbours():
    rng = np.random.default_rng(5)
    rows_np = rng.normal(size=(4, 3))
    rows = T.constant(rows_np)
    v = rng.normal(size=(3, 3))
    a = gat_attention(rows, T.constant(rng.normal(size=(3, 3))),
                      T.constant(rng.normal(size=(3, 3))))
    out = gat_update(rows, a, T.constant(v), literal_self_message=True)
    # attention mass sums to one, so the message collapses to each row's own transform
    assert np.allclose(out.data, rows_np + rows_np @ v.T)
    # perturbing another row's attention share changes nothing
    swapped = np.roll(a.data, 1, axis=1)
    out2 = gat_update(rows, T.constant(swapped), T.constant(v), literal_self_message=True)
    assert np.allclose(out2.data, out.data)


def _random_case(seed, k_base=5, k_novel=3, d=6, k_shot=4):
    rng = np.random.default_rng(seed)
    gat = init_generator(d, rng)
    base = rng.normal(size=(k_base, d))
    support = [rng.normal(size=(k_shot, d)) for _ in range(k_novel)]
    return gat, base, support, rng


def test_generate_no_gat_mode_is_naive_concatenation():
    gat, base, support, _ = _random_case(6)
    out = generate_rows(gat, base, support, use_gat=False)
    assert np.array_equal(out[:5], base)
    for i, embs in enumerate(support):
        assert np.allclose(out[5 + i], class_prototype(embs))


def test_generate_variable_novel_count_with_fixed_params():
    gat, base, _, rng = _random_case(7)
    for k_novel in (1, 3, 7):
        support = [rng.normal(size=(4, 6)) for _ in range(k_novel)]
        out = generate_rows(gat, base, support)
        assert out.shape == (5 + k_novel, 6)


def test_permutation_equivariance():
    gat, base, support, rng = _random_case(8)
    protos = [class_prototype(s) for s in support]
    rows = np.concatenate([base, np.stack(protos)], axis=0)
    refined = refine(T.constant(rows), *leaves_from(gat).values(), rounds=2).data
    for trial in range(5):
        perm = rng.permutation(rows.shape[0])
        refined_p = refine(T.constant(rows[perm]), *leaves_from(gat).values(), rounds=2).data
        assert np.abs(refined_p - refined[perm]).max() <= 1e-9


def test_generate_gradient_wrt_value_proj():
    rng = np.random.default_rng(9)
    d = 4
    base = rng.normal(size=(3, d))
    support = [rng.normal(size=(2, d)) for _ in range(2)]
    target = np.eye(5)[[0, 3]]
    queries = rng.normal(size=(2, d))
    params = ParameterSet(init_generator(d, rng).as_entries())

    def loss(leaf_map):
        out, _ = generate(leaf_map, T.constant(base), support, rounds=2)
        logits = T.matmul(T.constant(queries), T.transpose(out))
        return T.softmax_cross_entropy(logits, target)

    assert T.finite_difference(loss, params, eps=1e-6) < 1e-4


def test_rounds_recompute_attention():
    gat, base, support, _ = _random_case(10)
    one = generate_rows(GatParams(gat.query_proj, gat.key_proj, gat.value_proj, rounds=1),
                        base, support)
    two = generate_rows(GatParams(gat.query_proj, gat.key_proj, gat.value_proj, rounds=2),
                        base, support)
    assert not np.allclose(one, two)
