import numpy as np
import pytest

from sketchshot.consensus import consensus_merge, sign_agreement, zeroed_fraction
from sketchshot.tensor import GradientSet


def gset(values, tag="photo"):
    return GradientSet({k: np.asarray(v, dtype=np.float64) for k, v in values.items()}, tag=tag)


def test_mask_example():
    gp = gset({"w": [1.0, -2.0, 0.5]})
    gs = gset({"w": [2.0, 1.0, -0.5]}, tag="sketch")
    mask = sign_agreement(gp, gs)
    assert np.array_equal(mask["w"], [1.0, 0.0, 0.0])


def test_mask_self_is_all_ones():
    g = gset({"w": [1.0, -3.0, 0.0, 2.5]})
    mask = sign_agreement(g, g)
    assert np.array_equal(mask["w"], np.ones(4))


def test_zero_conflicts_with_nonzero():
    gp = gset({"w": [0.0, 1.0]})
    gs = gset({"w": [0.5, 1.0]}, tag="sketch")
    assert np.array_equal(sign_agreement(gp, gs)["w"], [0.0, 1.0])


def test_merge_example():
    gp = gset({"w": [1.0, -2.0, 0.5]})
    gs = gset({"w": [2.0, 1.0, -0.5]}, tag="sketch")
    merged = consensus_merge(gp, gs)
    assert np.array_equal(merged.values["w"], [3.0, 0.0, 0.0])
    assert merged.tag == "merged"


def test_merge_with_self_doubles():
    g = gset({"w": [1.0, -2.0, 0.0]})
    assert np.array_equal(consensus_merge(g, g).values["w"], [2.0, -4.0, 0.0])


def test_total_conflict_zeroes_everything():
    g = gset({"w": [1.0, -2.0, 3.0]})
    neg = gset({"w": [-1.0, 2.0, -3.0]}, tag="sketch")
    assert np.array_equal(consensus_merge(g, neg).values["w"], np.zeros(3))


def test_key_and_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="key mismatch"):
        sign_agreement(gset({"a": [1.0]}), gset({"b": [1.0]}))
    with pytest.raises(ValueError, match="shape mismatch for 'a'"):
        sign_agreement(gset({"a": [1.0, 2.0]}), gset({"a": [1.0]}))


def test_zeroed_fraction():
    gp = gset({"w": [1.0, -2.0, 0.5], "b": [1.0]})
    gs = gset({"w": [2.0, 1.0, -0.5], "b": [2.0]}, tag="sketch")
    assert zeroed_fraction(sign_agreement(gp, gs)) == pytest.approx(0.5)


def test_randomized_properties():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
        a = gset({"w": rng.normal(size=shape), "b": rng.normal(size=3)})
        b = gset({"w": rng.normal(size=shape), "b": rng.normal(size=3)}, tag="sketch")
        m_ab = consensus_merge(a, b)
        m_ba = consensus_merge(b, a)
        for name in a.values:
            ga, gb, gm = a.values[name], b.values[name], m_ab.values[name]
            # symmetry
            assert np.array_equal(gm, m_ba.values[name])
            # every surviving component keeps the shared sign
            nz = gm != 0
            assert np.all(np.sign(gm[nz]) == np.sign(ga[nz]))
            assert np.all(np.sign(gm[nz]) == np.sign(gb[nz]))
            # l1 norm bound
            assert np.abs(gm).sum() <= np.abs(ga).sum() + np.abs(gb).sum() + 1e-12
            # never ascends either domain's loss to first order
            assert float(gm.ravel() @ ga.ravel()) >= 0.0
            assert float(gm.ravel() @ gb.ravel()) >= 0.0
