import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmlc.inference import predict, read_predictions, scores_for, write_predictions
from hmlc.oracles import chain_product
from hmlc.taxonomy import Taxonomy, chain, load_taxonomy, random_taxonomy


def test_zero_logit_chain_halves_each_level():
    p = predict(chain(3), np.zeros(3))
    np.testing.assert_array_equal(p.conditional, [0.5, 0.5, 0.5])
    np.testing.assert_array_equal(p.unconditional, [0.5, 0.25, 0.125])


def test_batch_shape():
    t = load_taxonomy("plco")
    p = predict(t, np.zeros((4, t.k)))
    assert p.conditional.shape == p.unconditional.shape == (4, t.k)


def test_large_logits_saturate():
    p = predict(chain(3), np.full(3, 100.0))
    np.testing.assert_allclose(p.unconditional, 1.0)
    assert np.all(p.unconditional <= 1.0)


def test_very_negative_logits_stay_ordered():
    p = predict(chain(5), np.full(5, -300.0))
    u = p.unconditional
    assert np.all(u[1:] <= u[:-1])
    assert u[0] > 0.0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        predict(chain(3), np.zeros(2))
    with pytest.raises(ValueError):
        predict(chain(2), [0.0, np.nan])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parent_dominates_child(seed):
    rng = np.random.default_rng(seed)
    t = random_taxonomy(rng, int(rng.integers(1, 30)), 8)
    y = rng.uniform(-50, 50, size=t.k)
    u = predict(t, y).unconditional
    for m in range(t.k):
        p = t.parent(m)
        if p is not None:
            assert u[p] >= u[m]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_ancestor_product(seed):
    rng = np.random.default_rng(seed)
    t = random_taxonomy(rng, int(rng.integers(1, 20)), 6)
    y = rng.uniform(-8, 8, size=t.k)
    u = predict(t, y).unconditional
    ref = [chain_product([y[j] for j in t.ancestors(m)]) for m in range(t.k)]
    np.testing.assert_allclose(u, ref, rtol=1e-12)


def test_node_relabelling_commutes():
    t = load_taxonomy("synthetic7")
    perm = np.random.default_rng(0).permutation(t.k)
    inv = np.argsort(perm)
    # node i of the new taxonomy is node perm[i] of the old one
    parents = [None if t.parent(int(m)) is None else int(inv[t.parent(int(m))]) for m in perm]
    t2 = Taxonomy([t.name(int(m)) for m in perm], parents)
    y = np.random.default_rng(1).normal(size=t.k)
    a = predict(t, y).unconditional
    b = predict(t2, y[perm]).unconditional
    np.testing.assert_array_equal(a[perm], b)


def test_scores_for():
    t = chain(2)
    y = np.array([0.0, 0.0])
    np.testing.assert_array_equal(scores_for(t, y, chained=True), [0.5, 0.25])
    np.testing.assert_array_equal(scores_for(t, y, chained=False), [0.5, 0.5])


def test_prediction_csv_round_trip():
    t = chain(3)
    probs = predict(t, np.array([[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5]])).unconditional
    ids, names, back = read_predictions(write_predictions(t, ["a", "b"], probs))
    assert ids == ["a", "b"] and names == list(t.names)
    np.testing.assert_allclose(back, probs, rtol=1e-8)
