import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selflearn.errors import ConfigError
from selflearn.propagation import (PSEUDO, SEED, DataPools, ScoredPredictions, knn_predict, promote,
                                   select_top, softmax_predict)

from .helpers import brute_force_nn


def make_pools(n_lab=4, n_unl=200, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return DataPools(
        labeled_x=rng.normal(size=(n_lab, d)), labeled_y=np.arange(n_lab) % 2,
        labeled_origin=np.full(n_lab, SEED, dtype=np.int8), labeled_ids=np.arange(n_lab),
        unlabeled_x=rng.normal(size=(n_unl, d)), unlabeled_ids=np.arange(n_lab, n_lab + n_unl),
        test_x=np.zeros((1, d)), test_y=np.zeros(1, dtype=int))


def preds(conf, labels=None):
    conf = np.asarray(conf, dtype=float)
    labels = np.zeros(len(conf), dtype=int) if labels is None else np.asarray(labels)
    return ScoredPredictions(np.arange(len(conf)), labels, conf)


class TestKnn:
    def test_single_reference(self):
        out = knn_predict([[1.0, 1.0]], [3], np.random.default_rng(0).normal(size=(5, 2)))
        assert (out.label == 3).all()

    def test_coincident_query(self):
        out = knn_predict([[0.0, 0.0], [1.0, 2.0]], [0, 1], [[1.0, 2.0]])
        assert out.label[0] == 1 and out.confidence[0] == 0.0

    def test_matches_scan(self):
        rng = np.random.default_rng(3)
        ref, y, q = rng.normal(size=(20, 2)), rng.integers(0, 4, 20), rng.normal(size=(5, 2))
        out = knn_predict(ref, y, q)
        labels, dist = brute_force_nn(ref, y, q)
        np.testing.assert_array_equal(out.label, labels)
        np.testing.assert_allclose(-out.confidence, dist, rtol=1e-12)

    def test_majority_vote(self):
        ref = [[0.0], [1.0], [1.1], [5.0]]
        out = knn_predict(ref, [0, 1, 1, 0], [[0.9]], k=3)
        assert out.label[0] == 1
        assert out.confidence[0] == pytest.approx(-(0.9 + 0.1 + 0.2) / 3)

    def test_vote_tie_goes_to_closer_class(self):
        out = knn_predict([[0.0], [2.5]], [1, 0], [[1.0]], k=2)
        assert out.label[0] == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            knn_predict(np.zeros((0, 2)), [], [[0.0, 0.0]])
        with pytest.raises(ConfigError):
            knn_predict([[0.0]], [0], [[1.0]], k=2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 2 * math.pi))
    def test_isometry_invariance(self, seed, angle):
        rng = np.random.default_rng(seed)
        ref, y, q = rng.normal(size=(15, 2)), rng.integers(0, 3, 15), rng.normal(size=(6, 2))
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        shift = rng.normal(size=2) * 5
        base = knn_predict(ref, y, q)
        moved = knn_predict(ref @ rot.T + shift, y, q @ rot.T + shift)
        gap = np.sort(np.linalg.norm(q[:, None] - ref[None], axis=2), axis=1)
        clear = gap[:, 1] - gap[:, 0] > 1e-9
        np.testing.assert_array_equal(base.label[clear], moved.label[clear])
        np.testing.assert_allclose(base.confidence, moved.confidence, atol=1e-9)


class TestSoftmax:
    def test_confident(self):
        out = softmax_predict([[10.0, 0.0, 0.0]])
        assert out.label[0] == 0
        assert out.confidence[0] == pytest.approx(math.exp(10) / (math.exp(10) + 2), rel=1e-12)
        assert round(out.confidence[0], 5) == 0.99991

    def test_uniform(self):
        out = softmax_predict(np.zeros((1, 4)))
        assert out.label[0] == 0 and out.confidence[0] == pytest.approx(0.25)

    def test_random_matches_reference(self):
        z = np.random.default_rng(0).normal(size=(3, 5))
        out = softmax_predict(z)
        for i in range(3):
            e = [math.exp(v) for v in z[i]]
            assert out.confidence[i] == pytest.approx(max(e) / sum(e), rel=1e-12)
            assert out.label[i] == int(np.argmax(z[i]))


class TestSelectTop:
    def test_count(self):
        assert len(select_top(preds(np.random.default_rng(0).random(200)), 0.05)) == 10

    def test_all(self):
        assert len(select_top(preds(np.random.default_rng(0).random(17)), 1.0)) == 17

    def test_tie_break(self):
        np.testing.assert_array_equal(select_top(preds([0.9, 0.9, 0.1]), 0.34).index, [0, 1])

    def test_float_noise_does_not_add_one(self):
        assert len(select_top(preds(np.zeros(100)), 0.07)) == 7

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, p):
        with pytest.raises(ConfigError):
            select_top(preds([0.5]), p)

    def test_empty(self):
        with pytest.raises(ValueError):
            select_top(preds([]), 0.5)

    def test_class_balanced(self):
        out = select_top(preds([0.9, 0.8, 0.7, 0.1], labels=[0, 0, 0, 1]), 0.5, class_balanced=True)
        assert sorted(out.index.tolist()) == [0, 3]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=60), st.floats(0.01, 1.0))
    def test_monotone(self, conf, p):
        chosen = select_top(preds(conf), p)
        rest = np.setdiff1d(np.arange(len(conf)), chosen.index)
        assert len(chosen) == math.ceil(round(p * len(conf), 9))
        if len(rest):
            assert chosen.confidence.min() >= max(conf[i] for i in rest)
            # among ties at the cut, lower indices win
            cut = chosen.confidence.min()
            tied_out = [i for i in rest if conf[i] == cut]
            tied_in = [i for i in chosen.index if conf[i] == cut]
            if tied_out:
                assert max(tied_in) < min(tied_out)


class TestPromote:
    def test_counts_and_conservation(self):
        pools = make_pools()
        sel = select_top(ScoredPredictions(np.arange(200), np.ones(200, dtype=int),
                                           np.random.default_rng(1).random(200)), 0.05)
        out = promote(pools, sel)
        assert out.n_labeled == pools.n_labeled + 10 and out.n_unlabeled == 190
        assert set(out.labeled_ids).isdisjoint(out.unlabeled_ids)
        assert (out.labeled_origin[-10:] == PSEUDO).all()
        np.testing.assert_array_equal(out.labeled_x[-10:], pools.unlabeled_x[sel.index])
        np.testing.assert_array_equal(out.labeled_x[:4], pools.labeled_x)
        np.testing.assert_array_equal(out.labeled_y[:4], pools.labeled_y)

    def test_empty_selection(self):
        pools = make_pools()
        assert promote(pools, preds([]).subset([])) is pools

    def test_duplicates(self):
        with pytest.raises(ValueError):
            promote(make_pools(), ScoredPredictions(np.array([1, 1]), np.array([0, 0]), np.zeros(2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_seed_labels_survive_repeated_promotion(self, seed):
        rng = np.random.default_rng(seed)
        pools = make_pools(n_unl=30, seed=seed)
        original = pools.labeled_y.copy()
        total = pools.n_labeled + pools.n_unlabeled
        while pools.n_unlabeled:
            n = pools.n_unlabeled
            p = ScoredPredictions(np.arange(n), rng.integers(0, 2, n), rng.random(n))
            pools = promote(pools, select_top(p, 0.3))
            assert pools.n_labeled + pools.n_unlabeled == total
            np.testing.assert_array_equal(pools.labeled_y[pools.seed_mask()], original)
