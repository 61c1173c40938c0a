import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialda import alignment as al
from partialda import oracle


def js_ref(p, q):
    """Direct base-2 definition, written out term by term."""
    m = [(a + b) / 2 for a, b in zip(p, q)]
    kl = lambda x: sum(a * math.log2(a / c) for a, c in zip(x, m) if a > 0)  # noqa: E731
    return 0.5 * kl(p) + 0.5 * kl(q)


def centers_of(rows, classes=None):
    rows = np.asarray(rows, dtype=float)
    classes = tuple(range(len(rows))) if classes is None else classes
    return al.ClassCenters(classes, rows)


class TestJS:
    def test_identical(self):
        assert al.js_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_disjoint_support(self):
        assert al.js_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_half_versus_point_mass(self):
        expected = js_ref([0.5, 0.5], [1.0, 0.0])
        assert expected == pytest.approx(0.31128, abs=1e-5)
        assert al.js_divergence([0.5, 0.5], [1.0, 0.0]) == pytest.approx(expected, abs=1e-14)

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            al.js_divergence([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ValueError):
            al.js_divergence([1.5, -0.5], [0.5, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            al.js_divergence([1.0], [0.5, 0.5])

    def test_broadcasts(self):
        p = np.array([[0.5, 0.5], [1.0, 0.0]])
        q = np.array([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(al.js_divergence(p, q), [js_ref(p[0], q[0]), 0.0], atol=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 10), min_size=2, max_size=6), st.data())
    def test_bounds_and_symmetry(self, a, data):
        b = data.draw(st.lists(st.floats(0.01, 10), min_size=len(a), max_size=len(a)))
        p = np.array(a) / sum(a)
        q = np.array(b) / sum(b)
        d = al.js_divergence(p, q)
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(al.js_divergence(q, p), abs=1e-14)
        assert d == pytest.approx(js_ref(p, q), abs=1e-12)


class TestSimilarity:
    def test_matching_center(self):
        z = np.array([0.3, -1.0, 2.0])
        assert al.similarity(z, centers_of([z]))[0] == pytest.approx(1.0, abs=1e-15)

    def test_half_versus_point_mass(self):
        # softmax of a very negative coordinate is exactly 0 in float64
        z = np.array([0.0, 0.0])
        mu = np.array([0.0, -1e4])
        phi = al.similarity(z, centers_of([mu]))[0]
        assert phi == pytest.approx((2 - js_ref([0.5, 0.5], [1.0, 0.0])) / 2, abs=1e-14)
        assert phi == pytest.approx(0.84436, abs=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    def test_range(self, z, mus):
        phi = al.similarity(np.array(z), centers_of(np.array(mus).reshape(2, 3)))
        assert np.all((phi >= 0.5) & (phi <= 1.0))

    def test_probs_are_softmax_of_similarities(self):
        # similarities (1, 0.5) -> (0.6225, 0.3775)
        p = al.to_distribution(np.array([1.0, 0.5]))
        e = math.exp(0.5)
        assert p[0] == pytest.approx(e / (e + 1), abs=1e-15)
        assert p[0] == pytest.approx(0.6225, abs=1e-4)
        assert p[1] == pytest.approx(0.3775, abs=1e-4)
        z = np.array([0.0, 0.0])
        c = centers_of([[0.0, 0.0], [0.0, -1e4]])
        phi = [1.0, (2 - js_ref([0.5, 0.5], [1.0, 0.0])) / 2]
        ref = [math.exp(v) / sum(math.exp(u) for u in phi) for v in phi]
        np.testing.assert_allclose(al.target_probs(z, c), ref, atol=1e-14)

    def test_matrix_and_vector_agree(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(4, 3))
        c = centers_of(rng.normal(size=(3, 3)))
        rows = np.stack([al.target_probs(r, c) for r in z])
        np.testing.assert_array_equal(al.target_probs(z, c), rows)


class TestPseudoLabel:
    def test_argmax(self):
        assert al.pseudo_label([0.2, 0.5, 0.3]) == 1

    def test_tie_goes_to_lowest_index(self):
        assert al.pseudo_label([0.4, 0.4, 0.2]) == 0

    def test_matrix(self):
        np.testing.assert_array_equal(al.pseudo_label(np.array([[0.1, 0.9], [0.5, 0.5]])), [1, 0])


class TestCenters:
    def test_means(self):
        c = al.class_centers(np.array([[0.0, 0.0], [2.0, 4.0], [1.0, 1.0]]), np.array([0, 0, 1]), (0, 1))
        np.testing.assert_array_equal(c.get(0), [1.0, 2.0])
        np.testing.assert_array_equal(c.get(1), [1.0, 1.0])

    def test_missing_class_omitted(self):
        c = al.class_centers(np.ones((2, 2)), np.array([0, 0]), (0, 1))
        assert c.classes == (0,)
        with pytest.raises(ValueError):
            c.ordered((0, 1))

    def test_update_needs_every_source_class(self):
        with pytest.raises(ValueError, match="no samples"):
            al.update_importance(np.ones((2, 2)), np.array([0, 0]), np.ones((1, 2)), (0, 1))


class TestThreshold:
    def test_is_mean_of_max_prob(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(6, 3))
        y = np.array([0, 1, 2, 0, 1, 2])
        c = al.class_centers(z, y, (0, 1, 2))
        probs = al.target_probs(z, c)
        assert al.confidence_threshold(z, c) == pytest.approx(probs.max(axis=1).mean(), abs=1e-15)
        gt = np.mean([probs[i, y[i]] for i in range(6)])
        assert al.confidence_threshold(z, c, labels=y) == pytest.approx(gt, abs=1e-15)

    def test_zero_mode_selects_everything(self):
        rng = np.random.default_rng(2)
        z_s, z_t = rng.normal(size=(6, 3)), rng.normal(size=(9, 3))
        st_ = al.update_importance(z_s, np.arange(6) % 3, z_t, (0, 1, 2), mode="zero")
        assert st_.threshold == 0.0
        assert len(st_.confident) == 9

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        z_s, z_t = rng.normal(size=(6, 3)), rng.normal(size=(20, 3))
        c = al.class_centers(z_s, np.arange(6) % 3, (0, 1, 2))
        sizes = [len(al.select_confident(z_t, c, t)) for t in np.linspace(0, 1, 11)]
        assert sizes == sorted(sizes, reverse=True)
        assert sizes[0] == 20 and sizes[-1] == 0

    def test_threshold_out_of_range(self):
        c = centers_of([[0.0, 1.0]])
        with pytest.raises(ValueError):
            al.select_confident(np.zeros((1, 2)), c, 1.5)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            al.update_importance(np.ones((1, 2)), np.array([0]), np.ones((1, 2)), (0,), mode="median")


class TestWeights:
    def test_two_member_example(self):
        probs = np.array([[0.6, 0.4], [0.8, 0.2]])
        conf = al.ConfidentTargetSet(np.array([0, 1]), np.array([0, 0]), probs, 0.5)
        w = al.class_weights(conf)
        np.testing.assert_allclose(w, [1.0, 3 / 7], atol=1e-15)

    def test_empty_keeps_previous(self):
        empty = al.ConfidentTargetSet(np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3)), 0.9)
        np.testing.assert_array_equal(al.class_weights(empty), np.ones(3))
        prev = np.array([1.0, 0.5, 0.25])
        np.testing.assert_array_equal(al.class_weights(empty, prev), prev)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_max_is_one_and_entries_positive(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        z_s = rng.normal(size=(3 * k, 4))
        st_ = al.update_importance(z_s, np.arange(3 * k) % k, rng.normal(size=(10, 4)), range(k))
        if len(st_.confident):
            assert st_.weights.max() == 1.0
        assert np.all((st_.weights > 0) & (st_.weights <= 1.0))

    def test_record_fields(self):
        rng = np.random.default_rng(4)
        st_ = al.update_importance(rng.normal(size=(4, 2)), np.array([0, 1, 0, 1]), rng.normal(size=(5, 2)), (0, 1))
        rec = st_.to_record(event=2, step=300)
        assert set(rec) == {"event", "step", "threshold", "n_confident", "W", "vote_mass"}
        assert rec["n_confident"] == len(st_.confident)
        np.testing.assert_allclose(rec["vote_mass"], st_.confident.probs.sum(axis=0))


@pytest.mark.parametrize("mode", al.THRESHOLD_MODES)
def test_matches_list_oracle(mode):
    rng = random.Random(7)
    for _ in range(20):
        src, labels, tgt, classes = oracle.random_instance(rng)
        ref = oracle.pipeline(src, labels, tgt, classes, threshold_mode=mode)
        st_ = al.update_importance(np.array(src), np.array(labels), np.array(tgt), classes, mode=mode)
        assert abs(st_.threshold - ref["threshold"]) <= 1e-12
        assert list(st_.confident.indices) == ref["confident"]
        np.testing.assert_allclose(st_.weights, ref["weights"], atol=1e-12, rtol=0)
