import numpy as np
import pytest

from ewsub import baselines as bl
from ewsub import neurokit as nk


def planted(seed, n=400, d=16):
    """Two classes that differ only in the in-phase value of one sample."""
    rng = np.random.default_rng(seed)
    pos = int(rng.integers(0, d))
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2, d))
    x[:, 0, pos] += 1.5 * y
    return x, y, pos


def dead_input_model(d, dead, seed=0):
    m = nk.Model([nk.flatten(), nk.dense(3), nk.softmax()], (2, d), seed=seed, dtype=np.float64)
    W = m.params["1.W"]
    for j in dead:
        W[2 * j:2 * j + 2] = 0  # channels-last flatten: row 2j is I, 2j+1 is Q
    return m


class TestConventional:
    def test_uniform(self):
        assert bl.uniform_indices(8, 4) == [0, 2, 4, 6]
        assert bl.uniform_indices(5, 5) == [0, 1, 2, 3, 4]
        assert bl.uniform_indices(10, 3) == [0, 3, 6]

    def test_random_reproducible(self):
        a = bl.random_indices(64, 32, seed=5)
        assert a == bl.random_indices(64, 32, seed=5)
        assert a == sorted(set(a)) and len(a) == 32
        assert a != bl.random_indices(64, 32, seed=6)

    @pytest.mark.parametrize("k", [0, 9])
    def test_bad_k(self, k):
        with pytest.raises(ValueError):
            bl.uniform_indices(8, k)

    def test_magnitude(self):
        frame = np.array([[3.0, 0.0, 1.0, 0.0], [4.0, 0.5, 0.0, 2.0]])
        assert bl.magnitude_indices(frame, 2) == [0, 3]
        frames = np.stack([frame, frame[:, ::-1]])
        red = bl.magnitude_reduce(frames, 2)
        np.testing.assert_array_equal(red[0], frame[:, [0, 3]])
        np.testing.assert_array_equal(red[1], frame[:, ::-1][:, [0, 3]])

    def test_magnitude_ties_to_lower_index(self):
        assert bl.magnitude_indices(np.ones((2, 5)), 2) == [0, 1]


class TestPca:
    def test_orthonormal_and_sorted(self):
        x = np.random.default_rng(0).normal(size=(300, 24)) @ np.random.default_rng(1).normal(size=(24, 24))
        pca = bl.fit_pca(x)
        v = pca.components
        assert np.abs(v.T @ v - np.eye(24)).max() <= 1e-6
        assert np.all(np.diff(pca.eigenvalues) <= 0) and np.all(pca.eigenvalues >= 0)
        np.testing.assert_allclose(pca.inverse(pca.transform(x)), x, atol=1e-8)

    def test_variance_explained(self):
        x = np.random.default_rng(2).normal(size=(5000, 3)) * [3.0, 1.0, 0.1]
        pca = bl.fit_pca(x)
        np.testing.assert_allclose(pca.eigenvalues, [9, 1, 0.01], rtol=0.1)

    def test_rank_deficient(self):
        pca = bl.fit_pca(np.random.default_rng(3).normal(size=(4, 10)))
        assert not pca.rank_safe
        assert np.all(pca.eigenvalues >= 0)

    def test_pcs_picks_loud_samples(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(500, 2, 8)) * 0.1
        x[:, :, [2, 6]] *= 30
        _, idx = bl.pcs_indices(x, 2)
        assert idx == [2, 6]


class TestFilters:
    def test_fisher_by_hand(self):
        x = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 3.0], [6.0, 3.0]])
        # feature 0: class means 1, 5; mu 3; num 2*4 + 2*4 = 16; den 2*1 + 2*1 = 4
        np.testing.assert_allclose(bl.fisher_scores(x, [0, 0, 1, 1]), [4.0, np.inf])

    def test_fisher_constant_feature(self):
        x = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 5.0]])
        assert bl.fisher_scores(x, [0, 0, 1, 1])[0] == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_fisher_finds_planted(self, seed):
        x, y, pos = planted(seed)
        table = bl.filter_scores(x, y, "fisher")
        assert int(np.argmax(table.sample_scores)) == pos

    def test_laplacian_prefers_structure(self):
        rng = np.random.default_rng(5)
        centers = rng.integers(0, 2, 300)
        x = rng.normal(size=(300, 2, 4))
        x[:, 0, 1] = 4.0 * centers + 0.1 * rng.normal(size=300)
        table = bl.filter_scores(x, method="laplacian")
        assert int(np.argmin(table.scores)) == 1
        assert not table.higher_is_better and table.top_k(1) == [1]

    def test_laplacian_constant_flagged(self):
        x = np.random.default_rng(6).normal(size=(50, 6))
        x[:, 2] = 3.0
        scores, flagged = bl.laplacian_scores(x)
        assert flagged[2] and np.isinf(scores[2]) and flagged.sum() == 1

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            bl.filter_scores(np.zeros((3, 2, 4)), method="chi2")


class TestFqi:
    def test_dead_inputs_exactly_zero(self):
        m = dead_input_model(8, dead=[1, 6])
        x = np.random.default_rng(0).normal(size=(40, 2, 8))
        scores = bl.fqi_scores(m, x)
        assert scores[1] == 0.0 and scores[6] == 0.0
        assert np.all(np.delete(scores, [1, 6]) > 0)

    def test_predict_proba_path_matches(self):
        m = dead_input_model(8, dead=[3], seed=1)

        class Wrapped:
            def predict_proba(self, x):
                return nk.forward(m, x)

        x = np.random.default_rng(1).normal(size=(30, 2, 8))
        a = bl.fqi_scores(Wrapped(), x)
        assert a[3] == 0.0
        np.testing.assert_allclose(a, bl.fqi_scores(m, x), rtol=1e-5, atol=1e-9)

    def test_indices(self):
        m = dead_input_model(6, dead=[0, 1, 2], seed=2)
        x = np.random.default_rng(2).normal(size=(20, 2, 6))
        assert bl.fqi_indices(m, x, 3) == [3, 4, 5]
