"""PCA optimality and k-means behaviour."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssdistill.errors import ContractError, ShapeError
from ssdistill.spectral import fit_pca, jacobi_svd, kmeans, project, reconstruct


def recon_error(x, frame):
    """Squared error of projecting centred ``x`` onto the row space of ``frame``."""
    xc = x - x.mean(0)
    return float(np.sum((xc - xc @ frame.T @ frame) ** 2))


def random_frame(d, k, rng):
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return q.T


class TestPCA:
    def test_beats_random_frames(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n, d = rng.integers(7, 15), rng.integers(2, 7)
            k = int(rng.integers(1, d + 1))
            x = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
            best = recon_error(x, fit_pca(x, k).components)
            for _ in range(100):
                assert best <= recon_error(x, random_frame(d, k, rng)) + 1e-9

    def test_matches_covariance_eigendecomposition(self):
        rng = np.random.default_rng(1)
        for d in range(1, 7):
            x = rng.standard_normal((20, d)) * np.arange(1, d + 1)
            k = d
            model = fit_pca(x, k)
            cov = np.cov(x, rowvar=False).reshape(d, d)
            evals, evecs = np.linalg.eigh(cov)
            evals, evecs = evals[::-1], evecs[:, ::-1]
            np.testing.assert_allclose(model.explained_variance, evals, atol=1e-8)
            # directions agree up to sign
            overlap = np.abs(np.sum(model.components * evecs.T, axis=1))
            np.testing.assert_allclose(overlap, 1.0, atol=1e-8)

    def test_components_orthonormal_and_signed(self):
        rng = np.random.default_rng(2)
        model = fit_pca(rng.standard_normal((30, 8)), 5)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(5), atol=1e-12)
        rows = np.arange(5)
        lead = model.components[rows, np.argmax(np.abs(model.components), axis=1)]
        assert np.all(lead > 0)

    def test_explained_variance_descending(self):
        rng = np.random.default_rng(3)
        var = fit_pca(rng.standard_normal((40, 6)), 6).explained_variance
        assert np.all(np.diff(var) <= 1e-12)

    def test_full_rank_round_trip(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((12, 5))
        model = fit_pca(x, 5)
        np.testing.assert_allclose(reconstruct(project(x, model), model), x, atol=1e-10)

    def test_rank_deficient_completes_and_flags(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 5))
        model = fit_pca(x, 4)
        assert model.degenerate
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(model.explained_variance[2:], 0.0)

    def test_constant_data(self):
        model = fit_pca(np.ones((6, 3)), 2)
        assert model.degenerate
        np.testing.assert_allclose(model.mean, 1.0)

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            fit_pca(np.zeros((3, 4)), 5)
        with pytest.raises(ShapeError):
            fit_pca(np.zeros(3), 1)
        with pytest.raises(ShapeError):
            project(np.zeros((2, 3)), fit_pca(np.eye(4), 2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_jacobi_svd_reconstructs(self, n, d, seed):
        a = np.random.default_rng(seed).standard_normal((n, d))
        s, vt = jacobi_svd(a)
        # a^T a = V diag(s^2) V^T
        np.testing.assert_allclose(vt.T @ np.diag(s**2) @ vt, a.T @ a, atol=1e-9)
        np.testing.assert_allclose(s, np.linalg.svd(a, compute_uv=False).tolist() + [0.0] * (len(s) - min(n, d)), atol=1e-9)


class TestKMeans:
    def test_separated_clusters(self):
        rng = np.random.default_rng(0)
        centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        x = np.concatenate([c + 0.1 * rng.standard_normal((20, 2)) for c in centres])
        res = kmeans(x, 3, seed=0)
        for c in centres:
            assert np.min(np.linalg.norm(res.centroids - c, axis=1)) < 0.2
        # each true cluster maps to one label
        labels = res.assignment.reshape(3, 20)
        assert all(len(set(row)) == 1 for row in labels)
        assert len({row[0] for row in labels}) == 3

    def test_k_equals_n_is_identity(self):
        x = np.random.default_rng(1).standard_normal((7, 3))
        res = kmeans(x, 7, seed=0)
        assert res.inertia == pytest.approx(0.0, abs=1e-12)
        assert sorted(res.medoid_indices) == list(range(7))

    def test_inertia_non_increasing(self):
        x = np.random.default_rng(2).standard_normal((200, 4))
        trace = kmeans(x, 6, seed=3).inertia_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_medoids_distinct_and_in_cluster(self):
        x = np.random.default_rng(3).standard_normal((100, 5))
        res = kmeans(x, 10, seed=0)
        assert len(set(res.medoid_indices.tolist())) == 10
        assert np.array_equal(res.assignment[res.medoid_indices], np.arange(10))

    def test_deterministic(self):
        x = np.random.default_rng(4).standard_normal((80, 3))
        a, b = kmeans(x, 5, seed=7), kmeans(x, 5, seed=7)
        assert np.array_equal(a.centroids, b.centroids)

    def test_duplicate_points_leave_no_empty_cluster(self):
        x = np.concatenate([np.zeros((10, 2)), np.ones((2, 2))])
        res = kmeans(x, 3, seed=0)
        assert set(res.assignment.tolist()) == {0, 1, 2}

    def test_bad_k(self):
        with pytest.raises(ContractError):
            kmeans(np.zeros((3, 2)), 4)
