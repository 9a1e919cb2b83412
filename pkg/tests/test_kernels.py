import numpy as np
import pytest
import scipy.sparse as sp

from envshape.kernels import (
    DenseKernel,
    LiftedKernel,
    SparseKernel,
    as_kernel,
    kernel_l1_rows,
    lifted_row_power_sums,
)


def random_tensor(rng, S, A, density=1.0):
    t = rng.random((S, A, S)) * (rng.random((S, A, S)) < density)
    t[:, :, 0] += 1e-3
    return t / t.sum(axis=2, keepdims=True)


def lifted_dense(abstract, phi_map):
    sizes = np.bincount(phi_map, minlength=abstract.shape[0])
    return abstract[phi_map][:, :, phi_map] / sizes[phi_map]


@pytest.fixture
def lifted_setup(rng):
    X, A = 3, 2
    phi_map = np.array([0, 1, 2, 0, 1, 0, 2])
    abstract = random_tensor(rng, X, A)
    return abstract, phi_map, LiftedKernel(abstract, phi_map)


class TestLayoutsAgree:
    def test_dense_vs_sparse(self, rng):
        t = random_tensor(rng, 6, 3, density=0.3)
        d = DenseKernel(t)
        s = SparseKernel(sp.csr_matrix(t.reshape(18, 6)), 3)
        v = rng.normal(size=6)
        np.testing.assert_allclose(d.expect(v), s.expect(v))
        np.testing.assert_allclose(d.row(2, 1), s.row(2, 1))
        np.testing.assert_allclose(s.row_sums(), 1.0)
        assert d == s

    def test_lifted_matches_expansion(self, lifted_setup, rng):
        abstract, phi_map, k = lifted_setup
        full = lifted_dense(abstract, phi_map)
        v = rng.normal(size=len(phi_map))
        np.testing.assert_allclose(k.expect(v), np.einsum("sax,x->sa", full, v))
        np.testing.assert_allclose(k.to_csr().toarray(), full.reshape(-1, len(phi_map)))
        np.testing.assert_allclose(k.row_sums(), 1.0)
        idx, p = k.successors(4, 1)
        row = np.zeros(len(phi_map))
        row[idx] = p
        np.testing.assert_allclose(row, full[4, 1])

    def test_lifted_policy_matrix(self, lifted_setup, rng):
        abstract, phi_map, k = lifted_setup
        probs = rng.random((len(phi_map), 2))
        probs /= probs.sum(axis=1, keepdims=True)
        expected = np.einsum("sa,sat->st", probs, lifted_dense(abstract, phi_map))
        np.testing.assert_allclose(np.asarray(k.policy_matrix(probs)), expected)

    def test_lifted_sampling_frequencies(self, lifted_setup):
        abstract, phi_map, k = lifted_setup
        rng = np.random.default_rng(0)
        n = 40_000
        counts = np.bincount([k.sample(0, 0, rng) for _ in range(n)], minlength=len(phi_map))
        expected = lifted_dense(abstract, phi_map)[0, 0]
        assert np.max(np.abs(counts / n - expected)) < 0.015

    def test_empty_class_rejected(self, rng):
        with pytest.raises(ValueError):
            LiftedKernel(random_tensor(rng, 3, 2), np.array([0, 0, 1]))


class TestAsKernel:
    def test_small_stays_dense(self, rng):
        assert isinstance(as_kernel(random_tensor(rng, 4, 2)), DenseKernel)

    def test_large_sparse_becomes_csr(self):
        t = np.zeros((100, 2, 100))
        t[np.arange(100), :, (np.arange(100) + 1) % 100] = 1.0
        assert isinstance(as_kernel(t), SparseKernel)

    def test_sparse_needs_actions(self):
        with pytest.raises(ValueError):
            as_kernel(sp.eye(4, format="csr"))


class TestRowDistances:
    @pytest.mark.parametrize("q", [1.0, 2.0, 1.5])
    def test_power_sums_match_dense(self, lifted_setup, rng, q):
        abstract, phi_map, k = lifted_setup
        S = len(phi_map)
        other = random_tensor(rng, S, 2, density=0.4)
        fast = lifted_row_power_sums(sp.csr_matrix(other.reshape(-1, S)), k, q)
        slow = (np.abs(other - lifted_dense(abstract, phi_map)) ** q).sum(axis=2).ravel()
        np.testing.assert_allclose(fast, slow, atol=1e-12)

    def test_l1_rows_every_combination(self, lifted_setup, rng):
        abstract, phi_map, k = lifted_setup
        S = len(phi_map)
        other = random_tensor(rng, S, 2)
        expected = np.abs(other - lifted_dense(abstract, phi_map)).sum(axis=2)
        np.testing.assert_allclose(kernel_l1_rows(k, DenseKernel(other)), expected, atol=1e-12)
        np.testing.assert_allclose(kernel_l1_rows(DenseKernel(other), k), expected, atol=1e-12)
        sparse = SparseKernel(sp.csr_matrix(other.reshape(-1, S)), 2)
        np.testing.assert_allclose(kernel_l1_rows(sparse, k), expected, atol=1e-12)
        k2 = LiftedKernel(random_tensor(rng, 3, 2), phi_map)
        exp2 = np.abs(lifted_dense(k2.abstract, phi_map) - lifted_dense(abstract, phi_map)).sum(axis=2)
        np.testing.assert_allclose(kernel_l1_rows(k, k2), exp2, atol=1e-12)
