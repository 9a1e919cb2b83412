"""Transition kernels for finite MDPs.

Three storage layouts share one small interface:

* ``DenseKernel``  -- an ``(S, A, S)`` array, fine up to a few thousand states.
* ``SparseKernel`` -- a CSR matrix with ``S*A`` rows (row ``s*A + a``).
* ``LiftedKernel`` -- rows spread uniformly over the classes of a state
  abstraction, ``T(s'|s,a) = T_abs(phi(s')|phi(s),a) / |class(phi(s'))|``.
  Stored in factored form; expanding it would need ``S * |class|`` entries
  per row, which is infeasible for the 50k-state environments.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

SPARSE_DENSITY_THRESHOLD = 0.05
# below this many states a dense tensor is always used
DENSE_MIN_STATES = 64


class Kernel:
    n_states: int
    n_actions: int

    def expect(self, v: np.ndarray) -> np.ndarray:
        """Return ``E[v(s') | s, a]`` as an ``(S, A)`` array."""
        raise NotImplementedError

    def row(self, s: int, a: int) -> np.ndarray:
        raise NotImplementedError

    def successors(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero next states and their probabilities."""
        r = self.row(s, a)
        idx = np.flatnonzero(r)
        return idx, r[idx]

    def row_sums(self) -> np.ndarray:
        raise NotImplementedError

    def min_entry(self) -> float:
        raise NotImplementedError

    def to_csr(self) -> sp.csr_matrix:
        raise NotImplementedError

    def abstract_mass(self, phi_map: np.ndarray, n_abstract: int) -> sp.csr_matrix:
        """Mass of each row on every abstract state, an ``(S*A, X)`` CSR matrix."""
        n = self.n_states
        agg = sp.csr_matrix((np.ones(n), (np.arange(n), phi_map)), shape=(n, n_abstract))
        return (self.to_csr() @ agg).tocsr()

    def policy_matrix(self, probs: np.ndarray):
        """State-to-state matrix of the chain induced by ``probs`` (S, A)."""
        raise NotImplementedError

    def sample(self, s: int, a: int, rng: np.random.Generator) -> int:
        idx, p = self.successors(s, a)
        k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        return int(idx[min(k, len(idx) - 1)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        if (self.n_states, self.n_actions) != (other.n_states, other.n_actions):
            return False
        return bool(np.all(kernel_l1_rows(self, other) == 0.0))

    __hash__ = None


class DenseKernel(Kernel):
    def __init__(self, array: np.ndarray):
        array = np.array(array, dtype=float)
        if array.ndim != 3 or array.shape[0] != array.shape[2]:
            raise ValueError(f"dense kernel must have shape (S, A, S), got {array.shape}")
        array.flags.writeable = False
        self.array = array
        self.n_states, self.n_actions = array.shape[0], array.shape[1]

    def expect(self, v):
        return self.array @ v

    def row(self, s, a):
        return self.array[s, a]

    def row_sums(self):
        return self.array.sum(axis=2)

    def min_entry(self):
        return float(self.array.min()) if self.array.size else 0.0

    def to_csr(self):
        return sp.csr_matrix(self.array.reshape(-1, self.n_states))

    def policy_matrix(self, probs):
        return np.einsum("sa,sat->st", probs, self.array)


class SparseKernel(Kernel):
    def __init__(self, matrix, n_actions: int):
        matrix = sp.csr_matrix(matrix, dtype=float)
        matrix.sum_duplicates()
        matrix.sort_indices()
        n_rows, n_states = matrix.shape
        if n_rows != n_states * n_actions:
            raise ValueError(
                f"sparse kernel needs S*A = {n_states * n_actions} rows, got {n_rows}"
            )
        self.matrix = matrix
        self.n_states, self.n_actions = n_states, n_actions

    def expect(self, v):
        return (self.matrix @ v).reshape(self.n_states, self.n_actions)

    def row(self, s, a):
        return self.matrix.getrow(s * self.n_actions + a).toarray().ravel()

    def successors(self, s, a):
        i = s * self.n_actions + a
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).reshape(self.n_states, self.n_actions)

    def min_entry(self):
        # implicit zeros count as entries
        if self.matrix.nnz == 0:
            return 0.0
        return float(min(self.matrix.data.min(), 0.0))

    def to_csr(self):
        return self.matrix

    def policy_matrix(self, probs):
        n, A = self.n_states, self.n_actions
        rows = np.repeat(np.arange(n), A)
        mix = sp.csr_matrix((probs.ravel(), (rows, np.arange(n * A))), shape=(n, n * A))
        return (mix @ self.matrix).tocsr()


class LiftedKernel(Kernel):
    """Abstract dynamics spread uniformly over ground classes."""

    def __init__(self, abstract: np.ndarray, phi_map: np.ndarray, n_abstract: int | None = None):
        abstract = np.array(abstract, dtype=float)
        phi_map = np.asarray(phi_map, dtype=np.int64)
        X = abstract.shape[0] if n_abstract is None else n_abstract
        if abstract.shape != (X, abstract.shape[1], X):
            raise ValueError(f"abstract kernel must have shape (X, A, X), got {abstract.shape}")
        sizes = np.bincount(phi_map, minlength=X)
        if np.any(sizes == 0):
            raise ValueError("lifted kernel needs every abstract class to be nonempty")
        abstract.flags.writeable = False
        self.abstract = abstract
        self.phi_map = phi_map
        self.class_sizes = sizes
        self.n_abstract = X
        self.n_states, self.n_actions = len(phi_map), abstract.shape[1]
        order = np.argsort(phi_map, kind="stable")
        self._members = np.split(order, np.cumsum(sizes)[:-1])

    def class_mean(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.phi_map, weights=v, minlength=self.n_abstract) / self.class_sizes

    def expect(self, v):
        w = self.class_mean(v)
        return (self.abstract @ w)[self.phi_map]

    def row(self, s, a):
        x = self.phi_map[s]
        return self.abstract[x, a, self.phi_map] / self.class_sizes[self.phi_map]

    def row_sums(self):
        return self.abstract.sum(axis=2)[self.phi_map]

    def min_entry(self):
        return float(self.abstract.min()) if self.abstract.size else 0.0

    def to_csr(self):
        spread = self.spread_matrix()
        rows = self.abstract[self.phi_map].reshape(-1, self.n_abstract)
        return (sp.csr_matrix(rows) @ spread).tocsr()

    def spread_matrix(self) -> sp.csr_matrix:
        """``(X, S)`` matrix spreading abstract mass uniformly over each class."""
        n = self.n_states
        return sp.csr_matrix(
            (1.0 / self.class_sizes[self.phi_map], (self.phi_map, np.arange(n))),
            shape=(self.n_abstract, n),
        )

    def abstract_mass(self, phi_map, n_abstract):
        phi_map = np.asarray(phi_map)
        rows = self.abstract[self.phi_map].reshape(-1, self.n_abstract)
        if n_abstract == self.n_abstract and np.array_equal(phi_map, self.phi_map):
            return sp.csr_matrix(rows)
        overlap = np.zeros((self.n_abstract, n_abstract))
        np.add.at(overlap, (self.phi_map, phi_map), 1.0)
        overlap /= self.class_sizes[:, None]
        return sp.csr_matrix(rows @ overlap)

    def policy_matrix(self, probs):
        mixed = np.einsum("sa,sax->sx", probs, self.abstract[self.phi_map])
        return mixed[:, self.phi_map] / self.class_sizes[self.phi_map][None, :]

    def sample(self, s, a, rng):
        p = self.abstract[self.phi_map[s], a]
        cdf = np.cumsum(p)
        x = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        x = min(x, self.n_abstract - 1)
        members = self._members[x]
        return int(members[rng.integers(len(members))])

    def successors(self, s, a):
        p = self.abstract[self.phi_map[s], a]
        xs = np.flatnonzero(p)
        idx = np.concatenate([self._members[x] for x in xs])
        return idx, (p / self.class_sizes)[self.phi_map[idx]]


def as_kernel(transition, n_actions: int | None = None) -> Kernel:
    """Wrap raw transition data, choosing sparse storage for large sparse tensors."""
    if isinstance(transition, Kernel):
        return transition
    if sp.issparse(transition):
        if n_actions is None:
            raise ValueError("n_actions is required for a sparse transition matrix")
        return SparseKernel(transition, n_actions)
    array = np.asarray(transition, dtype=float)
    if array.ndim != 3:
        raise ValueError(f"transition tensor must be 3-d (S, A, S), got shape {array.shape}")
    S, A, _ = array.shape
    if S >= DENSE_MIN_STATES and np.count_nonzero(array) < SPARSE_DENSITY_THRESHOLD * array.size:
        return SparseKernel(sp.csr_matrix(array.reshape(S * A, S)), A)
    return DenseKernel(array)


def lifted_row_power_sums(other: sp.csr_matrix, lifted: LiftedKernel, q: float) -> np.ndarray:
    """``sum_{s'} |K(s'|s,a) - L(s'|s,a)|**q`` for every row, ``L`` lifted.

    Uses ``sum_{x'} n_x' c_x'**q`` (all-zero ``K``) plus a correction over the
    nonzeros of ``K``, where ``c_x' = T_abs(x'|phi(s),a) / n_x'``.
    """
    X, n = lifted.n_abstract, lifted.class_sizes
    A = lifted.n_actions
    base_abs = (lifted.abstract ** q) @ (n.astype(float) ** (1.0 - q))  # (X, A)
    base = base_abs[lifted.phi_map].ravel()
    other = other.tocsr()
    row_of = np.repeat(np.arange(other.shape[0]), np.diff(other.indptr))
    cols, vals = other.indices, other.data
    s_of, a_of = row_of // A, row_of % A
    xc = lifted.phi_map[cols]
    c = lifted.abstract[lifted.phi_map[s_of], a_of, xc] / n[xc]
    corr = np.abs(vals - c) ** q - c ** q
    return base + np.bincount(row_of, weights=corr, minlength=other.shape[0])


def kernel_l1_rows(k1: Kernel, k2: Kernel) -> np.ndarray:
    """Per-(s, a) L1 distance between the rows of two kernels, shape (S, A)."""
    if (k1.n_states, k1.n_actions) != (k2.n_states, k2.n_actions):
        raise ValueError("kernels have different shapes")
    S, A = k1.n_states, k1.n_actions
    if isinstance(k1, LiftedKernel) and isinstance(k2, LiftedKernel) and k1.n_abstract == k2.n_abstract \
            and np.array_equal(k1.phi_map, k2.phi_map):
        return np.abs(k1.abstract - k2.abstract).sum(axis=2)[k1.phi_map]
    if isinstance(k2, LiftedKernel) and not isinstance(k1, LiftedKernel):
        k1, k2 = k2, k1
    if isinstance(k1, LiftedKernel) and not isinstance(k2, LiftedKernel):
        return lifted_row_power_sums(k2.to_csr(), k1, 1.0).reshape(S, A)
    if isinstance(k1, DenseKernel) and isinstance(k2, DenseKernel):
        return np.abs(k1.array - k2.array).sum(axis=2)
    diff = (k1.to_csr() - k2.to_csr()).tocsr()
    return np.asarray(abs(diff).sum(axis=1)).reshape(S, A)
