"""State abstractions: lifting policies and measuring irrelevance."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import (
    DEFAULT_TOL,
    FiniteMdp,
    Policy,
    suboptimality_gap,
    value_iteration,
)


@dataclass(frozen=True, eq=False)
class Abstraction:
    """Surjective map from ``n_ground`` states onto ``n_abstract`` classes."""

    n_ground: int
    n_abstract: int
    map: np.ndarray
    classes: tuple

    @classmethod
    def from_map(cls, phi_map, n_abstract: int | None = None) -> "Abstraction":
        phi_map = np.array(phi_map, dtype=np.int64)
        if phi_map.ndim != 1:
            raise ValueError("abstraction map must be 1-d")
        if n_abstract is None:
            n_abstract = int(phi_map.max()) + 1 if phi_map.size else 0
        if phi_map.size and (phi_map.min() < 0 or phi_map.max() >= n_abstract):
            raise ValueError("abstraction map entries must lie in [0, n_abstract)")
        sizes = np.bincount(phi_map, minlength=n_abstract)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise ValueError(f"abstraction is not surjective: classes {empty[:10].tolist()} are empty")
        order = np.argsort(phi_map, kind="stable")
        classes = tuple(np.split(order, np.cumsum(sizes)[:-1]))
        phi_map.flags.writeable = False
        return cls(n_ground=len(phi_map), n_abstract=n_abstract, map=phi_map, classes=classes)

    @classmethod
    def identity(cls, n: int) -> "Abstraction":
        return cls.from_map(np.arange(n), n)

    @property
    def class_sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.classes])

    def __eq__(self, other):
        if not isinstance(other, Abstraction):
            return NotImplemented
        return self.n_abstract == other.n_abstract and np.array_equal(self.map, other.map)

    __hash__ = None


@dataclass(frozen=True)
class IrrelevanceReport:
    eps_r: float
    eps_t: float
    eps_qstar: float
    eps_vstar: Optional[float]
    witness_r: Optional[tuple] = None
    witness_t: Optional[tuple] = None

    def as_dict(self) -> dict:
        return {
            "eps_r": self.eps_r,
            "eps_t": self.eps_t,
            "eps_qstar": self.eps_qstar,
            "eps_vstar": self.eps_vstar,
            "witness_r": list(self.witness_r) if self.witness_r else None,
            "witness_t": list(self.witness_t) if self.witness_t else None,
        }


def lift_policy(pi_abs: Policy, phi: Abstraction) -> Policy:
    """Ground policy acting as ``pi_abs(phi(s))``."""
    if pi_abs.n_states != phi.n_abstract:
        raise ValueError(f"abstract policy covers {pi_abs.n_states} states, abstraction has {phi.n_abstract}")
    return Policy(pi_abs.kind, pi_abs.table[phi.map])


def abstract_transition_mass(m: FiniteMdp, phi: Abstraction, s: int, a: int) -> np.ndarray:
    idx, p = m.transition.successors(s, a)
    return np.bincount(phi.map[idx], weights=p, minlength=phi.n_abstract)


def _max_pairwise_l1(block: np.ndarray) -> tuple[float, int, int]:
    """Largest row-to-row L1 distance in ``block`` and the attaining pair."""
    best, bi, bj = 0.0, 0, 0
    k = len(block)
    for i in range(k - 1):
        d = np.abs(block[i + 1:] - block[i]).sum(axis=1)
        j = int(np.argmax(d))
        if d[j] > best:
            best, bi, bj = float(d[j]), i, i + 1 + j
    return best, bi, bj


def model_irrelevance_coefficients(m: FiniteMdp, phi: Abstraction):
    """``(eps_r, eps_t, witness_r, witness_t)`` over same-class state pairs.

    Witnesses are ``(s1, s2, a)`` triples attaining the coefficient, or
    ``None`` when it is zero.
    """
    if phi.n_ground != m.n_states:
        raise ValueError("abstraction does not match the MDP's state count")
    A = m.n_actions
    mass = m.transition.abstract_mass(phi.map, phi.n_abstract)
    eps_r = eps_t = 0.0
    wit_r = wit_t = None
    for members in phi.classes:
        if len(members) < 2:
            continue
        r = m.reward[members]
        spans = r.max(axis=0) - r.min(axis=0)
        a = int(np.argmax(spans))
        if spans[a] > eps_r:
            eps_r = float(spans[a])
            wit_r = (int(members[np.argmax(r[:, a])]), int(members[np.argmin(r[:, a])]), a)
        for a in range(A):
            block = mass[members * A + a].toarray()
            uniq, first = np.unique(block, axis=0, return_index=True)
            if len(uniq) < 2:
                continue
            d, i, j = _max_pairwise_l1(uniq)
            if d > eps_t:
                eps_t = d
                wit_t = (int(members[first[i]]), int(members[first[j]]), a)
    return eps_r, min(eps_t, 2.0), wit_r, wit_t


def abstract_q_representative(qstar: np.ndarray, phi: Abstraction) -> tuple[np.ndarray, np.ndarray]:
    """Per-(class, action) midrange of ``qstar`` and the class ranges."""
    X, A = phi.n_abstract, qstar.shape[1]
    hi = np.full((X, A), -np.inf)
    lo = np.full((X, A), np.inf)
    np.maximum.at(hi, phi.map, qstar)
    np.minimum.at(lo, phi.map, qstar)
    return (hi + lo) / 2.0, hi - lo


def qstar_irrelevance_error(m: FiniteMdp, phi: Abstraction, qstar: np.ndarray | None = None,
                            tol: float = DEFAULT_TOL) -> float:
    """Best sup-norm error of any class-constant ``f(phi(s), a)`` fitted to ``Q*``.

    The midrange of each (class, action) block is the exact minimiser, so the
    error is half of the widest within-class ``Q*`` range.
    """
    if qstar is None:
        qstar = value_iteration(m, tol).q
    _, ranges = abstract_q_representative(qstar, phi)
    return float(ranges.max() / 2.0) if ranges.size else 0.0


def vstar_irrelevance_error(m: FiniteMdp, phi: Abstraction, pi_abs: Policy,
                            vstar: np.ndarray | None = None, tol: float = DEFAULT_TOL) -> float:
    if not pi_abs.is_deterministic:
        raise ValueError("V*-irrelevance is measured for a deterministic abstract policy")
    return suboptimality_gap(m, lift_policy(pi_abs, phi), vstar=vstar, tol=tol)


def lemma1_conversion(eps_r: float, eps_t: float, gamma: float, r_max: float) -> tuple[float, float]:
    """Model-irrelevance coefficients to ``(eps_qstar, eps_vstar)`` upper bounds."""
    if min(eps_r, eps_t, r_max) < 0 or not 0 < gamma < 1:
        raise ValueError("need nonnegative inputs and 0 < gamma < 1")
    eq = eps_r / (1 - gamma) + gamma * eps_t * r_max / (2 * (1 - gamma) ** 2)
    return eq, 2 * eq / (1 - gamma)


def greedy_abstract_policy(qstar: np.ndarray, phi: Abstraction) -> Policy:
    """Abstract policy greedy with respect to the midrange representative of ``Q*``."""
    f, _ = abstract_q_representative(qstar, phi)
    return Policy.deterministic(np.argmax(f, axis=1))


def min_vstar_irrelevance_error(m: FiniteMdp, phi: Abstraction, max_policies: int = 16,
                                tol: float = DEFAULT_TOL) -> tuple[float, Policy]:
    """Brute-force infimum of the V*-irrelevance error over all abstract policies.

    Only for tiny problems: refuses when more than ``max_policies`` abstract
    policies exist.
    """
    count = m.n_actions ** phi.n_abstract
    if count > max_policies:
        raise ValueError(f"{count} abstract policies exceed the enumeration limit {max_policies}")
    vstar = value_iteration(m, tol).v
    best = None
    for actions in itertools.product(range(m.n_actions), repeat=phi.n_abstract):
        pi = Policy.deterministic(actions)
        err = vstar_irrelevance_error(m, phi, pi, vstar=vstar, tol=tol)
        if best is None or err < best[0]:
            best = (err, pi)
    return best


def analyze_abstraction(m: FiniteMdp, phi: Abstraction, pi_abs: Policy | None = None,
                        tol: float = DEFAULT_TOL) -> IrrelevanceReport:
    """All irrelevance coefficients of ``phi`` on ``m``.

    Without ``pi_abs`` the V* error is measured for the abstract policy greedy
    on the midrange Q* representative.
    """
    eps_r, eps_t, wit_r, wit_t = model_irrelevance_coefficients(m, phi)
    vt = value_iteration(m, tol)
    eps_q = qstar_irrelevance_error(m, phi, qstar=vt.q)
    if pi_abs is None:
        pi_abs = greedy_abstract_policy(vt.q, phi)
    eps_v = vstar_irrelevance_error(m, phi, pi_abs, vstar=vt.v, tol=tol)
    return IrrelevanceReport(eps_r, eps_t, eps_q, eps_v, wit_r, wit_t)
