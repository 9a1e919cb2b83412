"""Finite discounted MDPs: representation, planning and distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import Kernel, as_kernel, kernel_l1_rows

DEFAULT_TOL = 1e-8
DIRECT_SOLVE_MAX_STATES = 5000
SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """A tabular MDP.

    ``transition`` may be an ``(S, A, S)`` array, a CSR matrix with ``S*A``
    rows, or a :class:`~envshape.kernels.Kernel`.  Rewards may be negative
    (teaching produces such MDPs); ``r_max`` is the declared magnitude bound
    that the bound formulas consume.
    """

    transition: Kernel
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    r_max: float

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        if reward.ndim != 2:
            raise ValueError(f"reward must be a 2-d (S, A) table, got shape {reward.shape}")
        kernel = as_kernel(self.transition, reward.shape[1])
        mu = np.array(self.initial_dist, dtype=float)
        reward.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "transition", kernel)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        if reward.shape != (kernel.n_states, kernel.n_actions):
            raise ValueError(
                f"reward shape {reward.shape} does not match transition "
                f"({kernel.n_states}, {kernel.n_actions})"
            )
        if mu.shape != (kernel.n_states,):
            raise ValueError(f"initial_dist must have length {kernel.n_states}")

    @property
    def n_states(self) -> int:
        return self.transition.n_states

    @property
    def n_actions(self) -> int:
        return self.transition.n_actions

    @property
    def reward_magnitude(self) -> float:
        return float(np.abs(self.reward).max()) if self.reward.size else 0.0

    def replace(self, **changes) -> "FiniteMdp":
        fields = dict(
            transition=self.transition,
            reward=self.reward,
            initial_dist=self.initial_dist,
            gamma=self.gamma,
            r_max=self.r_max,
        )
        fields.update(changes)
        return FiniteMdp(**fields)

    def q_from_v(self, v: np.ndarray) -> np.ndarray:
        return self.reward + self.gamma * self.transition.expect(v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteMdp):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.r_max == other.r_max
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.initial_dist, other.initial_dist)
            and self.transition == other.transition
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic (``table`` of action indices) or stochastic (rows of probabilities)."""

    kind: str
    table: np.ndarray

    def __post_init__(self):
        if self.kind == "deterministic":
            table = np.array(self.table, dtype=np.int64)
            if table.ndim != 1:
                raise ValueError("deterministic policy table must be 1-d")
        elif self.kind == "stochastic":
            table = np.array(self.table, dtype=float)
            if table.ndim != 2:
                raise ValueError("stochastic policy table must be 2-d")
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > SUM_TOL):
                raise ValueError("stochastic policy rows must be distributions")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    @classmethod
    def deterministic(cls, actions) -> "Policy":
        return cls("deterministic", actions)

    @classmethod
    def stochastic(cls, probs) -> "Policy":
        return cls("stochastic", probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls("stochastic", np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return len(self.table)

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "deterministic"

    def probs(self, n_actions: int) -> np.ndarray:
        """Action distribution per state; deterministic rules become one-hot rows."""
        if self.kind == "stochastic":
            if self.table.shape[1] != n_actions:
                raise ValueError(f"policy has {self.table.shape[1]} actions, expected {n_actions}")
            return self.table
        if np.any(self.table < 0) or np.any(self.table >= n_actions):
            raise ValueError("deterministic policy action out of range")
        out = np.zeros((len(self.table), n_actions))
        out[np.arange(len(self.table)), self.table] = 1.0
        return out

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.table, other.table)

    __hash__ = None


@dataclass(frozen=True)
class ValueTable:
    v: np.ndarray
    q: Optional[np.ndarray]
    gamma: float
    residual: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class EquivalenceGap:
    beta_r: float
    beta_t: float


def validate_mdp(m: FiniteMdp, check_reward_bounds: bool = False) -> list[str]:
    """List every violated invariant of ``m``; empty when valid."""
    problems = []
    k = m.transition
    if k.min_entry() < 0:
        problems.append("transition has negative entries")
    sums = k.row_sums()
    bad = np.argwhere(np.abs(sums - 1.0) > SUM_TOL)
    for s, a in bad[:20]:
        deficit = 1.0 - sums[s, a]
        problems.append(f"transition row (s={s}, a={a}) sums to {sums[s, a]:.12g} (deficit {deficit:.12g})")
    if len(bad) > 20:
        problems.append(f"... {len(bad) - 20} more transition rows do not sum to 1")
    mu = m.initial_dist
    if np.any(mu < 0):
        problems.append("initial_dist has negative entries")
    if abs(mu.sum() - 1.0) > SUM_TOL:
        problems.append(f"initial_dist sums to {mu.sum():.12g}")
    if not 0.0 < m.gamma < 1.0:
        problems.append(f"discount out of range: gamma = {m.gamma}")
    if m.r_max < 0:
        problems.append(f"r_max is negative: {m.r_max}")
    if not np.all(np.isfinite(m.reward)):
        problems.append("reward has non-finite entries")
    if check_reward_bounds and (m.reward.min() < 0 or m.reward.max() > m.r_max):
        problems.append(f"rewards leave [0, r_max={m.r_max}]")
    return problems


def value_iteration(m: FiniteMdp, tol: float = DEFAULT_TOL, max_iter: int = 10_000_000) -> ValueTable:
    """Optimal values by successive approximation.

    Stops once the sup-norm change drops to ``tol * (1 - gamma) / gamma``,
    which bounds the final Bellman residual by ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < m.gamma < 1.0:
        raise ValueError(f"value iteration needs 0 < gamma < 1, got {m.gamma}")
    g = m.gamma
    stop = tol * (1.0 - g) / g
    v = np.zeros(m.n_states)
    it = 0
    while True:
        it += 1
        v_new = m.q_from_v(v).max(axis=1)
        delta = np.max(np.abs(v_new - v)) if v.size else 0.0
        v = v_new
        if delta <= stop or it >= max_iter:
            break
    q = m.q_from_v(v)
    residual = float(np.max(np.abs(v - q.max(axis=1)))) if v.size else 0.0
    return ValueTable(v=v, q=q, gamma=g, residual=residual, iterations=it)


def evaluate_probs(m: FiniteMdp, probs: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``V^pi`` for an ``(S, A)`` matrix of action probabilities."""
    n, g = m.n_states, m.gamma
    r_pi = (probs * m.reward).sum(axis=1)
    if n <= DIRECT_SOLVE_MAX_STATES:
        p_pi = m.transition.policy_matrix(probs)
        if sp.issparse(p_pi):
            return spla.spsolve((sp.identity(n, format="csc") - g * p_pi).tocsc(), r_pi)
        return np.linalg.solve(np.eye(n) - g * p_pi, r_pi)
    stop = tol * (1.0 - g) / g
    v = np.zeros(n)
    while True:
        v_new = r_pi + g * (probs * m.transition.expect(v)).sum(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta <= stop:
            return v


def policy_evaluation(m: FiniteMdp, pi: Policy, tol: float = DEFAULT_TOL) -> ValueTable:
    """Exact ``V^pi`` and ``Q^pi``; direct solve up to 5000 states, iteration above."""
    if pi.n_states != m.n_states:
        raise ValueError(f"policy covers {pi.n_states} states, MDP has {m.n_states}")
    v = evaluate_probs(m, pi.probs(m.n_actions), tol)
    return ValueTable(v=v, q=m.q_from_v(v), gamma=m.gamma)


def policy_iteration(m: FiniteMdp, max_iter: int = 10_000) -> ValueTable:
    """Howard policy iteration; exact up to linear-solve precision.

    Only switches action when the improvement exceeds a tiny threshold, so it
    terminates despite floating-point ties.
    """
    n, A = m.n_states, m.n_actions
    actions = np.argmax(m.reward, axis=1)
    idx = np.arange(n)
    for it in range(1, max_iter + 1):
        probs = np.zeros((n, A))
        probs[idx, actions] = 1.0
        v = evaluate_probs(m, probs)
        q = m.q_from_v(v)
        best = np.argmax(q, axis=1)
        improve = q[idx, best] > q[idx, actions] + 1e-12 * max(1.0, np.abs(q).max())
        if not improve.any():
            v = q.max(axis=1)
            return ValueTable(v=v, q=m.q_from_v(v), gamma=m.gamma, residual=0.0, iterations=it)
        actions = np.where(improve, best, actions)
    raise RuntimeError("policy iteration did not converge")


def greedy_policy(vt: ValueTable, tie_tol: float = 0.0) -> Policy:
    """argmax of ``vt.q``; ties (within ``tie_tol``) go to the lowest action index."""
    if vt.q is None:
        raise ValueError("value table has no q")
    q = vt.q
    best = q.max(axis=1, keepdims=True)
    return Policy.deterministic(np.argmax(q >= best - tie_tol, axis=1))


def suboptimality_gap(m: FiniteMdp, pi: Policy, vstar: np.ndarray | None = None,
                      tol: float = DEFAULT_TOL) -> float:
    """``sup_s |V*(s) - V^pi(s)|``."""
    if vstar is None:
        vstar = value_iteration(m, tol).v
    v = policy_evaluation(m, pi, tol).v
    return float(max(np.max(np.abs(vstar - v)), 0.0))


def optimality_margin(m: FiniteMdp, pi_target: Policy, qstar: np.ndarray | None = None,
                      tol: float = DEFAULT_TOL) -> float:
    """Smallest ``Q*(s, pi(s)) - Q*(s, a')`` over states and alternatives ``a' != pi(s)``."""
    if not pi_target.is_deterministic:
        raise ValueError("optimality margin needs a deterministic target policy")
    if m.n_actions == 1:
        return float("inf")
    if qstar is None:
        qstar = value_iteration(m, tol).q
    idx = np.arange(m.n_states)
    chosen = qstar[idx, pi_target.table]
    others = qstar.copy()
    others[idx, pi_target.table] = -np.inf
    return float(np.min(chosen - others.max(axis=1)))


def equivalence_gap(m1: FiniteMdp, m2: FiniteMdp) -> EquivalenceGap:
    """Reward gap (as a fraction of the larger ``r_max``) and worst row L1 transition gap."""
    if (m1.n_states, m1.n_actions) != (m2.n_states, m2.n_actions):
        raise ValueError("MDPs have different state/action counts")
    if m1.gamma != m2.gamma:
        raise ValueError("MDPs have different discounts")
    r_ref = max(m1.r_max, m2.r_max)
    dr = float(np.max(np.abs(m1.reward - m2.reward))) if m1.reward.size else 0.0
    if r_ref > 0:
        beta_r = dr / r_ref
    else:
        beta_r = 0.0 if dr == 0 else float("inf")
    beta_t = float(np.max(kernel_l1_rows(m1.transition, m2.transition)))
    return EquivalenceGap(beta_r=beta_r, beta_t=min(beta_t, 2.0))


def policy_l1_distance(p1: Policy, p2: Policy, n_actions: int | None = None) -> float:
    """``sup_s ||p1(.|s) - p2(.|s)||_1``."""
    if p1.n_states != p2.n_states:
        raise ValueError("policies cover different state counts")
    if n_actions is None:
        for p in (p1, p2):
            if not p.is_deterministic:
                n_actions = p.table.shape[1]
        if n_actions is None:
            n_actions = int(max(p1.table.max(), p2.table.max())) + 1
    a, b = p1.probs(n_actions), p2.probs(n_actions)
    return float(np.max(np.abs(a - b).sum(axis=1)))
