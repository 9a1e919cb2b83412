"""Compress, teach, lift: building a shaped environment from an abstraction.

``compress`` averages the ground MDP over abstraction classes, ``teach_rewards``
changes the abstract rewards as little as possible so that a target policy
becomes optimal by a margin ``delta``, and the ``lift_*`` functions carry the
result back to the ground states.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .abstraction import (
    Abstraction,
    lift_policy,
    model_irrelevance_coefficients,
    vstar_irrelevance_error,
)
from .bounds import BOUND_FOR_MODE, BoundInputs
from .kernels import DenseKernel, Kernel, LiftedKernel, lifted_row_power_sums
from .lp import linprog_simplex
from .mdp import (
    DEFAULT_TOL,
    FiniteMdp,
    Policy,
    equivalence_gap,
    optimality_margin,
    policy_evaluation,
    value_iteration,
    greedy_policy,
)

MODES = ("full", "reward_only", "dynamics_only")
TEACH_NORMS = ("sup", "l1")
TEACH_STRATEGIES = ("lp", "boost")
MARGIN_SLACK = 1e-6
# ground MDPs up to this many states get an explicit dense lifted kernel
DENSE_LIFT_MAX_STATES = 1000


@dataclass(frozen=True)
class ShapingConfig:
    p: float = 2.0
    q: float = 1.0
    delta: Optional[float] = None
    mode: str = "full"
    teach_norm: str = "sup"
    teach_strategy: str = "lp"
    refine: bool = False
    refine_iterations: int = 500

    def __post_init__(self):
        mode = self.mode.replace("-", "_")
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.teach_norm not in TEACH_NORMS:
            raise ValueError(f"teach_norm must be one of {TEACH_NORMS}")
        if self.teach_strategy not in TEACH_STRATEGIES:
            raise ValueError(f"teach_strategy must be one of {TEACH_STRATEGIES}")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be at least 1")

    def resolved_delta(self, r_max: float, gamma: float) -> float:
        """``delta`` if set, else ``0.1 * r_max * (1 - gamma)``."""
        if self.delta is not None:
            return float(self.delta)
        d = 0.1 * r_max * (1.0 - gamma)
        if d <= 0:
            raise ValueError("cannot derive a default delta from r_max = 0")
        return d


@dataclass
class ShapingReport:
    mode: str
    delta: float
    d_t: float
    d_r: float
    d_mu: float
    teach_change: float
    teach_norm: str
    achieved_margin: float
    output_eps_r: float
    output_eps_t: float
    lifted_margin: Optional[float] = None
    eps_vstar: Optional[float] = None
    beta_r: float = 0.0
    beta_t: float = 0.0
    r_max: float = 0.0
    r_phi_max: float = 0.0
    gamma: float = 0.0
    bound_intercept: Optional[float] = None
    bound_slope: Optional[float] = None
    notes: list = field(default_factory=list)

    def bound(self, eps_opt: float) -> float:
        """Suboptimality bound on the original MDP for an ``eps_opt``-near-optimal policy."""
        if self.bound_intercept is None:
            raise ValueError("report was produced without bound measurements")
        return self.bound_intercept + self.bound_slope * eps_opt

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ShapingResult:
    compressed: FiniteMdp
    taught: FiniteMdp
    shaped: FiniteMdp
    pi_abs: Policy
    report: ShapingReport


def abstract_array(kernel: Kernel) -> np.ndarray:
    """Dense ``(S, A, S)`` copy of a small kernel."""
    if isinstance(kernel, DenseKernel):
        return np.array(kernel.array)
    S, A = kernel.n_states, kernel.n_actions
    return kernel.to_csr().toarray().reshape(S, A, S)


def _class_mean_matrix(phi: Abstraction) -> sp.csr_matrix:
    sizes = phi.class_sizes
    n = phi.n_ground
    return sp.csr_matrix((1.0 / sizes[phi.map], (phi.map, np.arange(n))), shape=(phi.n_abstract, n))


def compress(m: FiniteMdp, phi: Abstraction, cfg: ShapingConfig | None = None) -> FiniteMdp:
    """Class-averaged MDP over abstract states.

    Rewards and abstract transition masses are class means, the initial
    distribution is summed per class.  With ``cfg.refine`` the transition rows
    are then improved for the ``(p, 1)`` distance by projected subgradient.
    """
    if phi.n_ground != m.n_states:
        raise ValueError("abstraction does not match the MDP's state count")
    X, A = phi.n_abstract, m.n_actions
    sizes = phi.class_sizes
    reward = np.stack(
        [np.bincount(phi.map, weights=m.reward[:, a], minlength=X) for a in range(A)], axis=1
    ) / sizes[:, None]
    mass = m.transition.abstract_mass(phi.map, X)
    avg = _class_mean_matrix(phi)
    trans = np.empty((X, A, X))
    for a in range(A):
        trans[:, a, :] = (avg @ mass[a::A]).toarray()
    mu = np.bincount(phi.map, weights=m.initial_dist, minlength=X)
    if cfg is not None and cfg.refine:
        trans = refine_transitions(m, phi, trans, cfg.p, cfg.q, cfg.refine_iterations)
    return FiniteMdp(DenseKernel(trans), reward, mu, m.gamma, m.r_max)


def project_rows_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row of ``y`` onto the probability simplex."""
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1, y.shape[-1])
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, flat.shape[1] + 1)
    cond = u - css / k > 0
    rho = flat.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(flat)), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(y.shape)


def _transition_row_norms(m: FiniteMdp, phi: Abstraction, trans_abs: np.ndarray, q: float) -> np.ndarray:
    """``(sum_{s'} |T(s'|s,a) - T_abs(phi(s')|phi(s),a)/|class|**q)**(1/q)`` per ``(s, a)``."""
    lifted = LiftedKernel(trans_abs, phi.map, phi.n_abstract)
    k = m.transition
    if isinstance(k, LiftedKernel) and np.array_equal(k.phi_map, phi.map):
        n = phi.class_sizes.astype(float)
        diff = np.abs(k.abstract - trans_abs) / n
        sums = ((diff ** q) * n).sum(axis=2)[phi.map]
    elif isinstance(k, LiftedKernel):
        # different partitions: fall back to explicit rows
        sums = np.array([
            np.sum(np.abs(k.row(s, a) - lifted.row(s, a)) ** q)
            for s in range(m.n_states) for a in range(m.n_actions)
        ]).reshape(m.n_states, m.n_actions)
    else:
        sums = lifted_row_power_sums(k.to_csr(), lifted, q).reshape(m.n_states, m.n_actions)
    return np.maximum(sums, 0.0) ** (1.0 / q)


def _pnorm(values: np.ndarray, p: float) -> float:
    values = np.abs(np.ravel(values))
    if values.size == 0:
        return 0.0
    if np.isinf(p):
        return float(values.max())
    return float(np.sum(values ** p) ** (1.0 / p))


def shaping_distance(m: FiniteMdp, m_abs: FiniteMdp, phi: Abstraction, p: float = 2.0,
                     q: float = 1.0) -> tuple[float, float, float]:
    """``(d_t, d_r, d_mu)``: how far ``m_abs``, spread over the classes, is from ``m``.

    Abstract transition and initial masses are divided by the size of the
    class they land in before comparison.  ``p = inf`` takes a maximum.
    """
    if p < 1 or q < 1:
        raise ValueError("p and q must be at least 1")
    if m_abs.n_states != phi.n_abstract or phi.n_ground != m.n_states:
        raise ValueError("MDP shapes do not match the abstraction")
    sizes = phi.class_sizes
    trans_abs = abstract_array(m_abs.transition)
    d_t = _pnorm(_transition_row_norms(m, phi, trans_abs, q), p)
    d_r = _pnorm(m.reward - m_abs.reward[phi.map], p)
    d_mu = _pnorm(m.initial_dist - m_abs.initial_dist[phi.map] / sizes[phi.map], p)
    return d_t, d_r, d_mu


def _refine_objective_and_grad(m, phi, c, p, base_csr):
    """``(p, 1)`` transition distance of abstract rows ``c`` and a subgradient."""
    X, A = phi.n_abstract, m.n_actions
    n = phi.class_sizes.astype(float)
    lifted = LiftedKernel(c, phi.map, X)
    l1 = np.maximum(lifted_row_power_sums(base_csr, lifted, 1.0), 0.0)  # (S*A,)
    obj = np.sum(l1 ** p) ** (1.0 / p)
    w = p * l1 ** (p - 1)
    # d l1 / d c[x, a, x'] = (1/n_x') * sum_{s' in x'} sign(c/n_x' - T(s'))
    row_of = np.repeat(np.arange(base_csr.shape[0]), np.diff(base_csr.indptr))
    s_of, a_of = row_of // A, row_of % A
    xc = phi.map[base_csr.indices]
    cv = c[phi.map[s_of], a_of, xc] / n[xc]
    corr = (np.sign(cv - base_csr.data) - np.sign(cv)) / n[xc]
    grad = np.zeros((X, A, X))
    # base term: every class member counted as a zero entry
    per_row = np.sign(c)  # (X, A, X), multiplied by n_x'/n_x' = 1
    ws = np.zeros((X, A))
    np.add.at(ws, (phi.map[np.arange(m.n_states)].repeat(A), np.tile(np.arange(A), m.n_states)), w)
    grad += ws[:, :, None] * per_row
    np.add.at(grad, (phi.map[s_of], a_of, xc), w[row_of] * corr)
    return obj, grad


def refine_transitions(m: FiniteMdp, phi: Abstraction, start: np.ndarray, p: float = 2.0,
                       q: float = 1.0, iterations: int = 500) -> np.ndarray:
    """Projected subgradient descent on the ``(p, 1)`` transition distance.

    Normalised subgradient steps of length ``1/k`` with a simplex projection
    after each; the best iterate seen is returned.
    """
    if q != 1:
        raise ValueError("refinement is implemented for q = 1 only")
    base = m.transition
    if isinstance(base, LiftedKernel):
        raise ValueError("refinement needs an explicit ground kernel")
    csr = base.to_csr()
    c = np.array(start, dtype=float)
    best_obj, grad = _refine_objective_and_grad(m, phi, c, p, csr)
    best = c.copy()
    for k in range(1, iterations + 1):
        g = np.linalg.norm(grad)
        if g == 0:
            break
        c = project_rows_to_simplex(c - grad / g / k)
        obj, grad = _refine_objective_and_grad(m, phi, c, p, csr)
        if obj < best_obj:
            best_obj, best = obj, c.copy()
    return best


def _q_gaps(m: FiniteMdp, pi: Policy) -> np.ndarray:
    """``Q^pi(s, pi(s)) - max_{a' != pi(s)} Q^pi(s, a')`` per state."""
    q = policy_evaluation(m, pi).q
    idx = np.arange(m.n_states)
    chosen = q[idx, pi.table]
    others = q.copy()
    others[idx, pi.table] = -np.inf
    return chosen - others.max(axis=1)


def margin_constraints(m_abs: FiniteMdp, pi: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``G`` and pairs such that ``G @ R'.ravel()`` are the ``Q^pi`` action gaps.

    ``V^pi = W R'_pi`` with ``W = (I - gamma P_pi)^-1``, so every gap
    ``Q(x, pi(x)) - Q(x, a')`` is linear in the reward table.
    """
    X, A, g = m_abs.n_states, m_abs.n_actions, m_abs.gamma
    T = abstract_array(m_abs.transition)
    idx = np.arange(X)
    p_pi = T[idx, pi.table]
    W = np.linalg.inv(np.eye(X) - g * p_pi)
    TW = T @ W  # (X, A, X)
    pi_cols = idx * A + pi.table
    rows, pairs = [], []
    for x in range(X):
        for a in range(A):
            if a == pi.table[x]:
                continue
            row = np.zeros(X * A)
            row[pi_cols] = W[x] - g * TW[x, a]
            row[x * A + a] -= 1.0
            rows.append(row)
            pairs.append((x, a))
    return np.array(rows).reshape(-1, X * A), np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _teach_lp(m_abs: FiniteMdp, pi: Policy, delta: float, norm: str) -> np.ndarray:
    """Smallest reward change (sup or L1 norm) giving every ``Q^pi`` gap at least ``delta``."""
    X, A = m_abs.n_states, m_abs.n_actions
    n = X * A
    G, _ = margin_constraints(m_abs, pi)
    r = m_abs.reward.ravel()
    # variables: d_plus (n), d_minus (n)[, t]
    rhs = G @ r - delta
    if norm == "sup":
        c = np.zeros(2 * n + 1)
        c[-1] = 1.0
        margin_rows = np.hstack([-G, G, np.zeros((len(G), 1))])
        norm_rows = np.hstack([np.eye(n), np.eye(n), -np.ones((n, 1))])
        A_ub = np.vstack([margin_rows, norm_rows])
        b_ub = np.concatenate([rhs, np.zeros(n)])
    else:
        c = np.ones(2 * n)
        A_ub = np.hstack([-G, G])
        b_ub = rhs
    res = linprog_simplex(c, A_ub, b_ub)
    d = res.x[:n] - res.x[n:2 * n]
    return d.reshape(X, A)


def _teach_boost(m_abs: FiniteMdp, pi: Policy, delta: float, tol: float = 1e-7) -> float:
    """Smallest bonus on the target actions that reaches the margin, by bisection."""

    def ok(c: float) -> bool:
        return _q_gaps(_boosted(m_abs, pi, c), pi).min() >= delta

    if ok(0.0):
        return 0.0
    hi = max(delta, 1e-3)
    while not ok(hi):
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("boost bisection failed to bracket the margin")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _boosted(m_abs: FiniteMdp, pi: Policy, c: float) -> FiniteMdp:
    r = np.array(m_abs.reward)
    r[np.arange(m_abs.n_states), pi.table] += c
    return m_abs.replace(reward=r)


def _shaped_r_max(declared: float, reward: np.ndarray) -> float:
    mag = float(np.abs(reward).max()) if reward.size else 0.0
    return max(declared, mag)


def teach_rewards(m_abs: FiniteMdp, pi_target: Policy, cfg: ShapingConfig,
                  delta: float | None = None) -> tuple[FiniteMdp, float]:
    """Change only the rewards of ``m_abs`` so ``pi_target`` is optimal with margin ``delta``.

    Returns the taught MDP and the size of the reward change in
    ``cfg.teach_norm``.  When the target already has the margin the input is
    returned unchanged.
    """
    if not pi_target.is_deterministic:
        raise ValueError("teaching needs a deterministic target policy")
    if pi_target.n_states != m_abs.n_states:
        raise ValueError("target policy does not match the abstract MDP")
    if delta is None:
        delta = cfg.resolved_delta(m_abs.r_max, m_abs.gamma)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if m_abs.n_actions == 1 or _q_gaps(m_abs, pi_target).min() >= delta:
        return m_abs, 0.0
    if cfg.teach_strategy == "lp":
        # aim a hair above delta so round-off cannot leave the margin short
        d = _teach_lp(m_abs, pi_target, delta * (1 + 1e-9) + 1e-10, cfg.teach_norm)
        reward = m_abs.reward + d
    else:
        c = _teach_boost(m_abs, pi_target, delta)
        reward = _boosted(m_abs, pi_target, c).reward
        d = reward - m_abs.reward
    change = float(np.abs(d).max() if cfg.teach_norm == "sup" else np.abs(d).sum())
    taught = m_abs.replace(reward=reward, r_max=_shaped_r_max(m_abs.r_max, reward))
    # gaps of Q^pi all positive means pi is optimal and Q^pi = Q*
    margin = float(_q_gaps(taught, pi_target).min())
    if margin < delta - MARGIN_SLACK:
        raise RuntimeError(f"teaching reached margin {margin:.3g} < delta {delta:.3g}")
    return taught, change


def _check_lift_shapes(m_phi: FiniteMdp, phi: Abstraction, ground: FiniteMdp | None = None):
    if m_phi.n_states != phi.n_abstract:
        raise ValueError(f"abstract MDP has {m_phi.n_states} states, abstraction has {phi.n_abstract}")
    if ground is not None:
        if ground.n_states != phi.n_ground:
            raise ValueError("ground MDP does not match the abstraction")
        if ground.n_actions != m_phi.n_actions:
            raise ValueError("ground and abstract MDPs have different action counts")


def lifted_kernel(trans_abs: np.ndarray, phi: Abstraction) -> Kernel:
    """Kernel spreading abstract mass uniformly over target classes.

    Small ground spaces get an explicit dense tensor; singleton classes copy
    entries exactly.
    """
    if phi.n_ground <= DENSE_LIFT_MAX_STATES:
        sizes = phi.class_sizes
        dense = trans_abs[phi.map][:, :, phi.map]
        if np.any(sizes != 1):
            dense = dense / sizes[phi.map][None, None, :]
        return DenseKernel(dense)
    return LiftedKernel(trans_abs, phi.map, phi.n_abstract)


def lift_full(m_phi: FiniteMdp, phi: Abstraction, ground: FiniteMdp | None = None) -> FiniteMdp:
    """Ground MDP for which ``phi`` is exactly model-irrelevant."""
    _check_lift_shapes(m_phi, phi, ground)
    sizes = phi.class_sizes
    kernel = lifted_kernel(abstract_array(m_phi.transition), phi)
    reward = m_phi.reward[phi.map]
    mu = m_phi.initial_dist[phi.map]
    if np.any(sizes != 1):
        mu = mu / sizes[phi.map]
    return FiniteMdp(kernel, reward, mu, m_phi.gamma, m_phi.r_max)


def lift_reward_only(m: FiniteMdp, m_phi: FiniteMdp, phi: Abstraction) -> FiniteMdp:
    """``m`` with rewards replaced by the abstract ones."""
    _check_lift_shapes(m_phi, phi, m)
    reward = m_phi.reward[phi.map]
    return m.replace(reward=reward, r_max=_shaped_r_max(m.r_max, reward))


def lift_dynamics_only(m: FiniteMdp, m_phi: FiniteMdp, phi: Abstraction) -> FiniteMdp:
    """``m`` with transitions replaced by the lifted abstract ones."""
    _check_lift_shapes(m_phi, phi, m)
    return m.replace(transition=lifted_kernel(abstract_array(m_phi.transition), phi))


def run_pipeline(m: FiniteMdp, phi: Abstraction, pi_abs: Policy | None = None,
                 cfg: ShapingConfig | None = None, measure_bounds: bool = True,
                 tol: float = DEFAULT_TOL) -> ShapingResult:
    """Every stage of the construction, with the intermediate MDPs kept.

    Without ``pi_abs`` the target is the greedy policy of the compressed MDP.
    """
    cfg = cfg or ShapingConfig()
    if phi.n_ground != m.n_states:
        raise ValueError("abstraction does not match the MDP's state count")
    compressed = compress(m, phi, cfg)
    if pi_abs is None:
        pi_abs = greedy_policy(value_iteration(compressed, tol))
    if not pi_abs.is_deterministic or pi_abs.n_states != phi.n_abstract:
        raise ValueError("pi_abs must be a deterministic policy over the abstract states")
    delta = cfg.resolved_delta(m.r_max, m.gamma)
    taught, change = teach_rewards(compressed, pi_abs, cfg, delta)
    margin = optimality_margin(taught, pi_abs)

    full = lift_full(taught, phi, m)
    if cfg.mode == "full":
        shaped = full
    elif cfg.mode == "reward_only":
        shaped = lift_reward_only(m, taught, phi)
    else:
        shaped = lift_dynamics_only(m, taught, phi)

    d_t, d_r, d_mu = shaping_distance(m, taught, phi, cfg.p, cfg.q)
    eps_r, eps_t, _, _ = model_irrelevance_coefficients(shaped, phi)
    report = ShapingReport(
        mode=cfg.mode, delta=delta, d_t=d_t, d_r=d_r, d_mu=d_mu,
        teach_change=change, teach_norm=cfg.teach_norm, achieved_margin=margin,
        output_eps_r=eps_r, output_eps_t=eps_t,
        r_max=m.r_max, r_phi_max=taught.reward_magnitude, gamma=m.gamma,
        notes=["lifted initial distribution divides class mass by class size"],
    )
    lifted_pi = lift_policy(pi_abs, phi)
    if cfg.mode == "full":
        report.lifted_margin = optimality_margin(shaped, lifted_pi, tol=tol)
        if report.lifted_margin < delta - MARGIN_SLACK:
            raise RuntimeError(
                f"lifted target policy has margin {report.lifted_margin:.3g} in the shaped MDP"
            )
    else:
        gap = equivalence_gap(shaped, full)
        report.beta_r, report.beta_t = gap.beta_r, gap.beta_t
    if measure_bounds:
        report.eps_vstar = vstar_irrelevance_error(m, phi, pi_abs, tol=tol)
        inputs = BoundInputs(
            eps_vstar=report.eps_vstar, eps_opt=0.0, delta=delta, gamma=m.gamma,
            r_max=m.r_max, r_phi_max=report.r_phi_max, beta_r=report.beta_r, beta_t=report.beta_t,
        )
        f = BOUND_FOR_MODE[cfg.mode]
        report.bound_intercept = f(inputs)
        report.bound_slope = f(inputs.with_(eps_opt=1.0)) - report.bound_intercept
    return ShapingResult(compressed, taught, shaped, pi_abs, report)


def shape_environment(m: FiniteMdp, phi: Abstraction, pi_abs: Policy | None = None,
                      cfg: ShapingConfig | None = None, measure_bounds: bool = True
                      ) -> tuple[FiniteMdp, ShapingReport]:
    res = run_pipeline(m, phi, pi_abs, cfg, measure_bounds)
    return res.shaped, res.report
