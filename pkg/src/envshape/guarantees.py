"""Empirical checks of the value and policy bounds on random instances.

Every trial draws a fresh instance from a generator seeded by
``(seed, trial)``, measures the left-hand side exactly (policy iteration and
linear solves) and compares it to the closed-form right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .abstraction import Abstraction, lift_policy
from .bounds import (
    BoundInputs,
    lemma2_bound,
    lemma3_bound,
    lemma4_bound,
    lemma5_bound,
    theorem1_bound,
    theorem2_bound,
    theorem3_bound,
)
from .mdp import (
    FiniteMdp,
    Policy,
    equivalence_gap,
    evaluate_probs,
    policy_iteration,
    policy_l1_distance,
)
from .shaping import (
    ShapingConfig,
    compress,
    lift_dynamics_only,
    lift_full,
    lift_reward_only,
    teach_rewards,
)

SLACK = 1e-8
GAMMAS = (0.5, 0.9, 0.95)
LEMMA_IDS = ("lemma2", "lemma3", "lemma4", "lemma5", "theorem1", "theorem2", "theorem3")


@dataclass
class VerificationReport:
    lemma: str
    trials: int
    violations: int = 0
    max_slack: float = -np.inf
    min_slack: float = np.inf
    median_ratio: float = float("nan")
    worst_case: dict | None = None
    ratios: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "trials": self.trials,
            "violations": self.violations,
            "max_slack": self.max_slack,
            "min_slack": self.min_slack,
            "median_ratio": self.median_ratio,
            "worst_case": self.worst_case,
        }


# -- generators -------------------------------------------------------------

def random_transitions(rng: np.random.Generator, n_states: int, n_actions: int,
                       sparsity: int | None = None) -> np.ndarray:
    """Normalised independent uniform rows, optionally keeping ``sparsity`` successors."""
    t = rng.random((n_states, n_actions, n_states))
    if sparsity is not None and sparsity < n_states:
        keep = np.argsort(rng.random(t.shape), axis=2)[:, :, :sparsity]
        mask = np.zeros(t.shape, dtype=bool)
        np.put_along_axis(mask, keep, True, axis=2)
        t = np.where(mask, t, 0.0)
    return t / t.sum(axis=2, keepdims=True)


def random_mdp(rng: np.random.Generator, n_states: int | None = None, n_actions: int | None = None,
               gamma: float | None = None, r_max: float = 1.0, sparsity: int | None = None) -> FiniteMdp:
    S = int(rng.integers(2, 13)) if n_states is None else n_states
    A = int(rng.integers(2, 5)) if n_actions is None else n_actions
    g = float(rng.choice(GAMMAS)) if gamma is None else gamma
    trans = random_transitions(rng, S, A, sparsity)
    reward = rng.uniform(0.0, r_max, size=(S, A))
    mu = rng.random(S)
    return FiniteMdp(trans, reward, mu / mu.sum(), g, r_max)


def random_stochastic_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> Policy:
    p = rng.random((n_states, n_actions))
    return Policy.stochastic(p / p.sum(axis=1, keepdims=True))


def random_abstraction(rng: np.random.Generator, n_ground: int, n_abstract: int | None = None) -> Abstraction:
    X = int(rng.integers(1, n_ground + 1)) if n_abstract is None else n_abstract
    phi = np.concatenate([np.arange(X), rng.integers(0, X, size=n_ground - X)])
    return Abstraction.from_map(rng.permutation(phi), X)


def perturbed_pair(rng: np.random.Generator, m: FiniteMdp, beta_r: float, beta_t: float) -> FiniteMdp:
    """Rewards shifted by at most ``beta_r * r_max``; rows mixed with weight ``beta_t / 2``."""
    shift = rng.uniform(-beta_r * m.r_max, beta_r * m.r_max, size=m.reward.shape)
    reward = np.clip(m.reward + shift, 0.0, m.r_max)
    base = m.transition.to_csr().toarray().reshape(m.n_states, m.n_actions, m.n_states)
    other = random_transitions(rng, m.n_states, m.n_actions)
    w = beta_t / 2.0
    return m.replace(transition=(1.0 - w) * base + w * other, reward=reward)


def soften(pi: Policy, n_actions: int, p: float) -> Policy:
    """``(1 - p) * one-hot + p * uniform``."""
    probs = (1.0 - p) * pi.probs(n_actions) + p / n_actions
    return Policy.stochastic(probs / probs.sum(axis=1, keepdims=True))


def _values(m: FiniteMdp, pi: Policy) -> np.ndarray:
    return evaluate_probs(m, pi.probs(m.n_actions))


def _gap(m: FiniteMdp, pi: Policy, vstar: np.ndarray | None = None) -> float:
    if vstar is None:
        vstar = policy_iteration(m).v
    return float(max(np.max(np.abs(vstar - _values(m, pi))), 0.0))


# -- per-lemma trials ---------------------------------------------------------

def _trial_lemma2(rng):
    m = random_mdp(rng)
    p1 = random_stochastic_policy(rng, m.n_states, m.n_actions)
    p2 = random_stochastic_policy(rng, m.n_states, m.n_actions)
    lhs = float(np.max(np.abs(_values(m, p1) - _values(m, p2))))
    rhs = lemma2_bound(policy_l1_distance(p1, p2), m.r_max, m.gamma)
    return lhs, rhs, {"gamma": m.gamma, "n_states": m.n_states}


def _lemma34_pair(rng):
    m1 = random_mdp(rng)
    m2 = perturbed_pair(rng, m1, rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.5))
    gap = equivalence_gap(m1, m2)
    return m1, m2, gap


def _trial_lemma3(rng):
    m1, m2, gap = _lemma34_pair(rng)
    lhs = float(np.max(np.abs(policy_iteration(m1).v - policy_iteration(m2).v)))
    rhs = lemma3_bound(gap.beta_r, gap.beta_t, m1.r_max, m1.gamma)
    return lhs, rhs, {"beta_r": gap.beta_r, "beta_t": gap.beta_t, "gamma": m1.gamma}


def _trial_lemma4(rng):
    m1, m2, gap = _lemma34_pair(rng)
    pi = random_stochastic_policy(rng, m1.n_states, m1.n_actions)
    lhs = float(np.max(np.abs(_values(m1, pi) - _values(m2, pi))))
    rhs = lemma4_bound(gap.beta_r, gap.beta_t, m1.r_max, m1.gamma)
    return lhs, rhs, {"beta_r": gap.beta_r, "beta_t": gap.beta_t, "gamma": m1.gamma}


def _taught_instance(rng, m: FiniteMdp):
    """Random deterministic target taught into ``m`` with a random margin."""
    delta = float(rng.uniform(0.05, 0.5) * m.r_max)
    target = Policy.deterministic(rng.integers(0, m.n_actions, size=m.n_states))
    taught, _ = teach_rewards(m, target, ShapingConfig(delta=delta), delta)
    return taught, target, delta


def _trial_lemma5(rng):
    m = random_mdp(rng)
    taught, target, delta = _taught_instance(rng, m)
    pi = soften(target, m.n_actions, float(rng.uniform(0.0, 1.0)))
    eps_opt = _gap(taught, pi)
    lhs = policy_l1_distance(target, pi)
    rhs = lemma5_bound(eps_opt, delta)
    return lhs, rhs, {"delta": delta, "eps_opt": eps_opt, "gamma": m.gamma}


def _theorem_instance(rng, mode: str):
    m = random_mdp(rng)
    phi = random_abstraction(rng, m.n_states)
    compressed = compress(m, phi)
    delta = float(rng.uniform(0.05, 0.5) * m.r_max)
    pi_abs = Policy.deterministic(rng.integers(0, m.n_actions, size=phi.n_abstract))
    taught, _ = teach_rewards(compressed, pi_abs, ShapingConfig(delta=delta), delta)
    full = lift_full(taught, phi, m)
    if mode == "full":
        shaped = full
    elif mode == "reward_only":
        shaped = lift_reward_only(m, taught, phi)
    else:
        shaped = lift_dynamics_only(m, taught, phi)
    lifted = lift_policy(pi_abs, phi)
    pi = soften(lifted, m.n_actions, float(rng.uniform(0.0, 1.0)))
    vstar = policy_iteration(m).v
    eps_vstar = _gap(m, lifted, vstar)
    eps_opt = _gap(shaped, pi)
    lhs = _gap(m, pi, vstar)
    gap = equivalence_gap(shaped, full) if mode != "full" else None
    inputs = BoundInputs(
        eps_vstar=eps_vstar, eps_opt=eps_opt, delta=delta, gamma=m.gamma, r_max=m.r_max,
        r_phi_max=taught.reward_magnitude,
        beta_r=gap.beta_r if gap else 0.0, beta_t=gap.beta_t if gap else 0.0,
    )
    info = {"delta": delta, "eps_opt": eps_opt, "eps_vstar": eps_vstar, "gamma": m.gamma,
            "n_states": m.n_states, "n_abstract": phi.n_abstract}
    return lhs, inputs, info


def _trial_theorem1(rng):
    lhs, b, info = _theorem_instance(rng, "full")
    return lhs, theorem1_bound(b), info


def _trial_theorem2(rng):
    lhs, b, info = _theorem_instance(rng, "reward_only")
    info["beta_t"] = b.beta_t
    return lhs, theorem2_bound(b), info


def _trial_theorem3(rng):
    lhs, b, info = _theorem_instance(rng, "dynamics_only")
    info["beta_r"] = b.beta_r
    return lhs, theorem3_bound(b), info


TRIALS: dict[str, Callable] = {
    "lemma2": _trial_lemma2,
    "lemma3": _trial_lemma3,
    "lemma4": _trial_lemma4,
    "lemma5": _trial_lemma5,
    "theorem1": _trial_theorem1,
    "theorem2": _trial_theorem2,
    "theorem3": _trial_theorem3,
}


def verify_lemma(lemma_id: str, trials: int = 1000, seed: int = 0) -> VerificationReport:
    """Count bound violations (beyond ``1e-8``) over ``trials`` random instances."""
    if lemma_id not in TRIALS:
        raise ValueError(f"unknown lemma id {lemma_id!r}; choose from {LEMMA_IDS}")
    fn = TRIALS[lemma_id]
    report = VerificationReport(lemma=lemma_id, trials=trials)
    worst = None
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        lhs, rhs, info = fn(rng)
        slack = rhs - lhs
        report.max_slack = max(report.max_slack, slack)
        report.min_slack = min(report.min_slack, slack)
        if rhs > 0:
            report.ratios.append(lhs / rhs)
        if lhs > rhs + SLACK:
            report.violations += 1
        if worst is None or slack < worst[0]:
            worst = (slack, {"trial": t, "lhs": lhs, "rhs": rhs, **info})
    if report.ratios:
        report.median_ratio = float(np.median(report.ratios))
    if report.violations and worst is not None:
        report.worst_case = worst[1]
    return report


def verify_all(trials: int = 1000, seed: int = 0, which: str = "all") -> list[VerificationReport]:
    ids = LEMMA_IDS if which == "all" else (which,)
    return [verify_lemma(i, trials, seed) for i in ids]


def format_reports(reports: list[VerificationReport]) -> str:
    lines = [f"{'lemma':<10} {'trials':>7} {'violations':>10} {'max_slack':>12} {'median LHS/RHS':>15}"]
    for r in reports:
        lines.append(
            f"{r.lemma:<10} {r.trials:>7d} {r.violations:>10d} {r.max_slack:>12.4g} {r.median_ratio:>15.4g}"
        )
    return "\n".join(lines)


__all__ = [
    "BoundInputs",
    "LEMMA_IDS",
    "VerificationReport",
    "format_reports",
    "lemma2_bound",
    "lemma3_bound",
    "lemma4_bound",
    "lemma5_bound",
    "random_abstraction",
    "random_mdp",
    "soften",
    "theorem1_bound",
    "theorem2_bound",
    "theorem3_bound",
    "verify_all",
    "verify_lemma",
]
