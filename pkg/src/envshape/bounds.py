"""Closed-form suboptimality bounds for shaped environments."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class BoundInputs:
    eps_vstar: float = 0.0
    eps_opt: float = 0.0
    delta: float = 1.0
    gamma: float = 0.9
    r_max: float = 1.0
    r_phi_max: float = 0.0
    beta_r: float = 0.0
    beta_t: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("eps_vstar", "eps_opt", "delta", "r_max", "r_phi_max", "beta_r", "beta_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def with_(self, **changes) -> "BoundInputs":
        return replace(self, **changes)


@dataclass(frozen=True)
class Theorem1Result:
    bound: float
    c: float
    c_applies: bool


def _check_delta(delta: float) -> None:
    if delta <= 0:
        raise ValueError("delta must be positive")


def _scale(b: BoundInputs) -> float:
    return b.r_max / (1.0 - b.gamma) / b.delta


def theorem1(b: BoundInputs) -> Theorem1Result:
    """Bound for full shaping, plus the constant ``c`` and whether it may be claimed.

    ``c`` turns the bound into ``c * eps_opt``; that only holds when
    ``eps_vstar`` is no larger than the policy-error term.
    """
    _check_delta(b.delta)
    term = _scale(b) * b.eps_opt
    c = b.r_max / (1.0 - b.gamma) * 2.0 / b.delta
    return Theorem1Result(bound=b.eps_vstar + term, c=c, c_applies=b.eps_vstar <= term)


def theorem1_bound(b: BoundInputs) -> float:
    return theorem1(b).bound


def theorem2_bound(b: BoundInputs) -> float:
    """Reward-only shaping: the dynamics mismatch enters through ``beta_t``."""
    _check_delta(b.delta)
    g = b.gamma
    extra = 2.0 * g * b.beta_t * b.r_phi_max / (1.0 - g) ** 2
    return b.eps_vstar + _scale(b) * (extra + b.eps_opt)


def theorem3_bound(b: BoundInputs) -> float:
    """Dynamics-only shaping: the reward mismatch enters through ``beta_r``."""
    _check_delta(b.delta)
    extra = 2.0 * b.beta_r * max(b.r_max, b.r_phi_max) / (1.0 - b.gamma)
    return b.eps_vstar + _scale(b) * (extra + b.eps_opt)


def lemma3_bound(beta_r: float, beta_t: float, r_max: float, gamma: float) -> float:
    """Value gap between approximately equivalent MDPs (optimal or fixed-policy values)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return beta_r * r_max / (1.0 - gamma) + gamma * beta_t * r_max / (1.0 - gamma) ** 2


lemma4_bound = lemma3_bound


def lemma5_bound(eps_opt: float, delta: float) -> float:
    """Policy distance to the unique optimum for an ``eps_opt``-near-optimal policy."""
    _check_delta(delta)
    return eps_opt / delta


def lemma2_bound(policy_distance: float, r_max: float, gamma: float) -> float:
    return r_max / (1.0 - gamma) * policy_distance


BOUND_FOR_MODE = {
    "full": theorem1_bound,
    "reward_only": theorem2_bound,
    "dynamics_only": theorem3_bound,
}
