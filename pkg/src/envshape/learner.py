"""REINFORCE with a two-layer softmax policy, Monte Carlo prediction and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .envs.base import PotentialShapedEnv, TabularEnv


@dataclass
class MlpPolicyParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, input_len: int, n_actions: int, hidden: int = 64,
             rng: np.random.Generator | None = None) -> "MlpPolicyParams":
        rng = rng or np.random.default_rng(0)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(input_len), size=(input_len, hidden))
        w2 = rng.normal(0.0, 0.01, size=(hidden, n_actions))
        return cls(w1, np.zeros(hidden), w2, np.zeros(n_actions))

    @classmethod
    def zeros(cls, input_len: int, n_actions: int, hidden: int = 64) -> "MlpPolicyParams":
        return cls(np.zeros((input_len, hidden)), np.zeros(hidden),
                   np.zeros((hidden, n_actions)), np.zeros(n_actions))

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "MlpPolicyParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(flat[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        return MlpPolicyParams(*out)

    def copy(self) -> "MlpPolicyParams":
        return MlpPolicyParams(*(a.copy() for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: MlpPolicyParams, x: np.ndarray):
    pre = x @ params.w1 + params.b1
    h = np.maximum(pre, 0.0)
    logits = h @ params.w2 + params.b2
    return pre, h, logits


def mlp_forward(params: MlpPolicyParams, encoding: np.ndarray) -> np.ndarray:
    """Action distribution for one encoding ``(D,)`` or a batch ``(B, D)``."""
    x = np.asarray(encoding, dtype=float)
    if x.shape[-1] != params.w1.shape[0]:
        raise ValueError(f"encoding length {x.shape[-1]} does not match input size {params.w1.shape[0]}")
    return softmax(_forward(params, x)[2])


def mlp_log_likelihood(params: MlpPolicyParams, obs: np.ndarray, actions: np.ndarray,
                       weights: np.ndarray | None = None) -> float:
    """``sum_i weights_i * log pi(actions_i | obs_i)``."""
    logits = _forward(params, obs)[2]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = logp[np.arange(len(actions)), actions]
    w = np.ones(len(actions)) if weights is None else weights
    return float(np.sum(w * picked))


def mlp_log_likelihood_grad(params: MlpPolicyParams, obs: np.ndarray, actions: np.ndarray,
                            weights: np.ndarray | None = None) -> MlpPolicyParams:
    """Gradient of :func:`mlp_log_likelihood` by backpropagation."""
    obs = np.asarray(obs, dtype=float)
    actions = np.asarray(actions)
    w = np.ones(len(actions)) if weights is None else np.asarray(weights, dtype=float)
    pre, h, logits = _forward(params, obs)
    g = -softmax(logits)
    g[np.arange(len(actions)), actions] += 1.0
    g *= w[:, None]
    dw2 = h.T @ g
    db2 = g.sum(axis=0)
    dh = (g @ params.w2.T) * (pre > 0)
    dw1 = obs.T @ dh
    db1 = dh.sum(axis=0)
    return MlpPolicyParams(dw1, db1, dw2, db2)


class MlpPolicy:
    def __init__(self, params: MlpPolicyParams):
        self.params = params

    def probs(self, obs):
        return mlp_forward(self.params, obs)

    def grad(self, obs, actions, weights):
        return mlp_log_likelihood_grad(self.params, obs, actions, weights)

    def ascend(self, grad: MlpPolicyParams, lr: float) -> None:
        p = self.params
        self.params = MlpPolicyParams(p.w1 + lr * grad.w1, p.b1 + lr * grad.b1,
                                      p.w2 + lr * grad.w2, p.b2 + lr * grad.b2)

    def greedy(self, obs) -> np.ndarray:
        return np.argmax(_forward(self.params, np.atleast_2d(obs))[2], axis=1)

    def is_finite(self) -> bool:
        return self.params.is_finite()


class TabularSoftmaxPolicy:
    """One logit per (feature, action); with one-hot observations this is a tabular softmax."""

    def __init__(self, theta: np.ndarray):
        self.theta = np.asarray(theta, dtype=float)

    @classmethod
    def zeros(cls, input_len: int, n_actions: int) -> "TabularSoftmaxPolicy":
        return cls(np.zeros((input_len, n_actions)))

    @property
    def params(self) -> np.ndarray:
        return self.theta

    def probs(self, obs):
        return softmax(np.asarray(obs) @ self.theta)

    def grad(self, obs, actions, weights):
        obs = np.asarray(obs, dtype=float)
        g = -self.probs(obs)
        g[np.arange(len(actions)), actions] += 1.0
        return obs.T @ (g * np.asarray(weights, dtype=float)[:, None])

    def ascend(self, grad, lr: float) -> None:
        self.theta = self.theta + lr * grad

    def greedy(self, obs) -> np.ndarray:
        return np.argmax(np.atleast_2d(obs) @ self.theta, axis=1)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    episodes_per_update: int = 10
    learning_rate: float = 0.01
    hidden: int = 64
    seed: int = 0
    baseline: str = "mean-return"
    policy: str = "mlp"
    eval_episodes: int = 10

    def __post_init__(self):
        if self.iterations < 0 or self.episodes_per_update < 1 or self.eval_episodes < 1:
            raise ValueError("iteration and episode counts must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.baseline not in ("none", "mean-return"):
            raise ValueError("baseline must be 'none' or 'mean-return'")
        if self.policy not in ("mlp", "tabular"):
            raise ValueError("policy must be 'mlp' or 'tabular'")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LearningCurve:
    """Greedy evaluation after every update.

    ``episode_returns`` are undiscounted, ``discounted_returns`` discounted
    from the first step.
    """

    episode_returns: list = field(default_factory=list)
    discounted_returns: list = field(default_factory=list)
    seed: int = 0
    method: str = ""

    def __len__(self) -> int:
        return len(self.episode_returns)


@dataclass
class EpisodeBatch:
    obs: list
    actions: list
    rewards: list
    states: list


def env_gamma(env) -> float:
    if hasattr(env, "cfg"):
        return env.cfg.gamma
    return env.gamma


def env_horizon(env) -> int:
    if hasattr(env, "cfg"):
        return env.cfg.horizon
    if isinstance(env, PotentialShapedEnv):
        return env_horizon(env.env)
    return env.horizon


def run_episodes(env, choose: Callable[[np.ndarray], np.ndarray], n: int,
                 max_steps: int | None = None) -> EpisodeBatch:
    """Roll out ``n`` episodes in lockstep; ``choose`` maps a batch of encodings to actions."""
    states = [env.reset() for _ in range(n)]
    limit = max_steps or env_horizon(env)
    batch = EpisodeBatch([[] for _ in range(n)], [[] for _ in range(n)],
                         [[] for _ in range(n)], [[s] for s in states])
    active = [i for i in range(n) if not states[i].terminal]
    for _ in range(limit):
        if not active:
            break
        obs = np.stack([env.encode(states[i]) for i in active])
        acts = choose(obs)
        still = []
        for j, i in enumerate(active):
            a = int(acts[j])
            nxt, r, done = env.step(states[i], a)
            batch.obs[i].append(obs[j])
            batch.actions[i].append(a)
            batch.rewards[i].append(r)
            batch.states[i].append(nxt)
            states[i] = nxt
            if not done:
                still.append(i)
        active = still
    return batch


def discounted_returns_to_go(rewards, gamma: float) -> np.ndarray:
    g = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        g[t] = acc
    return g


def _returns(batch: EpisodeBatch, gamma: float) -> tuple[float, float]:
    und = [float(np.sum(r)) for r in batch.rewards]
    disc = [float(discounted_returns_to_go(r, gamma)[0]) if r else 0.0 for r in batch.rewards]
    return float(np.mean(und)), float(np.mean(disc))


def make_policy(input_len: int, n_actions: int, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.policy == "tabular":
        return TabularSoftmaxPolicy.zeros(input_len, n_actions)
    return MlpPolicy(MlpPolicyParams.init(input_len, n_actions, cfg.hidden, rng))


def reinforce_train(env, cfg: TrainConfig, eval_env=None, policy=None, method: str = ""):
    """Vanilla policy gradient; returns the trained policy and its learning curve.

    Each update samples ``episodes_per_update`` episodes and ascends
    ``sum_t grad log pi(a_t|s_t) (G_t - b_t)`` averaged over episodes, with
    ``G_t`` the discounted return-to-go and ``b_t`` the batch mean of the
    returns-to-go at step ``t`` (or zero without a baseline).  The curve
    records greedy returns on ``eval_env`` (default ``env``).
    """
    eval_env = eval_env if eval_env is not None else env
    init_rng = np.random.default_rng([cfg.seed, 0])
    act_rng = np.random.default_rng([cfg.seed, 1])
    env.seed(int(np.random.default_rng([cfg.seed, 2]).integers(2 ** 63)))
    eval_env_seed = int(np.random.default_rng([cfg.seed, 3]).integers(2 ** 63))
    if policy is None:
        policy = make_policy(env.encoding_length, env.n_actions, cfg, init_rng)
    gamma = env_gamma(env)
    eval_gamma = env_gamma(eval_env)
    curve = LearningCurve(seed=cfg.seed, method=method)

    def sample(obs):
        p = policy.probs(obs)
        u = act_rng.random(len(p))
        return np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)

    if eval_env is not env:
        eval_env.seed(eval_env_seed)
    for it in range(cfg.iterations):
        batch = run_episodes(env, sample, cfg.episodes_per_update)
        rtg = [discounted_returns_to_go(r, gamma) for r in batch.rewards]
        if cfg.baseline == "mean-return":
            longest = max((len(g) for g in rtg), default=0)
            tot = np.zeros(longest)
            cnt = np.zeros(longest)
            for g in rtg:
                tot[:len(g)] += g
                cnt[:len(g)] += 1
            base = tot / np.maximum(cnt, 1)
            adv = [g - base[:len(g)] for g in rtg]
        else:
            adv = rtg
        obs = [o for ep in batch.obs for o in ep]
        if obs:
            acts = np.array([a for ep in batch.actions for a in ep])
            weights = np.concatenate(adv) / cfg.episodes_per_update
            with np.errstate(over="raise", invalid="raise"):
                try:
                    grad = policy.grad(np.stack(obs), acts, weights)
                    policy.ascend(grad, cfg.learning_rate)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"overflow in policy update at iteration {it}: {exc}") from exc
            if not policy.is_finite():
                raise FloatingPointError(f"non-finite policy parameters after iteration {it}")
        und, disc = evaluate_returns(eval_env, policy, cfg.eval_episodes, seed=None, gamma=eval_gamma)
        curve.episode_returns.append(und)
        curve.discounted_returns.append(disc)
    return policy, curve


def evaluate_returns(env, policy, episodes: int, seed: int | None = None,
                     gamma: float | None = None) -> tuple[float, float]:
    """Mean undiscounted and discounted greedy returns."""
    if seed is not None:
        env.seed(seed)
    gamma = env_gamma(env) if gamma is None else gamma
    batch = run_episodes(env, _greedy_chooser(policy), episodes)
    return _returns(batch, gamma)


def _greedy_chooser(policy):
    if hasattr(policy, "greedy"):
        return policy.greedy
    return policy


def evaluate_policy(env, policy, episodes: int, seed: int = 0) -> tuple[float, float]:
    """Mean and standard error of the discounted return of the greedy policy.

    ``policy`` is a trained policy object (argmax of its action
    probabilities) or a callable mapping a batch of encodings to actions.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    env.seed(seed)
    batch = run_episodes(env, _greedy_chooser(policy), episodes)
    gamma = env_gamma(env)
    disc = np.array([discounted_returns_to_go(r, gamma)[0] if r else 0.0 for r in batch.rewards])
    stderr = float(disc.std(ddof=1) / np.sqrt(len(disc))) if len(disc) > 1 else 0.0
    return float(disc.mean()), stderr


@dataclass
class McEstimate:
    values: np.ndarray
    visited: np.ndarray
    counts: np.ndarray
    sq_sums: np.ndarray = field(repr=False, default=None)

    def stderr(self) -> np.ndarray:
        n = np.maximum(self.counts, 1)
        var = np.maximum(self.sq_sums / n - self.values ** 2, 0.0)
        return np.sqrt(var / np.maximum(n - 1, 1))


def mc_policy_evaluation(env, policy, n_samples: int, seed: int, n_states: int,
                         state_index: Callable | None = None, greedy: bool = False,
                         batch_size: int = 1000) -> McEstimate:
    """First-visit Monte Carlo estimate of ``V^pi`` from ``n_samples`` episodes.

    ``policy`` is a policy object (sampled from, or argmax when ``greedy``) or
    a callable on encoding batches.  ``state_index`` maps a state to its
    ground index; by default ``state.agent_pos`` (tabular environments).
    Unvisited states keep value 0 with ``visited`` false.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    env.seed(seed)
    rng = np.random.default_rng([seed, 1])
    gamma = env_gamma(env)
    index = state_index or (lambda s: s.agent_pos)
    if hasattr(policy, "probs") and not greedy:
        def choose(obs):
            p = policy.probs(obs)
            u = rng.random(len(p))
            return np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)
    else:
        choose = _greedy_chooser(policy)
    sums = np.zeros(n_states)
    sq = np.zeros(n_states)
    counts = np.zeros(n_states, dtype=np.int64)
    done = 0
    while done < n_samples:
        k = min(batch_size, n_samples - done)
        batch = run_episodes(env, choose, k)
        for rewards, states in zip(batch.rewards, batch.states):
            g = discounted_returns_to_go(rewards, gamma)
            seen = set()
            for t in range(len(rewards)):
                i = index(states[t])
                if i in seen:
                    continue
                seen.add(i)
                sums[i] += g[t]
                sq[i] += g[t] ** 2
                counts[i] += 1
        done += k
    visited = counts > 0
    values = np.where(visited, sums / np.maximum(counts, 1), 0.0)
    return McEstimate(values, visited, counts, sq)


def potential_shaped(env, potential, gamma: float | None = None) -> PotentialShapedEnv:
    """Wrapper adding ``gamma * phi(next) - phi(state)`` to rewards.

    ``potential`` is a callable on states or, for tabular environments, an
    array indexed by ground state.
    """
    if gamma is None:
        gamma = env_gamma(env)
    if not callable(potential):
        table = np.asarray(potential, dtype=float)
        if not isinstance(env, TabularEnv):
            raise ValueError("array potentials need a tabular environment; pass a callable instead")
        potential = lambda s, t=table: float(t[s.agent_pos])  # noqa: E731
    return PotentialShapedEnv(env, potential, gamma)


def save_checkpoint(path, policy) -> None:
    """Flat parameter vector preceded by a one-line JSON shape header."""
    if isinstance(policy, MlpPolicy):
        arrays, kind = policy.params.arrays(), "mlp"
    else:
        arrays, kind = [policy.theta], "tabular"
    header = {"kind": kind, "shapes": [list(a.shape) for a in arrays]}
    flat = np.concatenate([a.ravel() for a in arrays])
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        f.write(" ".join(repr(float(v)) for v in flat) + "\n")


def load_checkpoint(path):
    with open(path) as f:
        header = json.loads(f.readline())
        flat = np.array([float(v) for v in f.readline().split()])
    arrays, i = [], 0
    for shape in header["shapes"]:
        size = int(np.prod(shape))
        arrays.append(flat[i:i + size].reshape(shape))
        i += size
    if header["kind"] == "mlp":
        return MlpPolicy(MlpPolicyParams(*arrays))
    return TabularSoftmaxPolicy(arrays[0])


def greedy_actions(policy, encodings: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Greedy action of ``policy`` for every row of ``encodings``."""
    out = [policy.greedy(encodings[i:i + chunk]) for i in range(0, len(encodings), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

