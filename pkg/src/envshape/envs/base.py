"""Shared machinery for the episodic benchmark tasks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from ..abstraction import Abstraction
from ..kernels import SparseKernel
from ..mdp import FiniteMdp

LEFT, RIGHT = 0, 1
ACTION_NAMES = ("left", "right")
DEFAULT_CAP = 10 ** 6


@dataclass(frozen=True)
class EpisodicEnvConfig:
    """Settings for the gathering and catcher tasks.

    ``n_cells`` is the length of the line (gathering) or the number of agent
    columns (catcher).  ``tabular_roots`` selects which states the tabular
    export enumerates: ``"all"`` (every configuration) or ``"reset"`` (only
    those reachable from the reset distribution).
    """

    env_kind: str = "gathering"
    n_cells: int = 15
    horizon: int = 30
    gamma: float = 0.99
    move_success_prob: float = 0.99
    rewards: dict = field(default_factory=lambda: {"star": 1.0, "plus": 0.04, "dot_magnitude": 0.1})
    seed: int = 0
    plus_offset: int = 4
    n_rows: int = 3
    tabular_roots: str = "all"

    def __post_init__(self):
        if self.env_kind not in ("gathering", "catcher"):
            raise ValueError(f"unknown env_kind {self.env_kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 < self.move_success_prob <= 1.0:
            raise ValueError("move_success_prob must lie in (0, 1]")
        if self.n_cells < 3:
            raise ValueError("n_cells must be at least 3")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.tabular_roots not in ("all", "reset"):
            raise ValueError("tabular_roots must be 'all' or 'reset'")
        if self.env_kind == "catcher" and self.n_rows < 2:
            raise ValueError("catcher needs at least 2 rows")
        rewards = {"star": 1.0, "plus": 0.04, "dot_magnitude": 0.1}
        rewards.update(self.rewards or {})
        object.__setattr__(self, "rewards", rewards)
        if not 0 < self.plus_offset < self.n_cells - 1:
            raise ValueError("plus_offset must place the plus strictly inside the line")

    @classmethod
    def gathering(cls, **kw) -> "EpisodicEnvConfig":
        kw.setdefault("n_cells", 15)
        return cls(env_kind="gathering", **kw)

    @classmethod
    def catcher(cls, **kw) -> "EpisodicEnvConfig":
        kw.setdefault("n_cells", 20)
        return cls(env_kind="catcher", **kw)

    def replace(self, **changes) -> "EpisodicEnvConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodicEnvConfig":
        return cls(**d)


@dataclass(frozen=True)
class EpisodicState:
    agent_pos: int
    object_positions: tuple
    steps_elapsed: int = 0
    terminal: bool = False


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)  # (encoding, action, reward, next encoding)
    gamma: float = 0.99

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s[2] for s in self.steps], dtype=float)

    @property
    def discounted_return(self) -> float:
        r = self.rewards
        return float(np.sum(self.gamma ** np.arange(len(r)) * r))

    @property
    def undiscounted_return(self) -> float:
        return float(self.rewards.sum())


class EpisodicEnv:
    """Seeded episodic simulator over hashable configuration keys.

    Subclasses provide the deterministic move consequences in ``_resolve`` and
    the key/state conversions; sampling and the tabular model share them.
    """

    n_actions = 2

    def __init__(self, cfg: EpisodicEnvConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)

    # -- subclass hooks ---------------------------------------------------
    def key(self, state: EpisodicState) -> tuple:
        raise NotImplementedError

    def state_from_key(self, key: tuple, steps_elapsed: int = 0) -> EpisodicState:
        raise NotImplementedError

    def encode_key(self, key: tuple) -> np.ndarray:
        raise NotImplementedError

    def is_terminal_key(self, key: tuple) -> bool:
        raise NotImplementedError

    def _resolve(self, key: tuple, agent_next: int) -> tuple[tuple, str]:
        """Next key and the collected object (``""`` for none) once the agent is at ``agent_next``."""
        raise NotImplementedError

    def reset_distribution(self) -> list[tuple[float, tuple]]:
        raise NotImplementedError

    def all_keys(self) -> Iterable[tuple]:
        raise NotImplementedError

    def abstract_key(self, key: tuple) -> tuple:
        raise NotImplementedError

    @property
    def abstract_shape(self) -> tuple:
        raise NotImplementedError

    def reward_magnitudes(self) -> list[float]:
        raise NotImplementedError

    @property
    def encoding_length(self) -> int:
        raise NotImplementedError

    # -- shared behaviour -------------------------------------------------
    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def encode(self, state: EpisodicState) -> np.ndarray:
        return self.encode_key(self.key(state))

    def _move(self, pos: int, direction: int) -> int:
        step = -1 if direction == LEFT else 1
        return min(max(pos + step, 0), self.cfg.n_cells - 1)

    def expected_reward(self, collected: str) -> float:
        if collected == "dot":
            return 0.0
        return float(self.cfg.rewards[collected]) if collected else 0.0

    def sample_reward(self, collected: str) -> float:
        if collected == "dot":
            mag = float(self.cfg.rewards["dot_magnitude"])
            return mag if self.rng.random() < 0.5 else -mag
        return self.expected_reward(collected)

    def outcomes(self, key: tuple, action: int) -> list[tuple[float, tuple, float]]:
        """``(probability, next key, expected reward)`` for every outcome of ``action``."""
        if self.is_terminal_key(key):
            return [(1.0, key, 0.0)]
        p = self.cfg.move_success_prob
        agent = key[0]
        out = {}
        for prob, direction in ((p, action), (1.0 - p, 1 - action)):
            if prob <= 0.0:
                continue
            nk, collected = self._resolve(key, self._move(agent, direction))
            r = self.expected_reward(collected)
            if nk in out:
                q, rr = out[nk]
                out[nk] = (q + prob, rr + prob * r)
            else:
                out[nk] = (prob, prob * r)
        return [(q, nk, rr / q) for nk, (q, rr) in out.items()]

    def reset(self, seed: int | None = None) -> EpisodicState:
        if seed is not None:
            self.seed(seed)
        dist = self.reset_distribution()
        if len(dist) == 1:
            return self.state_from_key(dist[0][1])
        probs = np.array([p for p, _ in dist])
        i = int(self.rng.choice(len(dist), p=probs / probs.sum()))
        return self.state_from_key(dist[i][1])

    def step(self, state: EpisodicState, action: int) -> tuple[EpisodicState, float, bool]:
        if state.terminal:
            raise RuntimeError("step called on a finished episode")
        if action not in (LEFT, RIGHT):
            raise ValueError(f"invalid action {action}")
        key = self.key(state)
        success = self.rng.random() < self.cfg.move_success_prob
        direction = action if success else 1 - action
        nk, collected = self._resolve(key, self._move(key[0], direction))
        reward = self.sample_reward(collected)
        steps = state.steps_elapsed + 1
        star = collected == "star"
        done = star or steps >= self.cfg.horizon
        nxt = self.state_from_key(nk, steps)
        nxt = replace(nxt, terminal=done)
        return nxt, reward, done

    def rollout(self, policy, seed: int | None = None, max_steps: int | None = None) -> Trajectory:
        """One episode with ``policy(encoding, state) -> action``."""
        state = self.reset(seed)
        traj = Trajectory(gamma=self.cfg.gamma)
        limit = max_steps or self.cfg.horizon
        for _ in range(limit):
            enc = self.encode(state)
            a = int(policy(enc, state))
            nxt, r, done = self.step(state, a)
            traj.steps.append((enc, a, r, self.encode(nxt)))
            state = nxt
            if done:
                break
        return traj


@dataclass
class StateCodec:
    """Bidirectional map between ground indices and environment keys."""

    keys: list
    index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.index is None:
            self.index = {k: i for i, k in enumerate(self.keys)}

    def __len__(self) -> int:
        return len(self.keys)

    def to_index(self, key) -> int:
        return self.index[tuple(key)]

    def to_key(self, i: int) -> tuple:
        return self.keys[i]

    def to_json(self) -> str:
        return json.dumps({"keys": [list(k) for k in self.keys]})

    @classmethod
    def from_json(cls, text: str) -> "StateCodec":
        return cls([tuple(k) for k in json.loads(text)["keys"]])


def to_tabular(env: EpisodicEnv, roots: str | None = None, cap: int = DEFAULT_CAP
               ) -> tuple[FiniteMdp, StateCodec]:
    """Exact stationary model of ``env`` by breadth-first enumeration.

    The episode horizon is not part of the model; star collection leads to an
    absorbing zero-reward state.  ``roots="all"`` starts from every
    configuration, ``"reset"`` only from the reset distribution.  The initial
    distribution is always the reset distribution.
    """
    roots = roots or env.cfg.tabular_roots
    reset = env.reset_distribution()
    start = list(env.all_keys()) if roots == "all" else [k for _, k in reset]
    keys, index = [], {}
    for k in start:
        if k not in index:
            index[k] = len(keys)
            keys.append(k)
            if len(keys) > cap:
                raise ValueError(f"state count exceeds cap {cap}")
    A = env.n_actions
    rows, cols, vals = [], [], []
    reward = []
    i = 0
    # states are appended in discovery order, so rows are filled in index order
    while i < len(keys):
        k = keys[i]
        r_row = []
        for a in range(A):
            acc = 0.0
            for p, nk, r in env.outcomes(k, a):
                j = index.get(nk)
                if j is None:
                    j = index[nk] = len(keys)
                    keys.append(nk)
                    if len(keys) > cap:
                        raise ValueError(f"state count exceeds cap {cap}")
                rows.append(i * A + a)
                cols.append(j)
                vals.append(p)
                acc += p * r
            r_row.append(acc)
        reward.append(r_row)
        i += 1
    n = len(keys)
    trans = sp.csr_matrix((vals, (rows, cols)), shape=(n * A, n))
    mu = np.zeros(n)
    for p, k in reset:
        mu[index[k]] += p
    r_max = max(abs(v) for v in env.reward_magnitudes())
    mdp = FiniteMdp(SparseKernel(trans, A), np.array(reward), mu, env.cfg.gamma, r_max)
    return mdp, StateCodec(keys, index)


def builtin_abstraction(env: EpisodicEnv, codec: StateCodec) -> Abstraction:
    """Keep only (agent position, star position)."""
    shape = env.abstract_shape
    phi = np.array([np.ravel_multi_index(env.abstract_key(k), shape) for k in codec.keys])
    return Abstraction.from_map(phi, int(np.prod(shape)))


def terminal_mask(env: EpisodicEnv, codec: StateCodec) -> np.ndarray:
    return np.array([env.is_terminal_key(k) for k in codec.keys])


def encoding_matrix(env: EpisodicEnv, codec: StateCodec) -> np.ndarray:
    return np.stack([env.encode_key(k) for k in codec.keys])


class TabularEnv:
    """Episodic simulator driven by a tabular MDP.

    Next states are sampled from the transition rows and rewards are the
    expected rewards.  States are ground indices; observations come from
    ``encodings`` (one row per state), defaulting to one-hot indices.
    Episodes end at ``horizon`` or on reaching a state in ``terminal``.
    """

    n_actions: int

    def __init__(self, mdp: FiniteMdp, horizon: int, terminal: np.ndarray | None = None,
                 encodings: np.ndarray | None = None, seed: int = 0):
        self.mdp = mdp
        self.horizon = horizon
        self.n_actions = mdp.n_actions
        self.terminal = np.zeros(mdp.n_states, dtype=bool) if terminal is None else np.asarray(terminal)
        self.encodings = encodings
        self.gamma = mdp.gamma
        self.rng = np.random.default_rng(seed)
        self._mu_cdf = np.cumsum(mdp.initial_dist)

    @property
    def encoding_length(self) -> int:
        return self.mdp.n_states if self.encodings is None else self.encodings.shape[1]

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None) -> EpisodicState:
        if seed is not None:
            self.seed(seed)
        s = int(np.searchsorted(self._mu_cdf, self.rng.random() * self._mu_cdf[-1], side="right"))
        s = min(s, self.mdp.n_states - 1)
        return EpisodicState(agent_pos=s, object_positions=(), steps_elapsed=0,
                             terminal=bool(self.terminal[s]))

    def encode(self, state: EpisodicState) -> np.ndarray:
        s = state.agent_pos
        if self.encodings is None:
            e = np.zeros(self.mdp.n_states)
            e[s] = 1.0
            return e
        return self.encodings[s]

    def step(self, state: EpisodicState, action: int) -> tuple[EpisodicState, float, bool]:
        if state.terminal:
            raise RuntimeError("step called on a finished episode")
        s = state.agent_pos
        r = float(self.mdp.reward[s, action])
        s2 = self.mdp.transition.sample(s, action, self.rng)
        steps = state.steps_elapsed + 1
        done = bool(self.terminal[s2]) or steps >= self.horizon
        return EpisodicState(s2, (), steps, done), r, done


class PotentialShapedEnv:
    """Adds ``gamma * phi(next) - phi(state)`` to every reward; ``phi`` is 0 at terminals."""

    def __init__(self, env, potential, gamma: float):
        self.env = env
        self.potential = potential
        self.gamma = gamma
        self.n_actions = env.n_actions

    def __getattr__(self, name):
        return getattr(self.env, name)

    def _phi(self, state: EpisodicState) -> float:
        if state.terminal and self._absorbed(state):
            return 0.0
        return float(self.potential(state))

    def _absorbed(self, state: EpisodicState) -> bool:
        # horizon cut-offs are not terminal states of the task itself
        env = self.env
        if isinstance(env, TabularEnv):
            return bool(env.terminal[state.agent_pos])
        return env.is_terminal_key(env.key(state))

    def reset(self, seed: int | None = None) -> EpisodicState:
        return self.env.reset(seed)

    def step(self, state, action):
        nxt, r, done = self.env.step(state, action)
        return nxt, r + self.gamma * self._phi(nxt) - self._phi(state), done


def potential_shaped_mdp(m: FiniteMdp, potential: np.ndarray, terminal: np.ndarray | None = None
                         ) -> FiniteMdp:
    """Tabular counterpart of :class:`PotentialShapedEnv`."""
    phi = np.array(potential, dtype=float)
    if terminal is not None:
        phi = np.where(terminal, 0.0, phi)
    reward = m.reward + m.gamma * m.transition.expect(phi) - phi[:, None]
    return m.replace(reward=reward, r_max=max(m.r_max, float(np.abs(reward).max())))


def key_potential(env: EpisodicEnv, codec: StateCodec, values: np.ndarray, default: float = 0.0):
    """Potential callable on simulator states backed by a per-index table."""
    def phi(state: EpisodicState) -> float:
        i = codec.index.get(env.key(state))
        return default if i is None else float(values[i])
    return phi


def index_potential(values: np.ndarray):
    def phi(state: EpisodicState) -> float:
        return float(values[state.agent_pos])
    return phi
