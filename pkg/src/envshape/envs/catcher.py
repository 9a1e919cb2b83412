"""Catcher: the agent slides along the bottom while a star and a plus fall."""

from __future__ import annotations

import itertools

import numpy as np

from .base import EpisodicEnv, EpisodicEnvConfig, EpisodicState


class CatcherEnv(EpisodicEnv):
    """Objects live on an ``n_rows x n_cells`` grid, cell index ``row * n_cells + col``.

    Each step the agent moves, then every object falls one row; an object
    already on the bottom row goes back to its spawn cell in the top row.  An
    object landing on the bottom row in the agent's column is caught.  The
    plus spawns in column ``plus_offset``, the star in column ``n_cells - 2``.
    Catching the star ends the episode; if both land at once only the star
    counts.
    """

    def __init__(self, cfg: EpisodicEnvConfig | None = None):
        cfg = cfg or EpisodicEnvConfig.catcher()
        if cfg.env_kind != "catcher":
            raise ValueError("CatcherEnv needs env_kind='catcher'")
        super().__init__(cfg)
        self.n = cfg.n_cells
        self.rows = cfg.n_rows
        self.n_object_cells = self.rows * self.n
        self.start = 0
        self.star_spawn = self.n - 2
        self.plus_spawn = cfg.plus_offset

    def key(self, state: EpisodicState) -> tuple:
        star, plus = state.object_positions
        return (state.agent_pos, star, plus)

    def state_from_key(self, key, steps_elapsed: int = 0) -> EpisodicState:
        agent, star, plus = (int(v) for v in key)
        return EpisodicState(agent, (star, plus), steps_elapsed, self.is_terminal_key(key))

    def encode_key(self, key) -> np.ndarray:
        agent, star, plus = key
        n, c = self.n, self.n_object_cells
        e = np.zeros(n + 2 * c)
        e[agent] = 1.0
        e[n + star] = 1.0
        e[n + c + plus] = 1.0
        return e

    @property
    def encoding_length(self) -> int:
        return self.n + 2 * self.n_object_cells

    def _on_bottom(self, cell: int) -> bool:
        return cell // self.n == self.rows - 1

    def is_terminal_key(self, key) -> bool:
        agent, star, _ = key
        return self._on_bottom(star) and star % self.n == agent

    def _fall(self, cell: int, spawn: int) -> int:
        return spawn if self._on_bottom(cell) else cell + self.n

    def _resolve(self, key, agent_next):
        _, star, plus = key
        star = self._fall(star, self.star_spawn)
        plus = self._fall(plus, self.plus_spawn)
        nk = (agent_next, star, plus)
        if self._on_bottom(star) and star % self.n == agent_next:
            return nk, "star"
        if self._on_bottom(plus) and plus % self.n == agent_next:
            return nk, "plus"
        return nk, ""

    def reset_distribution(self):
        return [(1.0, (self.start, self.star_spawn, self.plus_spawn))]

    def all_keys(self):
        return itertools.product(range(self.n), range(self.n_object_cells), range(self.n_object_cells))

    def abstract_key(self, key):
        return (key[0], key[1])

    @property
    def abstract_shape(self):
        return (self.n, self.n_object_cells)

    def reward_magnitudes(self):
        r = self.cfg.rewards
        return [r["star"], r["plus"]]
