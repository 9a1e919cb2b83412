"""Object gathering on a line: a far star, a nearby respawning plus and a noisy dot."""

from __future__ import annotations

import itertools

import numpy as np

from .base import EpisodicEnv, EpisodicEnvConfig, EpisodicState

ABSENT = -1


class GatheringEnv(EpisodicEnv):
    """Agent starts at cell 0, the star sits at the far end, the plus ``plus_offset`` cells in.

    Keys are ``(agent, star, plus, dot)``; a collected dot is stored at the
    agent's own cell, which a present dot never occupies.  Entering the star
    cell ends the episode.  When several objects share the agent's new cell
    only one is collected, in the order star, dot, plus.
    """

    def __init__(self, cfg: EpisodicEnvConfig | None = None):
        cfg = cfg or EpisodicEnvConfig.gathering()
        if cfg.env_kind != "gathering":
            raise ValueError("GatheringEnv needs env_kind='gathering'")
        super().__init__(cfg)
        self.n = cfg.n_cells
        self.start = 0
        self.star_start = self.n - 1
        self.plus_start = self.start + cfg.plus_offset

    def key(self, state: EpisodicState) -> tuple:
        star, plus, dot = state.object_positions
        if dot == ABSENT:
            dot = state.agent_pos
        return (state.agent_pos, star, plus, dot)

    def state_from_key(self, key, steps_elapsed: int = 0) -> EpisodicState:
        agent, star, plus, dot = (int(v) for v in key)
        if dot == agent:
            dot = ABSENT
        return EpisodicState(agent, (star, plus, dot), steps_elapsed, agent == star)

    def encode_key(self, key) -> np.ndarray:
        agent, star, plus, dot = key
        n = self.n
        e = np.zeros(4 * n)
        e[agent] = 1.0
        e[n + star] = 1.0
        e[2 * n + plus] = 1.0
        if dot != agent:
            e[3 * n + dot] = 1.0
        return e

    @property
    def encoding_length(self) -> int:
        return 4 * self.n

    def is_terminal_key(self, key) -> bool:
        return key[0] == key[1]

    def _resolve(self, key, agent_next):
        _, star, plus, dot = key
        dot_present = dot != key[0]
        new_dot = dot if dot_present else agent_next
        if agent_next == star:
            return (agent_next, star, plus, new_dot), "star"
        if dot_present and agent_next == dot:
            return (agent_next, star, plus, agent_next), "dot"
        if agent_next == plus:
            return (agent_next, star, plus, new_dot), "plus"
        return (agent_next, star, plus, new_dot), ""

    def reset_distribution(self):
        cells = [c for c in range(self.n) if c != self.start]
        p = 1.0 / len(cells)
        return [(p, (self.start, self.star_start, self.plus_start, c)) for c in cells]

    def all_keys(self):
        return itertools.product(range(self.n), repeat=4)

    def abstract_key(self, key):
        return (key[0], key[1])

    @property
    def abstract_shape(self):
        return (self.n, self.n)

    def reward_magnitudes(self):
        r = self.cfg.rewards
        return [r["star"], r["plus"], r["dot_magnitude"]]
