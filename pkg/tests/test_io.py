import json

import numpy as np
import pytest

from envshape import io as eio
from envshape.abstraction import Abstraction
from envshape.mdp import Policy

from conftest import dense, make_random_mdp


class TestMdpDocuments:
    def test_roundtrip_bit_stable(self, rng, tmp_path):
        m = make_random_mdp(rng, n_states=5, n_actions=3)
        eio.save_mdp(tmp_path / "m.json", m)
        back = eio.load_mdp(tmp_path / "m.json")
        np.testing.assert_array_equal(dense(back), dense(m))
        np.testing.assert_array_equal(back.reward, m.reward)
        np.testing.assert_array_equal(back.initial_dist, m.initial_dist)
        assert (back.gamma, back.r_max) == (m.gamma, m.r_max)
        eio.save_mdp(tmp_path / "again.json", back)
        assert (tmp_path / "m.json").read_text() == (tmp_path / "again.json").read_text()

    def test_layout(self, chain_mdp):
        d = eio.mdp_to_dict(chain_mdp)
        assert set(d) == {"n_states", "n_actions", "gamma", "r_max", "rewards", "transitions", "initial_dist"}
        rec = d["transitions"][0]
        assert set(rec) == {"s", "a", "next"} and set(rec["next"][0]) == {"s'", "p"}
        json.dumps(d)

    def test_out_of_range(self, chain_mdp):
        d = eio.mdp_to_dict(chain_mdp)
        d["transitions"][0]["s"] = 99
        with pytest.raises(ValueError):
            eio.mdp_from_dict(d)


class TestOtherDocuments:
    def test_abstraction(self, tmp_path):
        phi = Abstraction.from_map(np.array([0, 1, 1, 2]))
        eio.save_abstraction(tmp_path / "a.json", phi)
        assert eio.load_abstraction(tmp_path / "a.json").map.tolist() == [0, 1, 1, 2]

    def test_abstraction_length_checked(self):
        with pytest.raises(ValueError):
            eio.abstraction_from_dict({"n_ground": 5, "n_abstract": 2, "map": [0, 1, 1]})

    def test_policy(self, tmp_path):
        pi = Policy.stochastic(np.array([[0.25, 0.75], [1.0, 0.0]]))
        eio.save_policy(tmp_path / "p.json", pi)
        np.testing.assert_array_equal(eio.load_policy(tmp_path / "p.json").table, pi.table)
        assert eio.policy_from_dict({"actions": [1, 0]}).kind == "deterministic"
