import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envshape.envs import EpisodicEnvConfig, GatheringEnv, TabularEnv, to_tabular
from envshape.learner import (
    MlpPolicy,
    MlpPolicyParams,
    TabularSoftmaxPolicy,
    TrainConfig,
    discounted_returns_to_go,
    evaluate_policy,
    greedy_actions,
    load_checkpoint,
    mc_policy_evaluation,
    mlp_forward,
    mlp_log_likelihood,
    mlp_log_likelihood_grad,
    potential_shaped,
    reinforce_train,
    run_episodes,
    save_checkpoint,
)
from envshape.mdp import Policy, policy_evaluation

from conftest import make_random_mdp


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestMlp:
    def test_forward_is_distribution(self, rng):
        p = MlpPolicyParams.init(6, 3, hidden=5, rng=rng)
        probs = mlp_forward(p, rng.normal(size=(4, 6)))
        assert probs.shape == (4, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert mlp_forward(p, np.zeros(6)).shape == (3,)

    def test_wrong_length(self, rng):
        with pytest.raises(ValueError):
            mlp_forward(MlpPolicyParams.init(6, 2, rng=rng), np.zeros(5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = MlpPolicyParams.init(4, 3, hidden=5, rng=rng)
        params.w2 = rng.normal(size=params.w2.shape)
        obs = rng.normal(size=(6, 4))
        acts = rng.integers(3, size=6)
        w = rng.normal(size=6)
        f = lambda flat: mlp_log_likelihood(params.with_flat(flat), obs, acts, w)  # noqa: E731
        analytic = mlp_log_likelihood_grad(params, obs, acts, w).flat()
        np.testing.assert_allclose(analytic, numeric_grad(f, params.flat()), atol=1e-5)

    def test_tabular_gradient(self, rng):
        pol = TabularSoftmaxPolicy(rng.normal(size=(3, 2)))
        obs = np.eye(3)[[0, 1, 2, 1]]
        acts = np.array([0, 1, 1, 0])
        w = np.array([1.0, -0.5, 2.0, 0.3])

        def f(flat):
            logp = np.log(TabularSoftmaxPolicy(flat.reshape(3, 2)).probs(obs))
            return float(np.sum(w * logp[np.arange(4), acts]))

        np.testing.assert_allclose(pol.grad(obs, acts, w).ravel(), numeric_grad(f, pol.theta.ravel()), atol=1e-6)

    def test_flat_roundtrip(self, rng):
        p = MlpPolicyParams.init(3, 2, hidden=4, rng=rng)
        q = p.with_flat(p.flat())
        for a, b in zip(p.arrays(), q.arrays()):
            np.testing.assert_array_equal(a, b)


class TestReturns:
    def test_returns_to_go(self):
        np.testing.assert_allclose(discounted_returns_to_go([1.0, 0.0, 2.0], 0.5), [1.5, 1.0, 2.0])
        assert len(discounted_returns_to_go([], 0.9)) == 0

    def test_config_validation(self):
        for kw in [{"baseline": "critic"}, {"policy": "rnn"}, {"episodes_per_update": 0}, {"learning_rate": -1}]:
            with pytest.raises(ValueError):
                TrainConfig(**kw)
        assert TrainConfig.from_dict({"iterations": 3, "unknown": 1}).iterations == 3


def tiny_env(**kw):
    cfg = dict(n_cells=3, plus_offset=1, horizon=10, move_success_prob=1.0)
    cfg.update(kw)
    return GatheringEnv(EpisodicEnvConfig.gathering(**cfg))


class TestTraining:
    def test_learns_to_reach_star(self):
        env = tiny_env()
        cfg = TrainConfig(iterations=150, episodes_per_update=8, learning_rate=0.1, hidden=16, seed=3)
        policy, curve = reinforce_train(env, cfg)
        assert len(curve) == 150
        mean, _ = evaluate_policy(env, policy, 20, seed=1)
        # two steps right to the star: gamma * 1 at best
        assert mean == pytest.approx(0.99, abs=0.05)

    def test_same_seed_same_curve(self):
        cfg = TrainConfig(iterations=5, episodes_per_update=3, hidden=8, seed=7)
        _, a = reinforce_train(tiny_env(), cfg)
        _, b = reinforce_train(tiny_env(), cfg)
        assert a.discounted_returns == b.discounted_returns

    def test_tabular_policy_trains(self):
        env = tiny_env()
        cfg = TrainConfig(iterations=60, episodes_per_update=8, learning_rate=0.5, policy="tabular", seed=0)
        policy, _ = reinforce_train(env, cfg)
        assert evaluate_policy(env, policy, 10)[0] > 0.9

    def test_zero_learning_rate_keeps_params(self, rng):
        env = tiny_env()
        pol = MlpPolicy(MlpPolicyParams.init(env.encoding_length, 2, 8, rng))
        before = pol.params.flat().copy()
        reinforce_train(env, TrainConfig(iterations=3, learning_rate=0.0, hidden=8), policy=pol)
        np.testing.assert_array_equal(before, pol.params.flat())

    def test_baseline_none_differs(self):
        base = TrainConfig(iterations=4, episodes_per_update=4, hidden=8, seed=2, learning_rate=0.5)
        p1, _ = reinforce_train(tiny_env(move_success_prob=0.7), base)
        p2, _ = reinforce_train(tiny_env(move_success_prob=0.7), base.replace(baseline="none"))
        assert not np.allclose(p1.params.flat(), p2.params.flat())

    def test_episodes_stop_at_terminal(self):
        env = tiny_env()
        batch = run_episodes(env, lambda obs: np.ones(len(obs), dtype=int), 5)
        assert all(len(r) <= 2 for r in batch.rewards)


class TestEvaluation:
    def test_mc_matches_exact(self, rng):
        m = make_random_mdp(rng, n_states=4, n_actions=2, gamma=0.7)
        table = rng.dirichlet(np.ones(2), size=4)
        pol = TabularSoftmaxPolicy(np.log(table))
        env = TabularEnv(m, horizon=60, encodings=np.eye(4), seed=0)
        est = mc_policy_evaluation(env, pol, 4000, seed=5, n_states=4)
        exact = policy_evaluation(m, Policy.stochastic(table)).v
        for s in np.flatnonzero(est.visited):
            # the horizon truncates at gamma^60, negligible here
            assert abs(est.values[s] - exact[s]) < 3.5 * est.stderr()[s] + 1e-6

    def test_greedy_mc(self, rng):
        m = make_random_mdp(rng, n_states=3, n_actions=2, gamma=0.5)
        env = TabularEnv(m, horizon=50, encodings=np.eye(3), seed=0)
        actions = np.array([0, 1, 0])
        est = mc_policy_evaluation(env, lambda obs: actions[obs.argmax(axis=1)], 3000, seed=1, n_states=3)
        exact = policy_evaluation(m, Policy.deterministic(actions)).v
        visited = est.visited
        np.testing.assert_allclose(est.values[visited], exact[visited], atol=0.1)

    def test_evaluate_policy_stderr(self):
        env = tiny_env(move_success_prob=0.6)
        mean, se = evaluate_policy(env, lambda obs: np.ones(len(obs), dtype=int), 200)
        assert se > 0 and 0 < mean < 1
        with pytest.raises(ValueError):
            evaluate_policy(env, lambda obs: obs, 0)

    def test_greedy_actions_chunks(self, rng):
        pol = MlpPolicy(MlpPolicyParams.init(5, 2, 4, rng))
        enc = rng.normal(size=(10, 5))
        np.testing.assert_array_equal(greedy_actions(pol, enc, chunk=3), pol.greedy(enc))


class TestPotentialWrapper:
    def test_array_potential(self, rng):
        m = make_random_mdp(rng, n_states=3)
        env = TabularEnv(m, horizon=5, seed=0)
        wrapped = potential_shaped(env, np.array([0.0, 1.0, 2.0]))
        s = env.reset()
        nxt, r, _ = wrapped.step(s, 0)
        assert r == pytest.approx(m.reward[s.agent_pos, 0] + m.gamma * nxt.agent_pos - s.agent_pos)

    def test_array_needs_tabular(self):
        env, _ = tiny_env(), None
        with pytest.raises(ValueError):
            potential_shaped(env, np.zeros(3))

    def test_exported_gathering_potential(self):
        env = tiny_env()
        _, codec = to_tabular(env)
        wrapped = potential_shaped(env, lambda s: float(codec.to_index(env.key(s))))
        assert wrapped.n_actions == 2


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["mlp", "tabular"])
    def test_roundtrip(self, tmp_path, rng, kind):
        if kind == "mlp":
            pol = MlpPolicy(MlpPolicyParams.init(4, 2, 3, rng))
        else:
            pol = TabularSoftmaxPolicy(rng.normal(size=(4, 2)))
        save_checkpoint(tmp_path / "p.txt", pol)
        back = load_checkpoint(tmp_path / "p.txt")
        obs = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(pol.probs(obs), back.probs(obs))
