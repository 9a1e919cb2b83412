import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from envshape.abstraction import Abstraction, lift_policy
from envshape.bounds import (
    BOUND_FOR_MODE,
    BoundInputs,
    lemma2_bound,
    lemma3_bound,
    lemma5_bound,
    theorem1,
    theorem1_bound,
    theorem2_bound,
    theorem3_bound,
)
from envshape.guarantees import (
    LEMMA_IDS,
    format_reports,
    perturbed_pair,
    random_abstraction,
    random_mdp,
    random_transitions,
    soften,
    verify_all,
    verify_lemma,
)
from envshape.mdp import (
    FiniteMdp,
    Policy,
    equivalence_gap,
    evaluate_probs,
    policy_iteration,
    policy_l1_distance,
    suboptimality_gap,
)
from envshape.shaping import ShapingConfig, compress, lift_full, teach_rewards

from conftest import exact_values

inputs = st.builds(
    BoundInputs,
    eps_vstar=st.floats(0, 10),
    eps_opt=st.floats(0, 10),
    delta=st.floats(0.01, 5),
    gamma=st.floats(0.05, 0.99),
    r_max=st.floats(0.1, 10),
    r_phi_max=st.floats(0, 10),
    beta_r=st.floats(0, 2),
    beta_t=st.floats(0, 2),
)


class TestFormulas:
    def test_theorem1_value(self):
        b = BoundInputs(eps_vstar=0.5, eps_opt=0.1, delta=0.2, gamma=0.9, r_max=1.0)
        assert theorem1_bound(b) == pytest.approx(0.5 + 10 * 0.5)

    def test_theorem1_constant_flag(self):
        b = BoundInputs(eps_vstar=0.0, eps_opt=0.1, delta=0.5, gamma=0.5, r_max=1.0)
        res = theorem1(b)
        assert res.c_applies
        assert res.c == pytest.approx(2 * 2 / 0.5)
        assert not theorem1(b.with_(eps_vstar=100.0)).c_applies

    def test_extra_terms(self):
        b = BoundInputs(eps_vstar=0.0, eps_opt=0.0, delta=1.0, gamma=0.5, r_max=1.0,
                        r_phi_max=2.0, beta_r=0.1, beta_t=0.1)
        # 2 * 0.5 * 0.1 * 2 / 0.25 = 0.8, scaled by r_max / (1 - gamma) / delta = 2
        assert theorem2_bound(b) == pytest.approx(1.6)
        # 2 * 0.1 * 2 / 0.5 = 0.8, scaled by 2
        assert theorem3_bound(b) == pytest.approx(1.6)

    def test_lemma3(self):
        assert lemma3_bound(0.1, 0.2, 1.0, 0.5) == pytest.approx(0.2 + 0.4)

    def test_validation(self):
        with pytest.raises(ValueError):
            BoundInputs(gamma=1.0)
        with pytest.raises(ValueError):
            BoundInputs(eps_opt=-1.0)
        with pytest.raises(ValueError):
            theorem1_bound(BoundInputs(delta=0.0))
        with pytest.raises(ValueError):
            lemma5_bound(0.1, 0.0)

    def test_mode_table(self):
        assert BOUND_FOR_MODE["full"] is theorem1_bound
        assert set(BOUND_FOR_MODE) == {"full", "reward_only", "dynamics_only"}


class TestBoundProperties:
    @settings(max_examples=200)
    @given(b=inputs, h=st.floats(1e-3, 1.0))
    def test_monotonicity(self, b, h):
        t1 = theorem1_bound(b)
        assert theorem1_bound(b.with_(eps_vstar=b.eps_vstar + h)) >= t1
        assert theorem1_bound(b.with_(eps_opt=b.eps_opt + h)) >= t1
        assert theorem1_bound(b.with_(delta=b.delta + h)) <= t1
        assert theorem2_bound(b.with_(beta_t=b.beta_t + h)) >= theorem2_bound(b)
        assert theorem3_bound(b.with_(beta_r=b.beta_r + h)) >= theorem3_bound(b)

    @settings(max_examples=200)
    @given(b=inputs)
    def test_consistency(self, b):
        t1 = theorem1_bound(b)
        assert theorem2_bound(b.with_(beta_t=0.0)) == pytest.approx(t1)
        assert theorem3_bound(b.with_(beta_r=0.0)) == pytest.approx(t1)


class TestPolicyDistanceBound:
    def test_counterexample_for_large_discount(self):
        # state 0 keeps paying r_max by staying; leaving reaches a zero absorbing state
        t = np.zeros((2, 2, 2))
        t[0, 0, 0] = 1.0
        t[0, 1, 1] = 1.0
        t[1, :, 1] = 1.0
        m = FiniteMdp(t, [[1.0, 0.0], [0.0, 0.0]], [1.0, 0.0], 0.9, 1.0)
        eps = 0.01
        stay = Policy.deterministic([0, 0])
        leaky = Policy.stochastic([[1 - eps, eps], [1.0, 0.0]])
        gap = np.max(np.abs(evaluate_probs(m, stay.probs(2)) - evaluate_probs(m, leaky.probs(2))))
        bound = lemma2_bound(policy_l1_distance(stay, leaky), m.r_max, m.gamma)
        assert gap > bound
        # the value gap scales like 1/(1-gamma)^2, not 1/(1-gamma)
        assert gap == pytest.approx(eps / (1 - 0.9 * (1 - eps)) / (1 - 0.9), rel=1e-9)

    def test_holds_for_small_discount(self, rng):
        for _ in range(300):
            m = random_mdp(rng, gamma=0.5)
            p1 = Policy.stochastic(rng.dirichlet(np.ones(m.n_actions), size=m.n_states))
            p2 = Policy.stochastic(rng.dirichlet(np.ones(m.n_actions), size=m.n_states))
            gap = np.max(np.abs(evaluate_probs(m, p1.probs(m.n_actions)) - evaluate_probs(m, p2.probs(m.n_actions))))
            assert gap <= lemma2_bound(policy_l1_distance(p1, p2), m.r_max, m.gamma) + 1e-8


class TestGenerators:
    def test_rows_are_distributions(self, rng):
        t = random_transitions(rng, 6, 3, sparsity=3)
        np.testing.assert_allclose(t.sum(axis=2), 1.0)
        assert np.all((t > 0).sum(axis=2) <= 3)

    def test_random_mdp_ranges(self, rng):
        for _ in range(50):
            m = random_mdp(rng)
            assert 2 <= m.n_states <= 12
            assert 2 <= m.n_actions <= 4
            assert m.gamma in (0.5, 0.9, 0.95)
            assert np.all((m.reward >= 0) & (m.reward <= m.r_max))

    def test_perturbation_respects_betas(self, rng):
        for _ in range(50):
            m = random_mdp(rng)
            br, bt = rng.uniform(0, 0.3), rng.uniform(0, 0.5)
            gap = equivalence_gap(m, perturbed_pair(rng, m, br, bt))
            assert gap.beta_r <= br + 1e-12
            assert gap.beta_t <= bt + 1e-12

    def test_soften_endpoints(self):
        pi = Policy.deterministic([1, 0])
        np.testing.assert_allclose(soften(pi, 2, 0.0).table, [[0, 1], [1, 0]])
        np.testing.assert_allclose(soften(pi, 2, 1.0).table, 0.5)

    def test_abstraction_surjective(self, rng):
        for _ in range(20):
            phi = random_abstraction(rng, 7)
            assert phi.class_sizes.min() >= 1


class TestMarginDistanceBound:
    def test_other_deterministic_policies_are_far(self, rng):
        for _ in range(30):
            m = random_mdp(rng, n_states=int(rng.integers(2, 5)), n_actions=2)
            target = rng.integers(0, 2, size=m.n_states)
            delta = 0.2
            taught, _ = teach_rewards(m, Policy.deterministic(target), ShapingConfig(delta=delta))
            vstar = policy_iteration(taught).v
            for acts in itertools.product(range(2), repeat=m.n_states):
                if np.array_equal(acts, target):
                    continue
                eps_opt = np.max(vstar - exact_values(taught, np.array(acts)))
                assert eps_opt >= delta - 1e-6
                dist = policy_l1_distance(Policy.deterministic(target), Policy.deterministic(acts))
                assert dist <= 2 * lemma5_bound(eps_opt, delta) + 1e-8

    def test_distance_bound_without_factor_two_can_fail(self):
        # one state, margin exactly delta, small discount: the other action is
        # only delta / (1 - gamma) worse, yet its one-hot rule is at distance 2
        delta, gamma = 0.1, 0.1
        m = FiniteMdp(np.ones((1, 2, 1)), [[delta, 0.0]], [1.0], gamma, 1.0)
        eps_opt = suboptimality_gap(m, Policy.deterministic([1]))
        assert eps_opt == pytest.approx(delta / (1 - gamma))
        assert policy_l1_distance(Policy.deterministic([0]), Policy.deterministic([1])) > lemma5_bound(eps_opt, delta)


class TestVerifiers:
    @pytest.mark.parametrize("lemma", LEMMA_IDS)
    def test_no_violations(self, lemma):
        rep = verify_lemma(lemma, trials=100, seed=1)
        assert rep.violations == 0
        assert rep.trials == 100
        assert rep.worst_case is None
        assert rep.min_slack >= -1e-8

    def test_deterministic(self):
        a = verify_lemma("theorem1", trials=20, seed=5)
        b = verify_lemma("theorem1", trials=20, seed=5)
        assert a.as_dict() == b.as_dict()

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            verify_lemma("lemma9", 1)

    def test_theorem1_identity_abstraction(self, rng):
        for _ in range(20):
            m = random_mdp(rng)
            phi = Abstraction.identity(m.n_states)
            target = Policy.deterministic(policy_iteration(m).q.argmax(axis=1))
            taught, _ = teach_rewards(compress(m, phi), target, ShapingConfig(delta=0.1))
            shaped = lift_full(taught, phi, m)
            pi = soften(lift_policy(target, phi), m.n_actions, rng.uniform())
            eps_opt = suboptimality_gap(shaped, pi)
            b = BoundInputs(eps_vstar=suboptimality_gap(m, target), eps_opt=eps_opt, delta=0.1,
                            gamma=m.gamma, r_max=m.r_max)
            assert suboptimality_gap(m, pi) <= theorem1_bound(b) + 1e-8

    def test_table_format(self):
        text = format_reports(verify_all(trials=3, which="lemma3"))
        assert text.splitlines()[0].split()[:3] == ["lemma", "trials", "violations"]
        assert text.splitlines()[1].startswith("lemma3")
