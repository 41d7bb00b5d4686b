import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from filab.divergences import (
    SPECS,
    divergence_gap,
    divergence_table_entry,
    exact_f_divergence,
    expected_action_divergence,
    get_spec,
    state_action_divergence,
    traj_divergence,
)
from filab.envs import make_bandit, make_gridworld
from filab.errors import DomainError, InputError
from filab.mdp import sample_states_actions
from filab.verify import random_instance

NAMES = list(SPECS)
EXPERT = [0.5, 0.5, 0.0]


def test_table_entries():
    assert divergence_table_entry("KL", "f", 1.0) == 0.0
    assert divergence_table_entry("KL", "f*", 1.0) == 1.0
    assert divergence_table_entry("KL", "f*", 0.3) == pytest.approx(math.exp(-0.7), abs=1e-15)
    assert divergence_table_entry("JS", "g_f", 0.0) == pytest.approx(0.0, abs=1e-15)
    assert divergence_table_entry("TV", "g_f", 0.0) == 0.0
    assert divergence_table_entry("RKL", "g_f", 0.0) == -1.0


@pytest.mark.parametrize(
    "name,component,arg",
    [("KL", "f", -1.0), ("RKL", "f", 0.0), ("RKL", "f*", 0.5), ("TV", "f*", 0.7), ("JS", "f*", 1.0)],
)
def test_table_domain_errors(name, component, arg):
    with pytest.raises(DomainError, match=component.replace("*", r"\*")):
        divergence_table_entry(name, component, arg)


def test_unknown_spec():
    with pytest.raises(InputError):
        get_spec("hellinger")


def test_exact_examples():
    assert exact_f_divergence(EXPERT, [1, 0, 0], "RKL") == pytest.approx(math.log(2), abs=1e-15)
    assert exact_f_divergence(EXPERT, [0.28, 0.28, 0.44], "KL") == pytest.approx(math.log(0.5 / 0.28), abs=1e-15)
    assert exact_f_divergence(EXPERT, [0.28, 0.28, 0.44], "RKL") == math.inf
    assert exact_f_divergence(EXPERT, [1, 0, 0], "KL") == math.inf
    for name in NAMES:
        assert exact_f_divergence(EXPERT, EXPERT, name) == 0.0


def test_zero_mass_conventions_match_oracle():
    p, q = [0.5, 0.5, 0.0], [0.0, 0.6, 0.4]
    for name in NAMES:
        assert exact_f_divergence(p, q, name) == pytest.approx(oracles.divergence(name, p, q), abs=1e-15)
    assert exact_f_divergence(p, q, "JS") == pytest.approx(0.5 * math.log(2) + 0.4 * math.log(2) + 0.6 * oracles.f_scalar("JS", 0.5 / 0.6))
    assert exact_f_divergence(p, q, "TV") == pytest.approx(0.5)


def test_input_errors():
    with pytest.raises(InputError):
        exact_f_divergence([0.5, 0.5], [1.0, 0.0, 0.0], "KL")
    with pytest.raises(InputError):
        exact_f_divergence([0.5, 0.6], [0.5, 0.5], "KL")


full_support = st.integers(2, 6).flatmap(
    lambda k: st.tuples(
        st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k),
        st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k),
    )
)


def _norm(x):
    x = np.asarray(x, dtype=float)
    return x / x.sum()


@settings(max_examples=200, deadline=None)
@given(full_support)
def test_divergence_properties(pair):
    p, q = _norm(pair[0]), _norm(pair[1])
    vals = {n: exact_f_divergence(p, q, n) for n in NAMES}
    for n, v in vals.items():
        assert v >= -1e-12
        assert v == pytest.approx(oracles.divergence(n, p, q), rel=1e-9, abs=1e-12)
    assert vals["TV"] == pytest.approx(exact_f_divergence(q, p, "TV"), abs=1e-12)
    assert vals["JS"] == pytest.approx(exact_f_divergence(q, p, "JS"), abs=1e-12)
    assert vals["KL"] == pytest.approx(exact_f_divergence(q, p, "RKL"), abs=1e-12)
    for n in NAMES:
        assert exact_f_divergence(p, p, n) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 20), st.floats(0.01, 20), st.floats(0, 1))
def test_generator_convex_and_normalised(u1, u2, lam):
    for spec in SPECS.values():
        assert abs(float(spec.f(np.float64(1.0)))) <= 1e-15
        mid = float(spec.f(np.float64(lam * u1 + (1 - lam) * u2)))
        assert mid <= lam * float(spec.f(np.float64(u1))) + (1 - lam) * float(spec.f(np.float64(u2))) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30))
def test_activation_in_conjugate_domain(v):
    for spec in SPECS.values():
        assert bool(spec.in_conj_domain(spec.activation(np.float64(v))))
    assert abs(float(SPECS["TV"].activation(np.float64(v)))) <= 0.5


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 10), st.floats(-5, 5))
def test_fenchel_young(u, v):
    for spec in SPECS.values():
        t = spec.activation(np.float64(v))
        fu = float(spec.f(np.float64(u)))
        assert fu >= u * float(t) - float(spec.f_conjugate(t)) - 1e-9
        if spec.name != "TV":
            t_star = spec.f_prime(np.float64(u))
            assert fu == pytest.approx(u * float(t_star) - float(spec.f_conjugate(t_star)), abs=1e-9)


def test_traj_divergence_matches_bruteforce(small_instances):
    for mdp, expert, learner in small_instances[:12]:
        if mdp.horizon > 3:
            continue
        for n in NAMES:
            want = oracles.traj_divergence(n, mdp.transition, mdp.initial, mdp.horizon, expert.probs, learner.probs)
            assert traj_divergence(mdp, expert, learner, n) == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_horizon_one_equality():
    gen = np.random.default_rng(5)
    for _ in range(20):
        mdp, expert, learner = random_instance(gen, horizon=1)
        for n in NAMES:
            assert abs(traj_divergence(mdp, expert, learner, n) - state_action_divergence(mdp, expert, learner, n)) <= 1e-10
            assert abs(divergence_gap(mdp, expert, learner, n)) <= 1e-10


def test_bandit_trajectory_value():
    env = make_bandit()
    assert traj_divergence(env.mdp, env.expert.policy, env.named_policies["A"], "RKL") == pytest.approx(math.log(2))


def test_learner_equals_expert_is_zero(small_instances):
    mdp, expert, _ = small_instances[0]
    for n in NAMES:
        assert traj_divergence(mdp, expert, expert, n) == 0.0
        assert state_action_divergence(mdp, expert, expert, n) == 0.0
        assert expected_action_divergence(mdp, expert, expert, n) == 0.0
        assert divergence_gap(mdp, expert, expert, n) == 0.0


def test_thm1_rkl_equality_tv_chain(small_instances):
    for mdp, expert, learner in small_instances:
        H = mdp.horizon
        for n in NAMES:
            assert traj_divergence(mdp, expert, learner, n) >= state_action_divergence(mdp, expert, learner, n) - 1e-9
            assert divergence_gap(mdp, expert, learner, n) >= -1e-9
        rkl = traj_divergence(mdp, expert, learner, "RKL")
        assert abs(rkl - H * expected_action_divergence(mdp, expert, learner, "RKL")) <= 1e-9
        tv = traj_divergence(mdp, expert, learner, "TV")
        mid = H * expected_action_divergence(mdp, expert, learner, "TV")
        assert tv <= mid + 1e-9
        assert mid <= H * math.sqrt(expected_action_divergence(mdp, expert, learner, "KL")) + 1e-9


def test_gap_is_inf_when_trajectory_divergence_is():
    env = make_bandit()
    assert divergence_gap(env.mdp, env.expert.policy, env.named_policies["M"], "RKL") == math.inf


def test_gridworld_state_action_vs_monte_carlo():
    env = make_gridworld(0.0, 0.0)
    mode = env.named_policies["L"]
    assert state_action_divergence(env.mdp, env.expert.policy, mode, "KL") == math.inf
    # the mode matches the expert's mass on 4 of 8 steps (terminal) and doubles it on the other 4
    assert state_action_divergence(env.mdp, env.expert.policy, mode, "RKL") == pytest.approx(math.log(2) / 2, abs=1e-12)
    n = 40_000
    rng = np.random.default_rng(0)
    se, ee = sample_states_actions(env.mdp, env.expert.probs, n, rng)
    sl, al = sample_states_actions(env.mdp, mode.probs, n, rng)
    pe = np.zeros((9, 4))
    pl = np.zeros((9, 4))
    np.add.at(pe, (se[:, :-1], ee), 1.0)
    np.add.at(pl, (sl[:, :-1], al), 1.0)
    pe /= pe.sum()
    pl /= pl.sum()
    est = oracles.divergence("RKL", pe, pl)
    want = state_action_divergence(env.mdp, env.expert.policy, mode, "RKL")
    # delta-method standard error of sum pl log(pl / pe) is below 0.01 at this n
    assert abs(est - want) <= 0.03
