import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from filab.errors import InputError, ResourceError
from filab.mdp import (
    FiniteMdp,
    TabularPolicy,
    Trajectory,
    check_avg_state_tally,
    enumerate_trajectories,
    occupancy,
    sample_states_actions,
    sample_trajectory,
    traj_probability,
)
from filab.verify import random_instance


def chain():
    # s0 -> s1 surely, s1 absorbing
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    return FiniteMdp(P, [1.0, 0.0], 2)


def test_validation():
    with pytest.raises(InputError):
        FiniteMdp(np.full((2, 1, 2), 0.4), [1, 0], 1)
    with pytest.raises(InputError):
        FiniteMdp(np.full((2, 1, 2), 0.5), [0.5, 0.4], 1)
    with pytest.raises(InputError):
        FiniteMdp(np.full((2, 1, 2), 0.5), [1, 0], 0)
    with pytest.raises(InputError):
        TabularPolicy([[0.5, 0.6]])
    with pytest.raises(InputError):
        TabularPolicy([[1.5, -0.5]])


def test_traj_probability_examples():
    mdp = FiniteMdp(np.ones((1, 1, 1)), [1.0], 1)
    assert traj_probability(mdp, TabularPolicy([[1.0]]), Trajectory((0, 0), (0,))) == 1.0
    # rho0 = (1, 0), uniform over 2 actions, action a moves to state a
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = P[:, 1, 1] = 1.0
    mdp = FiniteMdp(P, [1.0, 0.0], 1)
    pi = TabularPolicy.uniform(2, 2)
    assert traj_probability(mdp, pi, Trajectory((0, 0), (0,))) == 0.5
    assert traj_probability(mdp, pi, Trajectory((0, 1), (1,))) == 0.5
    with pytest.raises(InputError):
        traj_probability(mdp, pi, Trajectory((0, 1, 1), (1,)))


def test_occupancy_chain():
    occ = occupancy(chain(), TabularPolicy([[1.0], [1.0]]))
    np.testing.assert_allclose(occ.per_time_state, [[1, 0], [0, 1]])
    np.testing.assert_allclose(occ.avg_state, [0.5, 0.5])
    assert check_avg_state_tally(chain(), TabularPolicy([[1.0], [1.0]]))


def test_single_state_occupancy():
    mdp = FiniteMdp(np.ones((1, 3, 1)), [1.0], 5)
    occ = occupancy(mdp, TabularPolicy([[0.2, 0.3, 0.5]]))
    np.testing.assert_allclose(occ.avg_state, [1.0])
    np.testing.assert_allclose(occ.state_action, [[0.2, 0.3, 0.5]])


def test_avg_state_matches_brute_force_tally(small_instances):
    for mdp, expert, _ in small_instances:
        if mdp.horizon > 3:
            continue
        tally = oracles.avg_state_by_tally(mdp.transition, mdp.initial, mdp.horizon, expert.probs)
        np.testing.assert_allclose(occupancy(mdp, expert).avg_state, tally, atol=1e-10)
        assert check_avg_state_tally(mdp, expert)


def test_enumeration_examples():
    mdp = FiniteMdp(np.ones((1, 3, 1)), [1.0], 1)
    out = enumerate_trajectories(mdp, TabularPolicy([[0.2, 0.0, 0.8]]))
    assert sorted(p for _, p in out) == [0.2, 0.8]
    det = enumerate_trajectories(chain(), TabularPolicy([[1.0], [1.0]]))
    assert len(det) == 1 and det[0][1] == 1.0
    gen = np.random.default_rng(3)
    P = gen.dirichlet(np.ones(2), size=(2, 2))
    mdp = FiniteMdp(P, gen.dirichlet(np.ones(2)), 2)
    out = enumerate_trajectories(mdp, TabularPolicy(gen.dirichlet(np.ones(2), size=2)))
    assert len(out) == 32  # (S A)^H * S start states = 2 * 4^2
    assert abs(sum(p for _, p in out) - 1.0) <= 1e-12


def test_enumeration_cap():
    mdp = FiniteMdp(np.full((3, 3, 3), 1 / 3), np.full(3, 1 / 3), 4)
    with pytest.raises(ResourceError, match="100"):
        enumerate_trajectories(mdp, TabularPolicy.uniform(3, 3), cap=100)


def test_enumeration_matches_bruteforce(small_instances):
    for mdp, expert, _ in small_instances[:15]:
        if mdp.horizon > 3:
            continue
        table = oracles.trajectory_table(mdp.transition, mdp.initial, mdp.horizon, expert.probs)
        for traj, p in enumerate_trajectories(mdp, expert):
            assert abs(table[(traj.states, traj.actions)] - p) <= 1e-15


def test_sampling_deterministic_and_unbiased():
    gen = np.random.default_rng(11)
    mdp, pi, _ = random_instance(gen, horizon=4)
    assert sample_trajectory(mdp, pi, 5) == sample_trajectory(mdp, pi, 5)
    n = 100_000 // mdp.horizon
    states, _ = sample_states_actions(mdp, pi.probs, n, np.random.default_rng(0))
    freq = np.bincount(states[:, :-1].ravel(), minlength=mdp.num_states) / states[:, :-1].size
    avg = occupancy(mdp, pi).avg_state
    # visits within a trajectory are correlated; bound by per-trajectory standard error
    se = np.sqrt(avg * (1 - avg) / n)
    assert np.all(np.abs(freq - avg) <= 3 * se + 1e-12)


def test_sample_deterministic_mdp():
    tr = sample_trajectory(chain(), TabularPolicy([[1.0], [1.0]]), 99)
    assert tr == Trajectory((0, 1, 1), (0, 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_occupancy_invariants(seed):
    mdp, pi, _ = random_instance(np.random.default_rng(seed))
    occ = occupancy(mdp, pi)
    np.testing.assert_allclose(occ.per_time_state.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(occ.avg_state, occ.per_time_state.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(occ.state_action.sum(axis=1), occ.avg_state, atol=1e-12)
    out = enumerate_trajectories(mdp, pi)
    assert all(p > 0 for _, p in out)
    assert abs(sum(p for _, p in out) - 1.0) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_feature_count_identity(seed):
    gen = np.random.default_rng(seed)
    mdp, pi, _ = random_instance(gen)
    phi = gen.normal(size=(mdp.num_states, mdp.num_actions))
    lhs = sum(p * sum(phi[s, a] for s, a in zip(t.states, t.actions)) for t, p in enumerate_trajectories(mdp, pi))
    rhs = mdp.horizon * np.sum(occupancy(mdp, pi).state_action * phi)
    assert abs(lhs - rhs) <= 1e-9
