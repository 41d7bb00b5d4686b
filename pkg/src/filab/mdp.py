"""Exact finite-horizon MDP machinery.

Time indexing: actions a_1..a_H are taken from states s_0..s_{H-1}.  The
per-time state distribution ``per_time_state[t]`` is the law of s_t for
t = 0..H-1, with ``per_time_state[0]`` equal to the initial distribution.
The final state s_H never enters the average occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from filab.errors import InputError, ResourceError

PROB_TOL = 1e-12
DEFAULT_BRANCH_CAP = 10**7


def _as_prob_array(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    if np.any(arr < 0):
        raise InputError(f"{name} has negative entries")
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Finite MDP with a fixed horizon.

    ``transition[s, a, s2]`` is P(s2 | s, a); ``initial`` is the start
    distribution; ``horizon`` counts actions per episode.
    """

    transition: np.ndarray
    initial: np.ndarray
    horizon: int

    def __post_init__(self):
        P = _as_prob_array(self.transition, "transition")
        rho0 = _as_prob_array(self.initial, "initial")
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InputError(f"transition must have shape (S, A, S), got {P.shape}")
        if rho0.shape != (P.shape[0],):
            raise InputError(f"initial must have shape ({P.shape[0]},), got {rho0.shape}")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > PROB_TOL:
            raise InputError("transition slices must sum to 1")
        if abs(rho0.sum() - 1.0) > PROB_TOL:
            raise InputError("initial distribution must sum to 1")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InputError(f"horizon must be a positive integer, got {self.horizon}")
        P.setflags(write=False)
        rho0.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", rho0)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Stochastic Markov policy stored as a (state, action) probability table."""

    probs: np.ndarray

    def __post_init__(self):
        pi = _as_prob_array(self.probs, "policy")
        if pi.ndim != 2:
            raise InputError(f"policy table must be 2-D, got shape {pi.shape}")
        if np.max(np.abs(pi.sum(axis=1) - 1.0)) > PROB_TOL:
            raise InputError("policy rows must sum to 1")
        pi.setflags(write=False)
        object.__setattr__(self, "probs", pi)

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        table = np.zeros((actions.size, num_actions))
        table[np.arange(actions.size), actions] = 1.0
        return cls(table)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def tabular(self) -> "TabularPolicy":
        return self


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise InputError("a trajectory needs exactly one more state than actions")


@dataclass(frozen=True, eq=False)
class OccupancyMeasures:
    per_time_state: np.ndarray
    avg_state: np.ndarray
    state_action: np.ndarray = field(repr=False)


def _check_pair(mdp: FiniteMdp, policy: TabularPolicy) -> np.ndarray:
    pi = policy.tabular().probs
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise InputError(
            f"policy shape {pi.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})"
        )
    return pi


def traj_probability(mdp: FiniteMdp, policy: TabularPolicy, traj: Trajectory) -> float:
    pi = _check_pair(mdp, policy)
    if len(traj.actions) != mdp.horizon:
        raise InputError(f"trajectory has {len(traj.actions)} actions, horizon is {mdp.horizon}")
    s = np.asarray(traj.states)
    a = np.asarray(traj.actions)
    if s.min() < 0 or s.max() >= mdp.num_states or a.min() < 0 or a.max() >= mdp.num_actions:
        raise InputError("trajectory index out of range")
    return float(trajectory_probs(mdp, pi, s[None, :], a[None, :])[0])


def trajectory_probs(
    mdp: FiniteMdp, pi: np.ndarray, states: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Vectorised trajectory probabilities for index arrays of shape (n, H+1) / (n, H)."""
    prob = mdp.initial[states[:, 0]].copy()
    for t in range(actions.shape[1]):
        s, a, s2 = states[:, t], actions[:, t], states[:, t + 1]
        prob *= pi[s, a] * mdp.transition[s, a, s2]
    return prob


def state_distributions(mdp: FiniteMdp, pi: np.ndarray) -> np.ndarray:
    """Forward recursion; row t is the law of s_t, t = 0..H-1."""
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    rows = np.empty((mdp.horizon, mdp.num_states))
    rows[0] = mdp.initial
    for t in range(1, mdp.horizon):
        rows[t] = rows[t - 1] @ P_pi
    return rows


def occupancy(mdp: FiniteMdp, policy: TabularPolicy) -> OccupancyMeasures:
    pi = _check_pair(mdp, policy)
    rows = state_distributions(mdp, pi)
    avg = rows.mean(axis=0)
    return OccupancyMeasures(per_time_state=rows, avg_state=avg, state_action=avg[:, None] * pi)


def _enumerate_arrays(
    mdp: FiniteMdp, pi: np.ndarray, cap: int = DEFAULT_BRANCH_CAP
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All positive-probability trajectories as (states, actions, probs) arrays.

    Expansion is breadth-first over time; zero-probability branches are
    dropped.  ``cap`` bounds the total number of expanded branches.
    """
    s0 = np.flatnonzero(mdp.initial > 0)
    states = s0[:, None]
    actions = np.empty((s0.size, 0), dtype=np.int64)
    probs = mdp.initial[s0].copy()
    expanded = s0.size
    for _ in range(mdp.horizon):
        last = states[:, -1]
        # branch weights indexed (traj, action, next_state)
        w = probs[:, None, None] * pi[last][:, :, None] * mdp.transition[last]
        idx, a, s2 = np.nonzero(w > 0)
        expanded += idx.size
        if expanded > cap:
            raise ResourceError(
                f"trajectory enumeration exceeds cap of {cap} expanded branches"
            )
        states = np.concatenate([states[idx], s2[:, None]], axis=1)
        actions = np.concatenate([actions[idx], a[:, None]], axis=1)
        probs = w[idx, a, s2]
    return states, actions, probs


def enumerate_trajectories(
    mdp: FiniteMdp, policy: TabularPolicy, cap: int = DEFAULT_BRANCH_CAP
) -> list[tuple[Trajectory, float]]:
    pi = _check_pair(mdp, policy)
    states, actions, probs = _enumerate_arrays(mdp, pi, cap)
    return [
        (Trajectory(tuple(map(int, s)), tuple(map(int, a))), float(p))
        for s, a, p in zip(states, actions, probs)
    ]


def sample_states_actions(
    mdp: FiniteMdp, pi: np.ndarray, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` trajectories at once; returns (states (n, H+1), actions (n, H))."""
    H = mdp.horizon
    states = np.empty((n, H + 1), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    states[:, 0] = _categorical(np.broadcast_to(mdp.initial, (n, mdp.num_states)), rng)
    for t in range(H):
        s = states[:, t]
        actions[:, t] = _categorical(pi[s], rng)
        states[:, t + 1] = _categorical(mdp.transition[s, actions[:, t]], rng)
    return states, actions


def _categorical(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), rows.shape[1] - 1)


def sample_trajectory(mdp: FiniteMdp, policy: TabularPolicy, rng_seed: int) -> Trajectory:
    pi = _check_pair(mdp, policy)
    rng = np.random.default_rng(rng_seed)
    states, actions = sample_states_actions(mdp, pi, 1, rng)
    return Trajectory(tuple(map(int, states[0])), tuple(map(int, actions[0])))


def check_avg_state_tally(
    mdp: FiniteMdp, policy: TabularPolicy, tol: float = 1e-10, cap: int = DEFAULT_BRANCH_CAP
) -> bool:
    """Compare the tally of visited states over enumerated trajectories with
    the forward-recursion average state distribution."""
    pi = _check_pair(mdp, policy)
    states, _, probs = _enumerate_arrays(mdp, pi, cap)
    H = mdp.horizon
    tally = np.zeros(mdp.num_states)
    for t in range(H):
        np.add.at(tally, states[:, t], probs / H)
    return bool(np.max(np.abs(tally - occupancy(mdp, policy).avg_state)) <= tol)
