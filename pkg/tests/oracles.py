"""Slow, independent reference implementations used by the tests.

Nothing here imports library internals beyond the plain data containers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

LOG2 = math.log(2.0)


def f_scalar(name: str, u: float) -> float:
    if name == "KL":
        return 0.0 if u == 0 else u * math.log(u)
    if name == "RKL":
        return math.inf if u == 0 else -math.log(u)
    if name == "JS":
        a = 0.0 if u == 0 else u * math.log(u)
        return -(u + 1.0) * math.log((1.0 + u) / 2.0) + a
    if name == "TV":
        return 0.5 * abs(u - 1.0)
    raise KeyError(name)


# limit of f(u) / u as u -> inf
SLOPE_AT_INF = {"KL": math.inf, "RKL": 0.0, "JS": LOG2, "TV": 0.5}


def divergence(name: str, p, q) -> float:
    total = 0.0
    for pi, qi in zip(np.ravel(p), np.ravel(q)):
        if pi == 0 and qi == 0:
            continue
        if qi == 0:
            term = pi * SLOPE_AT_INF[name] if SLOPE_AT_INF[name] != math.inf else math.inf
        else:
            term = qi * f_scalar(name, pi / qi)
        total += term
    return total


def trajectory_table(transition, initial, horizon, policy) -> dict:
    """Probability of every state/action sequence, including zeros."""
    S, A, _ = transition.shape
    out = {}
    for states in itertools.product(range(S), repeat=horizon + 1):
        for actions in itertools.product(range(A), repeat=horizon):
            p = initial[states[0]]
            for t in range(horizon):
                p *= policy[states[t], actions[t]] * transition[states[t], actions[t], states[t + 1]]
            out[(states, actions)] = p
    return out


def traj_divergence(name, transition, initial, horizon, expert, learner) -> float:
    pe = trajectory_table(transition, initial, horizon, expert)
    pl = trajectory_table(transition, initial, horizon, learner)
    keys = sorted(pe)
    return divergence(name, [pe[k] for k in keys], [pl[k] for k in keys])


def avg_state_by_tally(transition, initial, horizon, policy) -> np.ndarray:
    S = transition.shape[0]
    tally = np.zeros(S)
    for (states, _), p in trajectory_table(transition, initial, horizon, policy).items():
        for t in range(horizon):
            tally[states[t]] += p / horizon
    return tally


def bandit_probs(theta: float, A: float = 2.5) -> list[float]:
    V = [math.cos(-theta - math.pi / 4), math.cos(theta), math.cos(-theta + math.pi / 4)]
    e = [math.exp(A * (v + 1.0)) for v in V]
    return [x / sum(e) for x in e]


def grid_kernel(e1: float, e2: float) -> np.ndarray:
    """Loop-by-coordinates construction of the 3x3 gridworld kernel."""
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]

    def step(r, c, a):
        r2, c2 = r + moves[a][0], c + moves[a][1]
        return (r2, c2) if 0 <= r2 < 3 and 0 <= c2 < 3 else (r, c)

    P = np.zeros((9, 4, 9))
    for r in range(3):
        for c in range(3):
            s = 3 * r + c
            if s == 1:
                P[s, :, s] = 1.0
                continue
            nbrs = [step(r, c, a) for a in range(4) if step(r, c, a) != (r, c)]
            for a in range(4):
                for b in range(4):
                    pb = (1 - e1) if a == b else e1 / 3
                    r2, c2 = step(r, c, b)
                    P[s, a, 3 * r2 + c2] += pb * (1 - e2)
                    for rn, cn in nbrs:
                        P[s, a, 3 * rn + cn] += pb * e2 / len(nbrs)
    return P
