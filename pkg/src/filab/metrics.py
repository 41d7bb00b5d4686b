"""Mode-collapse / mode-cover / safety metrics for bandit and gridworld policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from filab.envs import EnvBundle

_NONE, _LEFT, _RIGHT, _MIDDLE = range(4)


@dataclass(frozen=True)
class ModeMetrics:
    collapse_score: float
    cover_score: float
    unsafe_mass: float


def _as_table(policy) -> np.ndarray:
    return policy.tabular().probs


def grid_route_masses(env: EnvBundle, pi: np.ndarray) -> tuple[float, float, float, float]:
    """Exact (left entry, right entry, middle entry, visits-center) probabilities.

    Runs the forward recursion on states augmented with a visited-center flag
    and the label of the cell from which the terminal was first entered.
    """
    spec = env.spec
    P = np.einsum("sa,sat->st", pi, env.mdp.transition)
    n = P.shape[0]
    entry_label = np.full(n, _MIDDLE)
    entry_label[0] = _LEFT
    entry_label[2] = _RIGHT
    D = np.zeros((n, 2, 4))
    s0 = np.flatnonzero(env.mdp.initial > 0)
    D[s0, (s0 == spec.center_cell).astype(int), _NONE] = env.mdp.initial[s0]
    term, center = spec.terminal_cell, spec.center_cell
    for _ in range(env.mdp.horizon):
        nxt = np.zeros_like(D)
        for s in range(n):
            mass = D[s]
            if not mass.any():
                continue
            for s2 in np.flatnonzero(P[s] > 0):
                w = P[s, s2] * mass
                if s2 == center:
                    w = np.stack([np.zeros(4), w.sum(axis=0)])
                if s2 == term and s != term:
                    moved = w[:, _NONE].copy()
                    w = w.copy()
                    w[:, _NONE] = 0.0
                    w[:, entry_label[s]] += moved
                nxt[s2] += w
        D = nxt
    by_label = D.sum(axis=(0, 1))
    return float(by_label[_LEFT]), float(by_label[_RIGHT]), float(by_label[_MIDDLE]), float(D[:, 1, :].sum())


def mode_metrics(policy, env: EnvBundle) -> ModeMetrics:
    """Bandit: collapse = max(P(a), P(b)), cover = min, unsafe = P(c).

    Gridworld: collapse / cover are the larger / smaller probability of
    entering the terminal from the left or right column within the horizon;
    unsafe is the probability of ever occupying the center cell.
    """
    pi = _as_table(policy)
    if env.name == "bandit":
        pa, pb, pc = pi[0]
        return ModeMetrics(float(max(pa, pb)), float(min(pa, pb)), float(pc))
    left, right, _, unsafe = grid_route_masses(env, pi)
    return ModeMetrics(max(left, right), min(left, right), unsafe)

