"""Exact global optimisation over finite policy classes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from filab.divergences import batch_f_divergence, get_spec
from filab.envs import (
    GRID_POLICY_COUNT,
    EnvBundle,
    grid_policy_actions,
    grid_policy_id,
    grid_policy_name,
    make_bandit,
    make_gridworld,
    mirror_grid_actions,
)
from filab.errors import InputError, ResourceError
from filab.mdp import occupancy

DEFAULT_SPECS = ("KL", "RKL", "JS", "TV")


@dataclass
class EnumerationResult:
    """Exact divergence of every policy in a finite class.

    ``values[spec][i]`` belongs to ``policy_ids[i]``; ``ranking[spec]`` lists
    positions sorted by value with ``inf`` last and ties by policy id.
    """

    policy_ids: list
    policy_names: list[str]
    values: dict[str, np.ndarray]
    argmin: dict[str, int] = field(default_factory=dict)
    ties: dict[str, list[int]] = field(default_factory=dict)
    ranking: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, vals in self.values.items():
            order = np.lexsort((np.arange(vals.size), vals))
            self.ranking[name] = order
            best = order[0]
            self.argmin[name] = int(best)
            self.ties[name] = [int(i) for i in order if vals[i] == vals[best]]

    def best_name(self, spec: str) -> str:
        return self.policy_names[self.argmin[spec]]

    def best_value(self, spec: str) -> float:
        return float(self.values[spec][self.argmin[spec]])


def _bandit_values(env: EnvBundle, specs) -> dict[str, np.ndarray]:
    expert = env.expert.probs[0]
    tables = np.stack([p.probs[0] for p in env.named_policies.values()])
    return {
        get_spec(s).name: batch_f_divergence(expert[None, :], tables, get_spec(s)) for s in specs
    }


def enumerate_bandit(epsilon0: float = 0.28, specs=DEFAULT_SPECS) -> EnumerationResult:
    """Exact divergences of policies A, B and M (H = 1, so state-action = trajectory)."""
    env = make_bandit(epsilon0)
    names = list(env.named_policies)
    return EnumerationResult(names, names, _bandit_values(env, specs))


def grid_state_action_tables(env: EnvBundle, actions: np.ndarray) -> np.ndarray:
    """State-action occupancy (B, S, A) for a batch of deterministic policies."""
    B, S = actions.shape
    A = env.mdp.num_actions
    P = env.mdp.transition[np.arange(S)[None, :], actions]  # (B, S, S)
    d = np.broadcast_to(env.mdp.initial, (B, S)).copy()
    total = d.copy()
    for _ in range(env.mdp.horizon - 1):
        d = np.einsum("bs,bst->bt", d, P)
        total += d
    avg = total / env.mdp.horizon
    out = np.zeros((B, S, A))
    np.put_along_axis(out, actions[:, :, None], avg[:, :, None], axis=2)
    return out


MAX_GRID_BUDGET = GRID_POLICY_COUNT


def enumerate_gridworld(
    epsilon1: float = 0.14,
    epsilon2: float = 0.15,
    horizon: int = 8,
    specs=DEFAULT_SPECS,
    symmetry_prune: bool = True,
    budget: int = MAX_GRID_BUDGET,
    chunk: int = 8192,
) -> EnumerationResult:
    """State-action divergence of all 4^9 deterministic gridworld policies.

    Policy ids encode one base-4 digit per state (state 0 least significant),
    so id 0 is "always up".  With ``symmetry_prune`` only one policy of each
    left/right mirror pair is evaluated; the layout and expert are mirror
    symmetric, so the partner's values are identical.
    """
    if budget < GRID_POLICY_COUNT:
        raise ResourceError(f"gridworld enumeration needs {GRID_POLICY_COUNT} evaluations, budget is {budget}")
    env = make_gridworld(epsilon1, epsilon2, horizon)
    spec_objs = [get_spec(s) for s in specs]
    expert_table = occupancy(env.mdp, env.expert.policy).state_action
    ids = np.arange(GRID_POLICY_COUNT)
    all_actions = grid_policy_actions(ids)
    if symmetry_prune:
        mirror_ids = (mirror_grid_actions(all_actions) * 4 ** np.arange(9)).sum(axis=1)
        todo = ids[ids <= mirror_ids]
    else:
        mirror_ids = ids
        todo = ids
    values = {s.name: np.full(GRID_POLICY_COUNT, np.nan) for s in spec_objs}
    for start in range(0, todo.size, chunk):
        batch = todo[start : start + chunk]
        tables = grid_state_action_tables(env, all_actions[batch])
        for s in spec_objs:
            vals = batch_f_divergence(expert_table[None], tables, s, event_ndim=2)
            values[s.name][batch] = vals
            values[s.name][mirror_ids[batch]] = vals
    names = [grid_policy_name(a) for a in all_actions]
    return EnumerationResult(list(ids), names, values)


def evaluate_grid_policies(env: EnvBundle, actions: np.ndarray, spec) -> np.ndarray:
    expert_table = occupancy(env.mdp, env.expert.policy).state_action
    tables = grid_state_action_tables(env, np.atleast_2d(actions))
    return batch_f_divergence(expert_table[None], tables, get_spec(spec), event_ndim=2)


@dataclass
class SweepRow:
    epsilon0: float
    divergence: str
    values: dict[str, float]
    argmin: str


def divergence_vs_noise_sweep(eps_grid, specs=("RKL", "JS", "KL")) -> list[SweepRow]:
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise InputError("empty epsilon0 grid")
    rows = []
    for eps in eps_grid:
        result = enumerate_bandit(eps, specs)
        for s in specs:
            name = get_spec(s).name
            vals = {p: float(v) for p, v in zip(result.policy_names, result.values[name])}
            rows.append(SweepRow(eps, name, vals, result.best_name(name)))
    return rows


def js_preference_gap(epsilon0: float) -> float:
    """JS(M) - JS(A) for the bandit; negative where the covering policy M wins."""
    vals = enumerate_bandit(epsilon0, ("JS",)).values["JS"]
    return float(vals[2] - vals[0])


def js_crossover(step: float = 1e-4, lo: float = 0.0, hi: float = 0.5) -> list[float]:
    """Grid-search locations where the JS argmin switches between A/B and M."""
    grid = np.arange(lo + step, hi, step)
    labels = [enumerate_bandit(e, ("JS",)).best_name("JS") for e in grid]
    switches = []
    for i in range(1, len(grid)):
        if (labels[i] == "M") != (labels[i - 1] == "M"):
            switches.append(0.5 * (grid[i] + grid[i - 1]))
    return switches


__all__ = [
    "EnumerationResult",
    "SweepRow",
    "divergence_vs_noise_sweep",
    "enumerate_bandit",
    "enumerate_gridworld",
    "evaluate_grid_policies",
    "grid_policy_id",
    "js_crossover",
    "js_preference_gap",
]
