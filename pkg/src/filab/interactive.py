"""Imitation with an interactive expert: DAgger, interactive RKL-VIM and
density-ratio minimisation with dataset aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from filab.divergences import expected_action_divergence
from filab.envs import EnvBundle, ExpertModel, ParametricPolicy, initial_policy
from filab.errors import InputError, NumericalError
from filab.estimation import SampleSet, lsq_density_ratio
from filab.mdp import TabularPolicy, _categorical, occupancy, sample_states_actions
from filab.vim import (
    IterationRecord,
    TrainingHistory,
    VimConfig,
    _costs_to_go,
    _score_sum,
    params_hash,
    tabular_mle,
)
from filab.metrics import mode_metrics

__all__ = [
    "CostDataset",
    "InteractiveRecord",
    "InteractiveRunReport",
    "cost_sensitive_classify",
    "dre_bound_terms",
    "irkl_estimator_step",
    "run_dagger",
    "run_interactive_dre",
    "run_irkl_vim",
]


class CostDataset:
    """Append-only aggregate of (state, cost vector) pairs with their iteration."""

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = int(num_states)
        self.num_actions = int(num_actions)
        self._states: list[np.ndarray] = []
        self._costs: list[np.ndarray] = []
        self._iters: list[np.ndarray] = []

    def append(self, states, costs, iteration: int) -> None:
        states = np.asarray(states, dtype=np.int64).reshape(-1)
        costs = np.asarray(costs, dtype=np.float64).reshape(states.size, -1)
        if costs.shape[1] != self.num_actions:
            raise InputError(f"cost vectors need length {self.num_actions}")
        if not np.all(np.isfinite(costs)):
            raise InputError("cost vectors must be finite")
        if states.size and (states.min() < 0 or states.max() >= self.num_states):
            raise InputError("state index out of range")
        self._states.append(states.copy())
        self._costs.append(costs.copy())
        self._iters.append(np.full(states.size, int(iteration), dtype=np.int64))

    def _cat(self, parts, shape) -> np.ndarray:
        out = np.concatenate(parts) if parts else np.zeros(shape)
        out.setflags(write=False)
        return out

    @property
    def states(self) -> np.ndarray:
        return self._cat(self._states, (0,)).astype(np.int64)

    @property
    def costs(self) -> np.ndarray:
        return self._cat(self._costs, (0, self.num_actions))

    @property
    def iterations(self) -> np.ndarray:
        return self._cat(self._iters, (0,)).astype(np.int64)

    def __len__(self) -> int:
        return sum(s.size for s in self._states)

    def summed_costs(self) -> np.ndarray:
        """Total cost per (state, action) over every entry."""
        table = np.zeros((self.num_states, self.num_actions))
        np.add.at(table, self.states, self.costs)
        return table

    def policy_cost(self, policy: TabularPolicy) -> float:
        """Mean cost of ``policy`` (its expected cost for stochastic rows) over the entries."""
        if len(self) == 0:
            raise InputError("empty cost dataset")
        return float(np.sum(self.summed_costs() * policy.probs) / len(self))


def cost_sensitive_classify(dataset: CostDataset) -> TabularPolicy:
    """Per state, the action with least summed cost.

    Ties go to the lowest action index; states without entries get action 0.
    """
    if len(dataset) == 0:
        raise InputError("cost-sensitive classification needs a non-empty dataset")
    actions = np.argmin(dataset.summed_costs(), axis=1)
    return TabularPolicy.deterministic(actions, dataset.num_actions)


@dataclass(frozen=True)
class InteractiveRecord:
    iteration: int
    action_rkl: float
    action_kl: float
    classification_cost: float
    ratio_error: float | None = None


@dataclass
class InteractiveRunReport:
    records: list[InteractiveRecord] = field(default_factory=list)
    policies: list[TabularPolicy] = field(default_factory=list)
    best_index: int = -1
    policy: TabularPolicy | None = None
    dataset: CostDataset | None = None

    def __len__(self) -> int:
        return len(self.records)


def _expert_labels(expert: ExpertModel, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return _categorical(expert.probs[states], rng)


def _exact_action_divs(env: EnvBundle, expert: ExpertModel, policy: TabularPolicy) -> tuple[float, float]:
    rkl = expected_action_divergence(env.mdp, expert.policy, policy, "RKL")
    kl = expected_action_divergence(env.mdp, expert.policy, policy, "KL")
    return rkl, kl


def _best_index(values: list[float]) -> int:
    return int(np.lexsort((np.arange(len(values)), np.asarray(values)))[0])


def run_dagger(
    env: EnvBundle,
    expert: ExpertModel,
    iterations: int,
    rollouts_per_iter: int,
    seed: int,
) -> tuple[TabularPolicy, InteractiveRunReport]:
    """Dataset aggregation with pure learner rollouts from the first iteration.

    The first rollouts use the uniform policy.  Visited states are labelled
    with one sampled expert action each, and the policy is refit by tabular
    MLE on everything gathered so far.  Returns the iterate with least exact
    expected action KL (first one on ties).
    """
    if iterations < 1 or rollouts_per_iter < 1:
        raise InputError("iterations and rollouts_per_iter must be >= 1")
    S, A = env.mdp.num_states, env.mdp.num_actions
    rng = np.random.default_rng(seed)
    policy = TabularPolicy.uniform(S, A)
    agg_s: list[np.ndarray] = []
    agg_a: list[np.ndarray] = []
    report = InteractiveRunReport()
    for it in range(iterations):
        states, _ = sample_states_actions(env.mdp, policy.probs, rollouts_per_iter, rng)
        visited = states[:, :-1].reshape(-1)
        agg_s.append(visited)
        agg_a.append(_expert_labels(expert, visited, rng))
        demos = SampleSet(np.concatenate(agg_s), np.concatenate(agg_a), S, A, "expert")
        policy = tabular_mle(demos)
        # 0-1 disagreement of the refit policy's greedy action with the aggregate labels
        err = float(np.mean(np.argmax(policy.probs[demos.states], axis=1) != demos.actions))
        rkl, kl = _exact_action_divs(env, expert, policy)
        report.records.append(InteractiveRecord(it, rkl, kl, err))
        report.policies.append(policy)
    report.best_index = _best_index([r.action_kl for r in report.records])
    report.policy = report.policies[report.best_index]
    return report.policy, report


def _true_ratio_error(env: EnvBundle, expert: ExpertModel, policy: TabularPolicy, ratio: np.ndarray) -> float:
    """Expert-label weighted mean |r_hat - pi_n / pi*| on learner-visited states."""
    d = occupancy(env.mdp, policy).avg_state
    pe = expert.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        true = np.where(pe > 0, policy.probs / np.where(pe > 0, pe, 1.0), 0.0)
    w = d[:, None] * pe
    return float(np.sum(w * np.abs(ratio - true)))


def run_interactive_dre(
    env: EnvBundle,
    expert: ExpertModel,
    iterations: int,
    episodes_per_iter: int,
    clip_floor: float = 0.1,
    seed: int = 0,
) -> tuple[TabularPolicy, InteractiveRunReport]:
    """Follow-the-leader on aggregated density-ratio costs.

    Each iteration rolls out the current policy, queries the expert on every
    visited state, estimates ``pi_n / pi*`` by least squares (learner actions
    as numerator, expert labels as denominator), appends ``(s, r_hat(., s))``
    for every visit to the aggregate and refits by cost-sensitive
    classification.  The first policy is uniform.  Returns the iterate with
    least exact expected action RKL.
    """
    if iterations < 1 or episodes_per_iter < 1:
        raise InputError("iterations and episodes_per_iter must be >= 1")
    S, A = env.mdp.num_states, env.mdp.num_actions
    rng = np.random.default_rng(seed)
    policy = TabularPolicy.uniform(S, A)
    data = CostDataset(S, A)
    report = InteractiveRunReport()
    for it in range(iterations):
        states, actions = sample_states_actions(env.mdp, policy.probs, episodes_per_iter, rng)
        visited = states[:, :-1].reshape(-1)
        learner = SampleSet(visited, actions.reshape(-1), S, A, "learner")
        labels = SampleSet(visited, _expert_labels(expert, visited, rng), S, A, "expert")
        ratio = lsq_density_ratio(learner, labels, clip_floor).values
        cost_now = float(np.mean(np.sum(ratio[visited] * policy.probs[visited], axis=1)))
        gamma = _true_ratio_error(env, expert, policy, ratio)
        data.append(visited, ratio[visited], it)
        rkl, kl = _exact_action_divs(env, expert, policy)
        report.records.append(InteractiveRecord(it, rkl, kl, cost_now, gamma))
        report.policies.append(policy)
        policy = cost_sensitive_classify(data)
    report.best_index = _best_index([r.action_rkl for r in report.records])
    report.policy = report.policies[report.best_index]
    report.dataset = data
    return report.policy, report


def dre_bound_terms(env: EnvBundle, report: InteractiveRunReport, clip_floor: float) -> tuple[float, float]:
    """(trajectory-level RKL of the returned policy, H ((1 + 1/c) gamma + eps_class + regret)).

    ``gamma`` is the mean ratio-estimation error over iterations,
    ``eps_class`` the aggregate cost of the best fixed classifier in hindsight
    and ``regret`` the average excess online cost over it (floored at 0).
    """
    H = env.mdp.horizon
    data = report.dataset
    if data is None:
        raise InputError("report carries no cost dataset")
    best_fixed = data.policy_cost(cost_sensitive_classify(data))
    online = float(np.mean([r.classification_cost for r in report.records]))
    gamma = float(np.mean([r.ratio_error for r in report.records]))
    regret = max(online - best_fixed, 0.0)
    lhs = H * report.records[report.best_index].action_rkl
    rhs = H * ((1.0 + 1.0 / clip_floor) * gamma + best_fixed + regret)
    return lhs, rhs


def irkl_estimator_step(p_expert: np.ndarray, q_learner: np.ndarray, V: np.ndarray, lr: float) -> np.ndarray:
    """Ascent on ``-E_expert[exp V] + E_learner[V]``; fixed point ``V = log(q / p)``."""
    with np.errstate(over="ignore"):
        grad = np.where(p_expert > 0, -p_expert * np.exp(V), 0.0) + q_learner
    return V + lr * grad


def run_irkl_vim(
    env: EnvBundle,
    expert: ExpertModel,
    config: VimConfig,
    init_policy: ParametricPolicy | None = None,
) -> tuple[ParametricPolicy, TrainingHistory]:
    """RKL-VIM on action distributions with an interactive expert.

    The expert is queried at every learner-visited state; the estimator
    converges towards ``log(pi / pi*)`` and the policy descends the
    cost-to-go ``Q_t = sum_{i>=t} V(s_{i-1}, a_i)``.
    """
    rng = np.random.default_rng(config.seed)
    policy = init_policy if init_policy is not None else initial_policy(env, rng, config.sharpness)
    S, A = env.mdp.num_states, env.mdp.num_actions
    V = np.zeros((S, A))
    history = TrainingHistory()
    for it in range(config.iterations):
        states, actions = sample_states_actions(env.mdp, policy.probs(), config.batch_size, rng)
        visited = states[:, :-1].reshape(-1)
        q_hat = SampleSet(visited, actions.reshape(-1), S, A, "learner").distribution()
        p_hat = SampleSet(visited, _expert_labels(expert, visited, rng), S, A, "expert").distribution()
        for _ in range(config.estimator_steps):
            V = irkl_estimator_step(p_hat, q_hat, V, config.estimator_lr)
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"iteration {it}: non-finite estimator weights")
        with np.errstate(over="ignore"):
            objective = float(np.sum(np.where(p_hat > 0, -p_hat * np.exp(V), 0.0)) + np.sum(q_hat * V))
        Q = _costs_to_go(V[states[:, :-1], actions])
        theta = policy.theta - config.policy_lr * _score_sum(policy, states, actions, Q)
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"iteration {it}: non-finite policy parameters")
        policy = policy.with_theta(theta)
        table = policy.tabular()
        exact = env.mdp.horizon * expected_action_divergence(env.mdp, expert.policy, table, "RKL")
        m = mode_metrics(table, env)
        history.records.append(
            IterationRecord(it, objective, exact, params_hash(policy), m.collapse_score, m.cover_score, m.unsafe_mass)
        )
    return policy, history

