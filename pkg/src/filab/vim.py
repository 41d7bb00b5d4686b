"""Variational imitation (alternating discriminator ascent and policy gradient)
and behaviour cloning."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from filab.divergences import get_spec, state_action_divergence
from filab.envs import SHARPNESS, EnvBundle, ParametricPolicy, initial_policy
from filab.errors import InputError, NumericalError
from filab.estimation import Discriminator, SampleSet, fit_discriminator, variational_estimate
from filab.mdp import TabularPolicy, sample_states_actions
from filab.metrics import ModeMetrics, mode_metrics

__all__ = [
    "IterationRecord",
    "ModeMetrics",
    "TrainingHistory",
    "VimConfig",
    "behavior_cloning",
    "expert_demonstrations",
    "mode_metrics",
    "policy_gradient_step",
    "run_f_vim",
    "surrogate_loss",
    "tabular_mle",
]


@dataclass(frozen=True)
class VimConfig:
    divergence: str = "RKL"
    iterations: int = 500
    estimator_steps: int = 10
    estimator_lr: float = 0.05
    policy_lr: float = 0.05
    batch_size: int = 256
    expert_demos: int = 256
    seed: int = 0
    sharpness: float = SHARPNESS

    def __post_init__(self):
        get_spec(self.divergence)
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        for name in ("estimator_steps", "batch_size", "expert_demos"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.estimator_lr <= 0 or self.policy_lr <= 0:
            raise InputError("learning rates must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    exact_divergence: float
    params_hash: str
    collapse_score: float
    cover_score: float
    unsafe_mass: float


@dataclass
class TrainingHistory:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def params_hash(policy: ParametricPolicy) -> str:
    return hashlib.sha256(np.ascontiguousarray(policy.theta).tobytes()).hexdigest()[:16]


def expert_demonstrations(env: EnvBundle, n: int, rng: np.random.Generator) -> SampleSet:
    states, actions = sample_states_actions(env.mdp, env.expert.probs, n, rng)
    return SampleSet.from_trajectories(states, actions, env.mdp.num_states, env.mdp.num_actions, "expert")


def _costs_to_go(step_costs: np.ndarray) -> np.ndarray:
    """Reverse cumulative sum along time: Q_t = sum_{i >= t} c_i."""
    return np.cumsum(step_costs[:, ::-1], axis=1)[:, ::-1]


def _score_sum(policy: ParametricPolicy, states: np.ndarray, actions: np.ndarray, Q: np.ndarray) -> np.ndarray:
    n, H = actions.shape
    s = states[:, :-1].reshape(-1)
    a = actions.reshape(-1)
    g = policy.grad_log_prob(s, a)
    weights = Q.reshape(-1)
    return np.tensordot(weights, g, axes=(0, 0)) / n


def vim_costs(states: np.ndarray, actions: np.ndarray, V: Discriminator, spec) -> np.ndarray:
    """Per-rollout cost-to-go ``Q_t = -sum_{i>=t} f*(g(V(s_{i-1}, a_i)))``."""
    spec = get_spec(spec)
    step = -spec.conj_activation(V.weights[states[:, :-1], actions])
    return _costs_to_go(step)


def policy_gradient_step(
    policy: ParametricPolicy,
    rollouts: tuple[np.ndarray, np.ndarray],
    V: Discriminator,
    spec,
    policy_lr: float,
    costs: np.ndarray | None = None,
) -> ParametricPolicy:
    """One REINFORCE descent step on the learner's expected cost.

    The gradient is averaged over rollouts and summed over time steps.
    ``costs`` overrides the default f*(g(V)) cost-to-go.
    """
    states, actions = rollouts
    Q = vim_costs(states, actions, V, spec) if costs is None else costs
    grad = _score_sum(policy, states, actions, Q)
    theta = policy.theta - policy_lr * grad
    if not np.all(np.isfinite(theta)):
        raise NumericalError("non-finite policy parameters after gradient step")
    return policy.with_theta(theta)


def surrogate_loss(policy: ParametricPolicy, states: np.ndarray, actions: np.ndarray, Q: np.ndarray) -> float:
    """Mean over rollouts of sum_t log pi(a_t | s_{t-1}) Q_t with Q held fixed."""
    pi = policy.probs()
    logp = np.log(pi[states[:, :-1], actions])
    return float(np.sum(logp * Q) / actions.shape[0])


def run_f_vim(
    env: EnvBundle,
    expert_demos: SampleSet,
    config: VimConfig,
    init_policy: ParametricPolicy | None = None,
) -> tuple[ParametricPolicy, TrainingHistory]:
    spec = get_spec(config.divergence)
    if expert_demos.num_states != env.mdp.num_states or expert_demos.num_actions != env.mdp.num_actions:
        raise InputError("expert demonstrations do not match the environment")
    rng = np.random.default_rng(config.seed)
    policy = init_policy if init_policy is not None else initial_policy(env, rng, config.sharpness)
    V = Discriminator.zeros(env.mdp.num_states, env.mdp.num_actions)
    history = TrainingHistory()
    for it in range(config.iterations):
        states, actions = sample_states_actions(env.mdp, policy.probs(), config.batch_size, rng)
        learner = SampleSet.from_trajectories(
            states, actions, env.mdp.num_states, env.mdp.num_actions, "learner"
        )
        try:
            V = fit_discriminator(expert_demos, learner, spec, config.estimator_steps, config.estimator_lr, V)
            objective = variational_estimate(expert_demos, learner, V, spec)
            policy = policy_gradient_step(policy, (states, actions), V, spec, config.policy_lr)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        history.records.append(_record(it, objective, env, policy, spec))
    return policy, history


def _record(it: int, objective: float, env: EnvBundle, policy, spec) -> IterationRecord:
    table = policy.tabular()
    exact = state_action_divergence(env.mdp, env.expert.policy, table, spec)
    m = mode_metrics(table, env)
    return IterationRecord(
        it, float(objective), exact, params_hash(policy) if hasattr(policy, "theta") else "",
        m.collapse_score, m.cover_score, m.unsafe_mass,
    )


def tabular_mle(demos: SampleSet, init: TabularPolicy | None = None) -> TabularPolicy:
    """Empirical conditional action frequencies; unseen states keep ``init`` rows (uniform by default)."""
    counts = demos.counts()
    table = (
        np.full(counts.shape, 1.0 / counts.shape[1]) if init is None else np.array(init.probs, dtype=np.float64)
    )
    seen = counts.sum(axis=1) > 0
    table[seen] = counts[seen] / counts[seen].sum(axis=1, keepdims=True)
    return TabularPolicy(table)


def behavior_cloning(
    expert_demos: SampleSet,
    policy_kind: str,
    steps: int = 2000,
    rate: float = 0.5,
    seed: int = 0,
    sharpness: float = SHARPNESS,
) -> ParametricPolicy:
    """Gradient ascent on the mean demo log-likelihood.

    ``policy_kind`` is ``bandit`` or ``grid`` (angle classes, random init) or
    ``tabular`` (free logits, uniform init).  States absent from the demos
    get no gradient and keep their initial row.
    """
    if len(expert_demos) == 0:
        raise InputError("behaviour cloning needs demonstrations")
    rng = np.random.default_rng(seed)
    S, A = expert_demos.num_states, expert_demos.num_actions
    if policy_kind == "tabular":
        policy = ParametricPolicy("logits", np.zeros((S, A)))
    elif policy_kind == "bandit":
        policy = ParametricPolicy("bandit", rng.uniform(-math.pi, math.pi), sharpness)
    elif policy_kind == "grid":
        policy = ParametricPolicy("grid", rng.uniform(-math.pi, math.pi, S), sharpness)
    else:
        raise InputError(f"unknown policy kind {policy_kind!r}")
    w = np.ones(len(expert_demos)) if expert_demos.weights is None else expert_demos.weights
    w = w / w.sum()
    for _ in range(steps):
        g = policy.grad_log_prob(expert_demos.states, expert_demos.actions)
        policy = policy.with_theta(policy.theta + rate * np.tensordot(w, g, axes=(0, 0)))
    return policy
