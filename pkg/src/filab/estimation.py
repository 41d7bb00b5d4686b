"""Sample-based divergence estimation with tabular discriminators, and
least-squares density-ratio estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from filab.divergences import DivergenceSpec, exact_f_divergence, get_spec
from filab.errors import DomainError, InputError, NumericalError


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Multiset of (state, action) observations.

    ``weights`` defaults to one per observation.  A set built with
    :meth:`from_distribution` carries exact probabilities instead of counts,
    which turns every sample average into an exact expectation.
    """

    states: np.ndarray
    actions: np.ndarray
    num_states: int
    num_actions: int
    source: str = "expert"
    weights: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64).reshape(-1)
        a = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        if s.shape != a.shape:
            raise InputError("states and actions must have equal length")
        if s.size and (s.min() < 0 or s.max() >= self.num_states or a.min() < 0 or a.max() >= self.num_actions):
            raise InputError("sample index out of range")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if w.shape != s.shape or np.any(w < 0):
                raise InputError("weights must be non-negative, one per sample")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_distribution(cls, table, source: str = "expert") -> "SampleSet":
        table = np.atleast_2d(np.asarray(table, dtype=np.float64))
        s, a = np.nonzero(table > 0)
        return cls(s, a, table.shape[0], table.shape[1], source, table[s, a])

    @classmethod
    def from_trajectories(cls, states: np.ndarray, actions: np.ndarray, num_states: int,
                          num_actions: int, source: str = "learner") -> "SampleSet":
        """Pairs (s_{t-1}, a_t) from arrays of shape (n, H+1) and (n, H)."""
        return cls(states[:, :-1], actions, num_states, num_actions, source)

    def __len__(self) -> int:
        return self.states.size

    def counts(self) -> np.ndarray:
        w = np.ones(self.states.size) if self.weights is None else self.weights
        table = np.zeros((self.num_states, self.num_actions))
        np.add.at(table, (self.states, self.actions), w)
        return table

    def distribution(self) -> np.ndarray:
        table = self.counts()
        total = table.sum()
        if total <= 0:
            raise InputError(f"empty {self.source} sample set")
        return table / total


@dataclass(frozen=True, eq=False)
class Discriminator:
    weights: np.ndarray
    kind: str = "tabular"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise NumericalError("discriminator weights must be finite")
        if self.kind != "tabular":
            raise InputError(f"unsupported discriminator kind {self.kind!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> "Discriminator":
        return cls(np.zeros((num_states, num_actions)))

    def __call__(self, states, actions) -> np.ndarray:
        return self.weights[states, actions]


@dataclass(frozen=True, eq=False)
class RatioEstimate:
    values: np.ndarray
    clip_floor: float


def _objective_tables(p_hat, q_hat, V, spec: DivergenceSpec):
    """Variational objective sum p g(V) - sum q f*(g(V)) over trailing (S, A) axes."""
    with np.errstate(over="ignore", invalid="ignore"):
        gain = np.where(p_hat > 0, p_hat * spec.activation(V), 0.0)
        cost = np.where(q_hat > 0, q_hat * spec.conj_activation(V), 0.0)
    return (gain - cost).sum(axis=(-2, -1))


def _objective_grad(p_hat, q_hat, V, spec: DivergenceSpec):
    with np.errstate(over="ignore", invalid="ignore"):
        gain = np.where(p_hat > 0, p_hat * spec.activation_grad(V), 0.0)
        cost = np.where(q_hat > 0, q_hat * spec.conj_activation_grad(V), 0.0)
    return gain - cost


def variational_estimate(
    expert_samples: SampleSet, learner_samples: SampleSet, V: Discriminator, spec
) -> float:
    """Mean of ``g(V)`` over expert samples minus mean of ``f*(g(V))`` over learner samples."""
    spec = get_spec(spec)
    if len(expert_samples) == 0 or len(learner_samples) == 0:
        raise InputError("variational estimate needs non-empty expert and learner samples")
    p_hat = expert_samples.distribution()
    q_hat = learner_samples.distribution()
    return float(_objective_tables(p_hat, q_hat, V.weights, spec))


def optimal_discriminator(p, q, spec) -> Discriminator:
    """Tabular ``V`` with ``g(V) = f'(p / q)``; 1-D inputs become a single-state table."""
    spec = get_spec(spec)
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise InputError(f"support mismatch: {p.shape} vs {q.shape}")
    if np.any(q <= 0) or np.any(p <= 0):
        raise DomainError("optimal discriminator needs p and q with full support (zero denominator or zero ratio)")
    V = spec.activation_inverse(spec.f_prime(p / q))
    return Discriminator(V)


def ascend(
    p_hat: np.ndarray,
    q_hat: np.ndarray,
    spec: DivergenceSpec,
    steps: int,
    learning_rate: float,
    V0: np.ndarray,
) -> np.ndarray:
    """Plain gradient ascent on the tabular objective; works on batched tables."""
    V = np.array(V0, dtype=np.float64)
    for step in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            V = V + learning_rate * _objective_grad(p_hat, q_hat, V, spec)
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"non-finite discriminator weights at step {step}")
    return V


def fit_discriminator(
    expert_samples: SampleSet,
    learner_samples: SampleSet,
    spec,
    steps: int,
    learning_rate: float,
    init: Discriminator | None = None,
) -> Discriminator:
    """Gradient ascent on the variational objective, per-set means as the loss scale."""
    spec = get_spec(spec)
    if steps < 1:
        raise InputError("steps must be >= 1")
    if learning_rate <= 0:
        raise InputError("learning_rate must be positive")
    p_hat = expert_samples.distribution()
    q_hat = learner_samples.distribution()
    if init is None:
        init = Discriminator.zeros(*p_hat.shape)
    return Discriminator(ascend(p_hat, q_hat, spec, steps, learning_rate, init.weights))


def lsq_density_ratio(
    numerator_samples: SampleSet, denominator_samples: SampleSet, clip_floor: float
) -> RatioEstimate:
    """Tabular minimiser of ``mean_den g^2 - 2 mean_num g``, clipped to [c, 1/c].

    Per cell the minimiser is the ratio of empirical frequencies (the count
    ratio when both sets have the same size).  Cells without denominator
    samples are set to ``1 / c``.
    """
    c = float(clip_floor)
    if not 0.0 < c <= 1.0:
        raise InputError(f"clip floor must lie in (0, 1], got {c}")
    num = numerator_samples.distribution()
    den = denominator_samples.distribution()
    if num.shape != den.shape:
        raise InputError("numerator and denominator sample sets live on different grids")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / c)
    return RatioEstimate(np.clip(ratio, c, 1.0 / c), c)


def lsq_objective(g: np.ndarray, numerator_samples: SampleSet, denominator_samples: SampleSet) -> float:
    num = numerator_samples.distribution()
    den = denominator_samples.distribution()
    return float(np.sum(den * g**2) - 2.0 * np.sum(num * g))


def _draw_cells(dist: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(dist.size, size=n, p=dist)


def sample_from_table(table: np.ndarray, n: int, rng: np.random.Generator, source: str) -> SampleSet:
    """``n`` i.i.d. (state, action) pairs from a joint probability table."""
    table = np.atleast_2d(np.asarray(table, dtype=np.float64))
    flat = _draw_cells(table.reshape(-1) / table.sum(), n, rng)
    s, a = np.divmod(flat, table.shape[1])
    return SampleSet(s, a, table.shape[0], table.shape[1], source)


BLINDNESS_STEPS = 500
BLINDNESS_LR = 0.5


def estimator_blindness_demo(
    spec,
    expert_dist,
    learner_dist,
    n_samples: int,
    seed: int,
    steps: int = BLINDNESS_STEPS,
    learning_rate: float = BLINDNESS_LR,
) -> tuple[float, float]:
    """Exact divergence next to the finite sample-based estimate of it."""
    spec = get_spec(spec)
    p = np.asarray(expert_dist, dtype=np.float64)
    q = np.asarray(learner_dist, dtype=np.float64)
    true_value = exact_f_divergence(p, q, spec)
    rng = np.random.default_rng(seed)
    expert = sample_from_table(p, n_samples, rng, "expert")
    learner = sample_from_table(q, n_samples, rng, "learner")
    V = fit_discriminator(expert, learner, spec, steps, learning_rate)
    estimate = variational_estimate(expert, learner, V, spec)
    if not math.isfinite(estimate):
        raise NumericalError("sample-based estimate is not finite")
    return true_value, estimate
