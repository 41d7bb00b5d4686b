"""The four f-divergences (KL, RKL, JS, TV) and exact divergence computation.

Each generator ``f`` is paired with its convex conjugate, derivative and the
activation ``g`` mapping an unconstrained discriminator output into the
conjugate's domain.  The RKL activation is ``-exp(-v)``, which makes the RKL
instance of the saddle-point objective read
``E_expert[-exp(-V)] - E_learner[V - 1]``.

Zero-mass conventions (``p`` expert, ``q`` learner, term ``q * f(p / q)``):

* p = q = 0 contributes 0;
* p = 0 < q contributes ``q * f(0)`` (KL 0, RKL +inf, JS q log 2, TV q / 2);
* q = 0 < p contributes ``p * lim f(u) / u`` (KL +inf, RKL 0, JS p log 2, TV p / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, xlogy

from filab.errors import DomainError, InputError
from filab.mdp import (
    DEFAULT_BRANCH_CAP,
    FiniteMdp,
    TabularPolicy,
    _check_pair,
    _enumerate_arrays,
    occupancy,
    trajectory_probs,
)

LOG2 = math.log(2.0)
# tanh(20.0) == 1.0 in double precision, so this is the TV saturation point.
TV_SATURATION = 20.0

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DivergenceSpec:
    name: str
    f: Fn
    f_conjugate: Fn
    f_prime: Fn
    activation: Fn
    activation_inverse: Fn
    activation_grad: Fn
    conj_activation: Fn  # f*(g(v)), written in a numerically stable form
    conj_activation_grad: Fn
    in_conj_domain: Callable[[np.ndarray], np.ndarray]
    f_domain_min: float  # f requires u > min (strict) or u >= min
    f_domain_strict: bool
    f_at_zero: float
    slope_at_inf: float

    def __repr__(self) -> str:
        return f"DivergenceSpec({self.name})"


def _kl() -> DivergenceSpec:
    return DivergenceSpec(
        name="KL",
        f=lambda u: xlogy(u, u),
        f_conjugate=lambda t: np.exp(t - 1.0),
        f_prime=lambda u: 1.0 + np.log(u),
        activation=lambda v: v,
        activation_inverse=lambda t: t,
        activation_grad=lambda v: np.ones_like(v),
        conj_activation=lambda v: np.exp(v - 1.0),
        conj_activation_grad=lambda v: np.exp(v - 1.0),
        in_conj_domain=lambda t: np.isfinite(t),
        f_domain_min=0.0,
        f_domain_strict=False,
        f_at_zero=0.0,
        slope_at_inf=math.inf,
    )


def _rkl() -> DivergenceSpec:
    return DivergenceSpec(
        name="RKL",
        f=lambda u: -np.log(u),
        f_conjugate=lambda t: -1.0 - np.log(-t),
        f_prime=lambda u: -1.0 / u,
        activation=lambda v: -np.exp(-v),
        activation_inverse=lambda t: -np.log(-t),
        activation_grad=lambda v: np.exp(-v),
        conj_activation=lambda v: v - 1.0,
        conj_activation_grad=lambda v: np.ones_like(v),
        in_conj_domain=lambda t: t < 0,
        f_domain_min=0.0,
        f_domain_strict=True,
        f_at_zero=math.inf,
        slope_at_inf=0.0,
    )


def _js() -> DivergenceSpec:
    return DivergenceSpec(
        name="JS",
        f=lambda u: -(u + 1.0) * np.log((1.0 + u) / 2.0) + xlogy(u, u),
        f_conjugate=lambda t: -np.log(2.0 - np.exp(t)),
        f_prime=lambda u: np.log(2.0 * u / (1.0 + u)),
        activation=lambda v: LOG2 - np.logaddexp(0.0, -v),
        activation_inverse=lambda t: -np.log(2.0 * np.exp(-t) - 1.0),
        activation_grad=lambda v: expit(-v),
        conj_activation=lambda v: np.logaddexp(0.0, v) - LOG2,
        conj_activation_grad=lambda v: expit(v),
        in_conj_domain=lambda t: t < LOG2,
        f_domain_min=0.0,
        f_domain_strict=False,
        f_at_zero=LOG2,
        slope_at_inf=LOG2,
    )


def _tv_inverse(t):
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore"):
        v = np.arctanh(2.0 * t)
    return np.clip(v, -TV_SATURATION, TV_SATURATION)


def _tv() -> DivergenceSpec:
    def sech2_half(v):
        return 0.5 * (1.0 - np.tanh(v) ** 2)

    return DivergenceSpec(
        name="TV",
        f=lambda u: 0.5 * np.abs(u - 1.0),
        f_conjugate=lambda t: np.asarray(t, dtype=np.float64) * 1.0,
        f_prime=lambda u: 0.5 * np.sign(u - 1.0),
        activation=lambda v: 0.5 * np.tanh(v),
        activation_inverse=_tv_inverse,
        activation_grad=sech2_half,
        conj_activation=lambda v: 0.5 * np.tanh(v),
        conj_activation_grad=sech2_half,
        in_conj_domain=lambda t: np.abs(t) <= 0.5,
        f_domain_min=0.0,
        f_domain_strict=False,
        f_at_zero=0.5,
        slope_at_inf=0.5,
    )


SPECS: dict[str, DivergenceSpec] = {s.name: s for s in (_kl(), _rkl(), _js(), _tv())}


def get_spec(name: str | DivergenceSpec) -> DivergenceSpec:
    if isinstance(name, DivergenceSpec):
        return name
    try:
        return SPECS[name.upper()]
    except KeyError:
        raise InputError(f"unknown divergence {name!r}; expected one of {sorted(SPECS)}") from None


def divergence_table_entry(name: str, component: str, argument: float) -> float:
    """Evaluate one Table-style entry: ``f``, ``f*``, ``f'`` or ``g_f`` of a divergence."""
    spec = get_spec(name)
    x = float(argument)
    if component == "f":
        bad = x <= spec.f_domain_min if spec.f_domain_strict else x < spec.f_domain_min
        if bad or not math.isfinite(x):
            raise DomainError(f"{spec.name} f is undefined at u={x}")
        return float(spec.f(np.float64(x)))
    if component in ("f*", "f_conjugate"):
        if not spec.in_conj_domain(np.float64(x)):
            raise DomainError(f"{spec.name} f* is undefined at t={x} (outside conjugate domain)")
        return float(spec.f_conjugate(np.float64(x)))
    if component in ("f'", "f_prime"):
        if not (x > 0 or (spec.name == "TV" and x >= 0)) or not math.isfinite(x):
            raise DomainError(f"{spec.name} f' is undefined at u={x}")
        return float(spec.f_prime(np.float64(x)))
    if component in ("g_f", "g", "activation"):
        if not math.isfinite(x):
            raise DomainError(f"{spec.name} g_f needs a finite argument, got {x}")
        return float(spec.activation(np.float64(x)))
    raise InputError(f"unknown component {component!r}; expected f, f*, f' or g_f")


def f_divergence_terms(p: np.ndarray, q: np.ndarray, spec: DivergenceSpec) -> np.ndarray:
    """Elementwise contributions ``q * f(p / q)`` with the zero-mass conventions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    both = (p > 0) & (q > 0)
    out = np.zeros(np.broadcast(p, q).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(both, p / np.where(q > 0, q, 1.0), 1.0)
        out = np.where(both, q * spec.f(ratio), out)
    only_q = (p <= 0) & (q > 0)
    only_p = (p > 0) & (q <= 0)
    if spec.f_at_zero == math.inf:
        out = np.where(only_q, math.inf, out)
    else:
        out = np.where(only_q, q * spec.f_at_zero, out)
    if spec.slope_at_inf == math.inf:
        out = np.where(only_p, math.inf, out)
    else:
        out = np.where(only_p, p * spec.slope_at_inf, out)
    return out


def exact_f_divergence(p, q, spec: str | DivergenceSpec) -> float:
    """``sum_x q(x) f(p(x) / q(x))``; may return ``math.inf``."""
    spec = get_spec(spec)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InputError(f"support mismatch: {p.shape} vs {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise InputError(f"{name} is not a probability distribution")
    total = float(f_divergence_terms(p, q, spec).sum())
    return math.inf if total == math.inf else total


def batch_f_divergence(
    p: np.ndarray, q: np.ndarray, spec: DivergenceSpec, event_ndim: int = 1
) -> np.ndarray:
    """Divergences over the trailing ``event_ndim`` axes of batched tables (no validation)."""
    terms = f_divergence_terms(p, q, spec)
    return terms.sum(axis=tuple(range(terms.ndim - event_ndim, terms.ndim)))


def _traj_distributions(mdp: FiniteMdp, expert: TabularPolicy, learner: TabularPolicy, cap: int):
    pe = _check_pair(mdp, expert)
    pl = _check_pair(mdp, learner)
    # the 50/50 mixture has exactly the union of both trajectory supports
    states, actions, _ = _enumerate_arrays(mdp, 0.5 * (pe + pl), cap)
    return trajectory_probs(mdp, pe, states, actions), trajectory_probs(mdp, pl, states, actions)


def traj_divergence(
    mdp: FiniteMdp,
    expert: TabularPolicy,
    learner: TabularPolicy,
    spec: str | DivergenceSpec,
    cap: int = DEFAULT_BRANCH_CAP,
) -> float:
    spec = get_spec(spec)
    p, q = _traj_distributions(mdp, expert, learner, cap)
    total = float(f_divergence_terms(p, q, spec).sum())
    return math.inf if total == math.inf else total


def state_action_divergence(
    mdp: FiniteMdp, expert: TabularPolicy, learner: TabularPolicy, spec: str | DivergenceSpec
) -> float:
    spec = get_spec(spec)
    p = occupancy(mdp, expert).state_action
    q = occupancy(mdp, learner).state_action
    return float(f_divergence_terms(p, q, spec).sum())


def action_divergences(expert_probs: np.ndarray, learner_probs: np.ndarray, spec) -> np.ndarray:
    """Per-state divergence between expert and learner action distributions."""
    return f_divergence_terms(expert_probs, learner_probs, get_spec(spec)).sum(axis=-1)


def expected_action_divergence(
    mdp: FiniteMdp, expert: TabularPolicy, learner: TabularPolicy, spec: str | DivergenceSpec
) -> float:
    """``sum_s avg_state_learner(s) * D_f(expert(.|s), learner(.|s))``."""
    pe = _check_pair(mdp, expert)
    pl = _check_pair(mdp, learner)
    weights = occupancy(mdp, learner).avg_state
    per_state = action_divergences(pe, pl, spec)
    visited = weights > 0
    return float(np.sum(weights[visited] * per_state[visited]))


def divergence_gap(
    mdp: FiniteMdp,
    expert: TabularPolicy,
    learner: TabularPolicy,
    spec: str | DivergenceSpec,
    cap: int = DEFAULT_BRANCH_CAP,
) -> float:
    """Trajectory divergence minus state-action divergence (``inf`` if the former is)."""
    traj = traj_divergence(mdp, expert, learner, spec, cap)
    if traj == math.inf:
        return math.inf
    return traj - state_action_divergence(mdp, expert, learner, spec)
