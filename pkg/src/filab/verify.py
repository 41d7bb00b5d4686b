"""Randomised numerical checks of the inequalities and identities the library relies on.

Every check takes ``mutate``; the mutated variant plants a plausible bug
(reversed inequality, wrong weighting, swapped samples, ...) and must fail,
which shows the check can detect a violation at all.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from filab.divergences import (
    SPECS,
    action_divergences,
    exact_f_divergence,
    expected_action_divergence,
    get_spec,
    state_action_divergence,
    traj_divergence,
)
from filab.estimation import (
    _objective_tables,
    estimator_blindness_demo,
    lsq_density_ratio,
    optimal_discriminator,
    sample_from_table,
)
from filab.mdp import FiniteMdp, TabularPolicy, occupancy

SLACK = 1e-9
FLOOR = 1e-3
ALL_SPECS = tuple(SPECS)


@dataclass
class CheckReport:
    name: str
    instances: int = 0
    failures: list[str] = field(default_factory=list)
    max_violation: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def record(self, violation: float, tol: float, counterexample: dict) -> None:
        """Count one instance; ``violation > tol`` is a failure."""
        self.instances += 1
        if math.isnan(violation):
            violation = math.inf
        self.max_violation = max(self.max_violation, violation)
        if violation > tol and len(self.failures) < 20:
            self.failures.append(json.dumps(counterexample, default=_jsonable))
        elif violation > tol:
            self.failures.append("...")

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.instances} instances, {len(self.failures)} failures, max violation {self.max_violation:.3g}"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


# -- random instances --------------------------------------------------------


def floored_dirichlet(rng: np.random.Generator, k: int, size=()) -> np.ndarray:
    """Dirichlet(1, ..., 1) draws floored at 1e-3 and renormalised."""
    x = rng.dirichlet(np.ones(k), size=size)
    x = np.maximum(x, FLOOR)
    return x / x.sum(axis=-1, keepdims=True)


def random_instance(rng: np.random.Generator, horizon: int | None = None):
    """Random full-support (mdp, expert, learner): |S| in {2,3,4}, |A| in {2,3}, H in 1..4."""
    S = int(rng.integers(2, 5))
    A = int(rng.integers(2, 4))
    H = int(rng.integers(1, 5)) if horizon is None else horizon
    mdp = FiniteMdp(floored_dirichlet(rng, S, (S, A)), floored_dirichlet(rng, S), H)
    expert = TabularPolicy(floored_dirichlet(rng, A, S))
    learner = TabularPolicy(floored_dirichlet(rng, A, S))
    return mdp, expert, learner


def _instance_dict(mdp: FiniteMdp, expert: TabularPolicy, learner: TabularPolicy) -> dict:
    return {
        "transition": mdp.transition, "initial": mdp.initial, "horizon": mdp.horizon,
        "expert": expert.probs, "learner": learner.probs,
    }


# -- checks -------------------------------------------------------------------


def check_log_sum(n_pairs: int = 10_000, specs=ALL_SPECS, seed: int = 0, mutate: bool = False) -> CheckReport:
    """sum_i q_i f(p_i / q_i) >= (sum q) f(sum p / sum q) for non-negative p, positive q.

    Mutation: the inequality is asserted the other way round.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("log_sum")
    for name in specs:
        spec = get_spec(name)
        for _ in range(n_pairs // len(specs)):
            k = int(rng.integers(2, 6))
            p = rng.exponential(size=k) * (rng.random(k) > 0.2)
            q = rng.exponential(size=k) + 1e-3
            with np.errstate(divide="ignore", invalid="ignore"):
                lhs = float(np.sum(q * spec.f(p / q)))
                rhs = float(q.sum() * spec.f(p.sum() / q.sum()))
            violation = (lhs - rhs) if mutate else (rhs - lhs)
            if lhs == rhs == math.inf:
                violation = 0.0
            report.record(violation, SLACK, {"spec": spec.name, "p": p, "q": q})
    return report


def check_information_loss(n_pairs: int = 1000, specs=ALL_SPECS, seed: int = 0, mutate: bool = False) -> CheckReport:
    """D_f(P_a, Q_a) >= D_f(P_b, Q_b) when both joints share one conditional P(b|a) = Q(b|a).

    Mutation: the learner side gets its own conditional, breaking the precondition.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("information_loss")
    for name in specs:
        spec = get_spec(name)
        for _ in range(n_pairs):
            na, nb = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            pa, qa = floored_dirichlet(rng, na), floored_dirichlet(rng, na)
            cond = floored_dirichlet(rng, nb, na)
            cond_q = floored_dirichlet(rng, nb, na) if mutate else cond
            d_a = exact_f_divergence(pa, qa, spec)
            d_b = exact_f_divergence(pa @ cond, qa @ cond_q, spec)
            report.record(d_b - d_a, SLACK, {"spec": spec.name, "pa": pa, "qa": qa, "cond": cond})
    return report


def check_thm1(n_mdps: int = 200, specs=ALL_SPECS, seed: int = 0, mutate: bool = False) -> CheckReport:
    """Trajectory divergence >= average state-action divergence.

    Mutation: the inequality is asserted the other way round.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("thm1")
    for _ in range(n_mdps):
        mdp, expert, learner = random_instance(rng)
        for name in specs:
            traj = traj_divergence(mdp, expert, learner, name)
            sa = state_action_divergence(mdp, expert, learner, name)
            violation = (traj - sa) if mutate else (sa - traj)
            report.record(violation, SLACK, {"spec": name, **_instance_dict(mdp, expert, learner)})
    return report


def check_rkl_equality(n_mdps: int = 200, seed: int = 0, mutate: bool = False) -> CheckReport:
    """Trajectory RKL equals H times the learner-weighted expected action RKL.

    Mutation: the action divergences are weighted by the expert's state occupancy.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("rkl_equality")
    for _ in range(n_mdps):
        mdp, expert, learner = random_instance(rng)
        traj = traj_divergence(mdp, expert, learner, "RKL")
        if mutate:
            per_state = action_divergences(expert.probs, learner.probs, "RKL")
            expected = float(occupancy(mdp, expert).avg_state @ per_state)
        else:
            expected = expected_action_divergence(mdp, expert, learner, "RKL")
        report.record(abs(traj - mdp.horizon * expected), SLACK, _instance_dict(mdp, expert, learner))
    return report


def check_tv_chain(n_mdps: int = 200, seed: int = 0, mutate: bool = False) -> CheckReport:
    """TV(traj) <= H E[TV(action)] <= H sqrt(E[KL(action)]).

    Mutation: the horizon factor is dropped from the middle term.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("tv_chain")
    for _ in range(n_mdps):
        mdp, expert, learner = random_instance(rng)
        H = mdp.horizon
        traj = traj_divergence(mdp, expert, learner, "TV")
        middle = (1 if mutate else H) * expected_action_divergence(mdp, expert, learner, "TV")
        outer = H * math.sqrt(expected_action_divergence(mdp, expert, learner, "KL"))
        violation = max(traj - middle, middle - outer) if not mutate else traj - middle
        report.record(violation, SLACK, _instance_dict(mdp, expert, learner))
    return report


def check_variational_tightness(
    n_pairs: int = 1000, n_random: int = 1000, specs=ALL_SPECS, seed: int = 0, mutate: bool = False
) -> CheckReport:
    """With exact expectations the objective equals the divergence at the optimal
    discriminator and never exceeds it elsewhere.

    Mutation: expert and learner expectations are swapped in the objective.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("variational_tightness")
    for name in specs:
        spec = get_spec(name)
        for _ in range(n_pairs):
            k = int(rng.integers(2, 6))
            p, q = floored_dirichlet(rng, k)[None], floored_dirichlet(rng, k)[None]
            exact = exact_f_divergence(p, q, spec)
            a, b = (q, p) if mutate else (p, q)
            V_star = optimal_discriminator(p, q, spec).weights
            tight = float(_objective_tables(a, b, V_star, spec))
            V_rand = rng.normal(scale=3.0, size=(n_random, 1, k))
            loose = _objective_tables(a[None], b[None], V_rand, spec)
            violation = max(abs(tight - exact), float(np.max(loose)) - exact)
            report.record(violation, SLACK, {"spec": spec.name, "p": p, "q": q})
    return report


def dre_bound(N: int, c: float, cells: int, delta: float, grid_size: int = 401, power: float = 0.25) -> float:
    """(2 / c) sqrt(log(2 |G| / delta)) N^(-power) with |G| = grid_size ** cells."""
    log_G = cells * math.log(grid_size)
    return (2.0 / c) * math.sqrt(math.log(2.0 / delta) + log_G) * N ** (-power)


def check_dre_bound(
    cells: int = 4,
    n_grid=(100, 1000, 10_000),
    trials: int = 100,
    delta: float = 0.1,
    seed: int = 0,
    mutate: bool = False,
) -> CheckReport:
    """Least-squares ratio error sum_z q(z) |r_hat(z) - p(z)/q(z)| stays under the bound in
    at least (1 - delta) of the trials at every N, and its mean falls as N grows.

    Each trial draws a fresh full-support pair and uses c = its smallest cell mass.
    Mutation: the bound decays like N^-1 instead of N^-1/4.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("dre_bound")
    means = []
    for N in n_grid:
        errors, inside = [], 0
        for _ in range(trials):
            p, q = floored_dirichlet(rng, cells), floored_dirichlet(rng, cells)
            c = float(min(p.min(), q.min()))
            num = sample_from_table(p, N, rng, "numerator")
            den = sample_from_table(q, N, rng, "denominator")
            r_hat = lsq_density_ratio(num, den, c).values[0]
            err = float(np.sum(q * np.abs(r_hat - p / q)))
            errors.append(err)
            inside += err <= dre_bound(N, c, cells, delta, power=1.0 if mutate else 0.25)
        frac = inside / trials
        means.append(float(np.mean(errors)))
        report.record((1.0 - delta) - frac, 0.0, {"N": N, "fraction_within": frac})
    for i in range(1, len(means)):
        report.record(means[i] - means[i - 1], -1e-15, {"N": n_grid[i], "mean_errors": means})
    return report


BLINDNESS_BUDGETS = (10, 100, 1000, 10_000)


def check_blindness(seed: int = 0, budgets=BLINDNESS_BUDGETS, mutate: bool = False) -> CheckReport:
    """Support-mismatched pairs have infinite divergence but finite estimates; for RKL
    with learner mass off the expert support the estimate grows with fitting steps;
    identical pairs give estimates near 0.

    Mutation: the estimator is held to consistency (|estimate - true| <= 0.05) on
    the mismatched pairs.
    """
    report = CheckReport("blindness")
    expert = np.array([0.5, 0.5, 0.0])
    cases = (("KL", expert, np.array([1.0, 0.0, 0.0])), ("RKL", expert, np.array([0.28, 0.28, 0.44])))
    for name, p, q in cases:
        for n in budgets:
            true, est = estimator_blindness_demo(name, p, q, n, seed)
            if mutate:
                violation = abs(true - est) - 0.05
            else:
                violation = 0.0 if (true == math.inf and math.isfinite(est)) else math.inf
            report.record(violation, 0.0, {"spec": name, "n": n, "true": true, "estimate": est})
    ests = [estimator_blindness_demo("RKL", expert, cases[1][2], 1000, seed, steps=s)[1] for s in (50, 500, 5000)]
    report.record(max(ests[0] - ests[1], ests[1] - ests[2]), 0.0, {"rkl_estimates_by_steps": ests})
    same = np.array([0.3, 0.3, 0.4])
    true, est = estimator_blindness_demo("KL", same, same, 10_000, seed)
    report.record(abs(est - true) - 0.05, 0.0, {"spec": "KL", "identical": True, "estimate": est})
    return report


CHECKS: dict[str, Callable[..., CheckReport]] = {
    "log_sum": check_log_sum,
    "information_loss": check_information_loss,
    "thm1": check_thm1,
    "rkl_equality": check_rkl_equality,
    "tv_chain": check_tv_chain,
    "variational_tightness": check_variational_tightness,
    "dre_bound": check_dre_bound,
    "blindness": check_blindness,
}


def run_checks(names=None, seed: int = 0, mutate=()) -> list[CheckReport]:
    """Run the named checks (all by default); names listed in ``mutate`` run mutated."""
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in list(names) + list(mutate) if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [CHECKS[n](seed=seed, mutate=n in mutate) for n in names]


__all__ = [
    "CHECKS",
    "CheckReport",
    "check_blindness",
    "check_dre_bound",
    "check_information_loss",
    "check_log_sum",
    "check_rkl_equality",
    "check_thm1",
    "check_tv_chain",
    "check_variational_tightness",
    "dre_bound",
    "floored_dirichlet",
    "random_instance",
    "run_checks",
]
