import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filab.divergences import SPECS, exact_f_divergence
from filab.errors import DomainError, InputError, NumericalError
from filab.estimation import (
    Discriminator,
    SampleSet,
    ascend,
    estimator_blindness_demo,
    fit_discriminator,
    lsq_density_ratio,
    lsq_objective,
    optimal_discriminator,
    sample_from_table,
    variational_estimate,
)

NAMES = list(SPECS)


def cells(counts, num_states=1):
    """SampleSet over a single state whose actions are the cells."""
    actions = np.repeat(np.arange(len(counts)), counts)
    return SampleSet(np.zeros(actions.size, int), actions, num_states, len(counts))


def test_variational_trivial():
    s = cells([3, 2])
    assert variational_estimate(s, s, Discriminator(np.ones((1, 2))), "KL") == 0.0
    with pytest.raises(InputError):
        variational_estimate(cells([0, 0]), s, Discriminator(np.ones((1, 2))), "KL")


def test_optimal_discriminator_examples():
    np.testing.assert_allclose(optimal_discriminator([0.3, 0.7], [0.3, 0.7], "KL").weights, 1.0)
    np.testing.assert_allclose(optimal_discriminator([0.3, 0.7], [0.3, 0.7], "TV").weights, 0.0)
    V = optimal_discriminator([0.5, 0.5], [0.25, 0.75], "RKL").weights[0]
    np.testing.assert_allclose(V, [math.log(2), math.log(1 / 1.5)], atol=1e-15)
    np.testing.assert_allclose(SPECS["RKL"].activation(V), [-0.5, -1.5], atol=1e-15)
    with pytest.raises(DomainError):
        optimal_discriminator([0.5, 0.5], [1.0, 0.0], "KL")


def test_discriminator_rejects_nonfinite():
    with pytest.raises(NumericalError):
        Discriminator(np.array([[np.nan]]))


full = st.integers(2, 6).flatmap(lambda k: st.tuples(*[st.floats(0.02, 1.0)] * (2 * k)))


@settings(max_examples=150, deadline=None)
@given(full, st.integers(0, 2**31 - 1))
def test_lower_bound_and_tightness(vals, seed):
    k = len(vals) // 2
    p = np.array(vals[:k]) / sum(vals[:k])
    q = np.array(vals[k:]) / sum(vals[k:])
    P, Q = SampleSet.from_distribution(p), SampleSet.from_distribution(q)
    gen = np.random.default_rng(seed)
    for name in NAMES:
        exact = exact_f_divergence(p, q, name)
        tight = variational_estimate(P, Q, optimal_discriminator(p, q, name), name)
        assert abs(tight - exact) <= 1e-9
        V = Discriminator(gen.normal(scale=3, size=(1, k)))
        assert variational_estimate(P, Q, V, name) <= exact + 1e-9


def test_fit_monotone_with_small_rate():
    P, Q = cells([7, 2, 1]), cells([2, 3, 5])
    for name in NAMES:
        V = Discriminator.zeros(1, 3)
        prev = variational_estimate(P, Q, V, name)
        for _ in range(50):
            V = fit_discriminator(P, Q, name, 1, 1e-3, V)
            cur = variational_estimate(P, Q, V, name)
            assert cur >= prev - 1e-15
            prev = cur


def test_fit_examples():
    s = cells([4, 6])
    V = fit_discriminator(s, s, "KL", 2000, 0.5)
    assert abs(variational_estimate(s, s, V, "KL")) <= 0.05
    # an expert-only cell grows by lr * p_hat per step under KL
    P, Q = cells([5, 5]), cells([10, 0])
    ws = [fit_discriminator(P, Q, "KL", n, 0.1).weights[0, 1] for n in (1, 2, 3)]
    np.testing.assert_allclose(np.diff(ws), 0.05, atol=1e-15)
    a = fit_discriminator(P, Q, "JS", 20, 0.1).weights
    b = fit_discriminator(P, Q, "JS", 20, 0.1).weights
    np.testing.assert_array_equal(a, b)
    with pytest.raises(InputError):
        fit_discriminator(P, Q, "KL", 0, 0.1)
    with pytest.raises(InputError):
        fit_discriminator(P, Q, "KL", 1, 0.0)


def test_ascend_reports_step():
    p = np.array([[1.0, 0.0]])
    q = np.array([[0.0, 1.0]])
    with pytest.raises(NumericalError, match="step"):
        ascend(p, q, SPECS["KL"], 10, 1e308, np.zeros((1, 2)))


def test_lsq_examples():
    r = lsq_density_ratio(cells([6, 4]), cells([5, 5]), 0.1)
    np.testing.assert_allclose(r.values[0], [1.2, 0.8], atol=1e-15)
    s = cells([3, 3, 4])
    np.testing.assert_allclose(lsq_density_ratio(s, s, 0.5).values, 1.0)
    r = lsq_density_ratio(cells([1, 9, 0]), cells([9, 1, 0]), 0.2)
    np.testing.assert_allclose(r.values[0], [0.2, 5.0, 5.0])
    with pytest.raises(InputError):
        lsq_density_ratio(s, s, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_lsq_closed_form_vs_gradient_descent(seed, c):
    gen = np.random.default_rng(seed)
    num = sample_from_table(gen.dirichlet(np.ones(4))[None], 50, gen, "num")
    den = sample_from_table(gen.dirichlet(np.ones(4))[None], 50, gen, "den")
    r = lsq_density_ratio(num, den, c)
    assert np.all(r.values >= c) and np.all(r.values <= 1 / c)
    # projected gradient descent on the same objective over the box [c, 1/c]
    nd, dd = num.distribution(), den.distribution()
    g = np.ones_like(nd)
    for _ in range(20000):
        g = np.clip(g - 0.5 * (2 * dd * g - 2 * nd), c, 1 / c)
    seen = dd > 0
    np.testing.assert_allclose(g[seen], r.values[seen], atol=1e-6)
    assert lsq_objective(r.values, num, den) <= lsq_objective(g, num, den) + 1e-9


def test_blindness_examples():
    expert = [0.5, 0.5, 0.0]
    for n in (10, 1000):
        true, est = estimator_blindness_demo("KL", expert, [1.0, 0.0, 0.0], n, 0)
        assert true == math.inf and math.isfinite(est)
        true, est = estimator_blindness_demo("RKL", expert, [0.28, 0.28, 0.44], n, 0)
        assert true == math.inf and math.isfinite(est)
    true, est = estimator_blindness_demo("KL", [0.2, 0.3, 0.5], [0.2, 0.3, 0.5], 10_000, 0)
    assert true == 0.0 and abs(est) <= 0.05


def test_sample_set_validation():
    with pytest.raises(InputError):
        SampleSet([0, 1], [0], 2, 2)
    with pytest.raises(InputError):
        SampleSet([0, 2], [0, 0], 2, 2)
    s = SampleSet.from_trajectories(np.array([[0, 1, 1]]), np.array([[1, 0]]), 2, 2)
    np.testing.assert_array_equal(s.counts(), [[0, 1], [1, 0]])
