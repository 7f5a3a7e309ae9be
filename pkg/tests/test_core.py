import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    EXAMPLE_CLICKS,
    EXAMPLE_NC,
    EXAMPLE_SLATES,
    brute_log_posterior,
    central_difference,
    compositions,
    exact_log_multinomial_pmf,
    gamma_logpdf_direct,
)
from slatebayes import (
    Dataset,
    LogPosterior,
    ModelKind,
    ModelParams,
    PriorConfig,
    Slate,
    SlateRecord,
    full_probs,
    grad_log_posterior,
    log_multinomial_pmf,
    log_posterior,
    log_prior,
    rank_probs,
    reward_probs,
    to_rank_view,
    to_reward_view,
    view_for,
)

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@st.composite
def params_and_slate(draw, max_items=8):
    n = draw(st.integers(2, max_items))
    k = draw(st.integers(2, n))
    theta = draw(st.lists(positive, min_size=n, max_size=n))
    phi = draw(positive)
    items = draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True))
    return ModelParams(theta, phi), Slate.of(items)


# -- types ---------------------------------------------------------------------


def test_slate_validation():
    assert Slate.of([2, 0, 1]).items == (0, 1, 2)
    with pytest.raises(ValueError):
        Slate((1, 0))
    with pytest.raises(ValueError):
        Slate((3,))
    with pytest.raises(ValueError):
        Slate.of([1, 1])
    with pytest.raises(ValueError):
        Slate((0, 3)).check(3)


def test_record_derived_counts():
    rec = SlateRecord(Slate((0, 1)), 661, (10, 29))
    assert rec.total_clicks == 39
    assert rec.impressions == 700


def test_dataset_rejects_bad_rows():
    with pytest.raises(ValueError, match="duplicate"):
        Dataset(3, 2, [[0, 1], [0, 1]], [1, 1], [[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        Dataset(3, 2, [[0, 3]], [1], [[0, 0]])
    with pytest.raises(ValueError):
        Dataset(3, 2, [[1, 0]], [1], [[0, 0]])
    with pytest.raises(ValueError):
        Dataset(3, 2, [[0, 1]], [-1], [[0, 0]])


def test_dataset_is_immutable(example):
    with pytest.raises(ValueError):
        example.clicks[0, 0] = 5
    with pytest.raises(AttributeError):
        example.view = "rank"


def test_model_params_invariants():
    with pytest.raises(ValueError):
        ModelParams([1.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        ModelParams([1.0, 2.0], 0.0)
    with pytest.raises(ValueError):
        ModelParams([1.0, math.inf])
    p = ModelParams([1.0, 2.0], 3.0)
    back = ModelParams.from_log(p.to_log(), "full")
    np.testing.assert_allclose(back.theta, p.theta, rtol=1e-15)
    assert back.phi == pytest.approx(p.phi, rel=1e-15)
    assert ModelParams.from_log(np.log([1.0, 2.0]), "rank").phi is None


def test_prior_config_invariants():
    with pytest.raises(ValueError):
        PriorConfig(theta_shape=0)
    with pytest.raises(ValueError):
        PriorConfig(phi_rate=-1)


# -- probabilities ---------------------------------------------------------------


def test_full_probs_examples():
    q, p = full_probs(ModelParams([1, 6], 100), [0, 1])
    assert q == pytest.approx(100 / 107, abs=1e-15)
    np.testing.assert_allclose(p, [1 / 107, 6 / 107], atol=1e-15)

    q, p = full_probs(ModelParams([3.5, 3.5], 100), [0, 1])
    assert q == pytest.approx(100 / 107)
    np.testing.assert_allclose(p, [3.5 / 107, 3.5 / 107])


def test_full_probs_phi_to_zero_limit():
    q, p = full_probs(ModelParams([1, 1], 1e-300), [0, 1])
    assert q < 1e-299
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-15)


def test_full_probs_requires_phi_and_valid_slate():
    with pytest.raises(ValueError):
        full_probs(ModelParams([1, 6]), [0, 1])
    with pytest.raises(ValueError):
        full_probs(ModelParams([1, 6], 100), [0, 2])


def test_reward_probs_examples():
    q, p = reward_probs(ModelParams([1, 6], 100), [0, 1])
    assert (q, p) == pytest.approx((100 / 107, 7 / 107))
    q, p = reward_probs(ModelParams([1, 6], 7), [0, 1])
    assert (q, p) == pytest.approx((0.5, 0.5), abs=1e-15)


def test_rank_probs_examples():
    np.testing.assert_allclose(rank_probs([2, 2], [0, 1]), [0.5, 0.5])
    np.testing.assert_allclose(rank_probs([1, 6], [0, 1]), [1 / 7, 6 / 7])
    np.testing.assert_allclose(rank_probs([10, 60], [0, 1]), [1 / 7, 6 / 7])
    with pytest.raises(ValueError):
        rank_probs([1, 6], [0, 2])


@settings(max_examples=200, deadline=None)
@given(params_and_slate())
def test_probabilities_normalize(ps):
    params, slate = ps
    q, p = full_probs(params, slate)
    assert abs(q + p.sum() - 1) < 1e-12
    assert 0 < q < 1 and np.all((p > 0) & (p < 1))
    q2, p2 = reward_probs(params, slate)
    assert abs(q2 + p2 - 1) < 1e-12
    assert abs(rank_probs(params.theta, slate).sum() - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(params_and_slate(), st.floats(min_value=1e-3, max_value=1e3))
def test_joint_scale_invariance(ps, c):
    params, slate = ps
    scaled = ModelParams(c * params.theta, c * params.phi)
    q, p = full_probs(params, slate)
    qs, pss = full_probs(scaled, slate)
    assert abs(q - qs) < 1e-12
    np.testing.assert_allclose(p, pss, rtol=0, atol=1e-12)
    assert reward_probs(scaled, slate) == pytest.approx(reward_probs(params, slate), abs=1e-12)
    np.testing.assert_allclose(rank_probs(c * params.theta, slate),
                               rank_probs(params.theta, slate), rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(params_and_slate())
def test_reward_is_aggregated_full(ps):
    params, slate = ps
    q, p = full_probs(params, slate)
    qr, pr = reward_probs(params, slate)
    assert abs(q - qr) < 1e-12
    assert abs(p.sum() - pr) < 1e-12


@settings(max_examples=100, deadline=None)
@given(params_and_slate(), st.lists(st.integers(0, 40), min_size=8, max_size=8))
def test_full_term_without_phi_equals_rank_term(ps, raw_counts):
    # with nc = 0 and phi dropped from the denominator the full-model term is
    # exactly the rank-model term
    params, slate = ps
    clicks = raw_counts[:len(slate)]
    t = params.theta[list(slate.items)]
    full_no_phi = log_multinomial_pmf([0, *clicks], [0.0, *(t / t.sum())])
    assert full_no_phi == pytest.approx(
        log_multinomial_pmf(clicks, rank_probs(params.theta, slate)), rel=1e-12, abs=1e-12)


# -- densities ------------------------------------------------------------------------


def test_log_multinomial_pmf_examples():
    assert log_multinomial_pmf([1, 1], [0.5, 0.5]) == pytest.approx(math.log(0.5))
    assert log_multinomial_pmf([3, 0], [1.0, 0.0]) == 0.0
    assert log_multinomial_pmf([1, 2], [1.0, 0.0]) == -math.inf


def test_log_multinomial_pmf_matches_exact_rational():
    q, p = full_probs(ModelParams([1, 6], 100), [0, 1])
    expected = exact_log_multinomial_pmf(
        [661, 10, 29], [Fraction(100, 107), Fraction(1, 107), Fraction(6, 107)])
    assert log_multinomial_pmf([661, 10, 29], [q, *p]) == pytest.approx(expected, rel=1e-12)


def test_log_multinomial_pmf_large_counts_finite():
    v = log_multinomial_pmf([9_000_000, 600_000, 400_000], [0.9, 0.06, 0.04])
    assert math.isfinite(v) and v <= 0


def test_log_multinomial_pmf_argument_errors():
    with pytest.raises(ValueError):
        log_multinomial_pmf([1, 2, 3], [0.5, 0.5])
    with pytest.raises(ValueError):
        log_multinomial_pmf([1, 2], [0.5, 0.6])


@pytest.mark.parametrize("outcomes", [2, 3])
@pytest.mark.parametrize("trials", range(0, 7))
def test_log_multinomial_pmf_sums_to_one(outcomes, trials, rng):
    probs = rng.dirichlet(np.ones(outcomes))
    total = sum(math.exp(log_multinomial_pmf(c, probs)) for c in compositions(trials, outcomes))
    assert abs(total - 1) < 1e-10


def test_log_prior_examples():
    prior = PriorConfig(1.0, 0.001, 1.0, 0.001)
    assert log_prior(ModelParams([1.0]), prior, "rank") == pytest.approx(math.log(0.001) - 0.001)
    assert log_prior(ModelParams([1.0, 2.0], 3.0), prior, "full") == pytest.approx(
        3 * math.log(0.001) - 0.001 * 6)
    # rank ignores phi even when present
    assert log_prior(ModelParams([1.0], 5.0), prior, "rank") == pytest.approx(
        math.log(0.001) - 0.001)


def test_log_prior_matches_direct_gamma_density():
    prior = PriorConfig(2.0, 1.0, 3.0, 0.5)
    params = ModelParams([1.0, 0.3], 4.0)
    expected = (gamma_logpdf_direct(1.0, 2.0, 1.0) + gamma_logpdf_direct(0.3, 2.0, 1.0)
                + gamma_logpdf_direct(4.0, 3.0, 0.5))
    assert log_prior(params, prior, "full") == pytest.approx(expected, rel=1e-14)
    # Gamma(2, 1) at 1 is log(1) - 1 + const with const = 2 log 1 - log Gamma(2) = 0
    assert log_prior(ModelParams([1.0]), PriorConfig(2.0, 1.0), "rank") == pytest.approx(-1.0)


# -- posterior ----------------------------------------------------------------------------


def _empty(n=3, k=2, view="raw"):
    width = 1 if view == "reward" else k
    return Dataset(n, k, np.zeros((0, k)), np.zeros(0), np.zeros((0, width)), view=view)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_log_posterior_empty_dataset_is_prior(kind):
    params = ModelParams([1.0, 2.0, 3.0], 50.0)
    prior = PriorConfig()
    got = log_posterior(kind, _empty(view=kind.view), params, prior)
    assert got == pytest.approx(log_prior(params, prior, kind), rel=1e-14)


def test_log_posterior_single_record():
    ds = Dataset(2, 2, [[0, 1]], [661], [[10, 29]])
    params = ModelParams([1.0, 6.0], 100.0)
    q, p = full_probs(params, [0, 1])
    expected = log_multinomial_pmf([661, 10, 29], [q, *p]) + log_prior(params, PriorConfig(), "full")
    assert log_posterior("full", ds, params) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_log_posterior_example_matches_per_record_sum(kind, example, rng):
    prior = PriorConfig(1.5, 0.01, 2.5, 0.02)
    for _ in range(5):
        theta, phi = rng.uniform(0.2, 8, size=3), rng.uniform(10, 200)
        params = ModelParams(theta, phi)
        expected = brute_log_posterior(kind.value, EXAMPLE_SLATES, EXAMPLE_NC, EXAMPLE_CLICKS,
                                       theta, phi, prior)
        got = log_posterior(kind, view_for(kind, example), params, prior)
        assert got == pytest.approx(expected, rel=1e-12)


def test_log_posterior_requires_matching_view(example):
    with pytest.raises(ValueError, match="view"):
        log_posterior("reward", example, ModelParams([1, 2, 3], 10.0))
    with pytest.raises(ValueError):
        log_posterior("full", example, ModelParams([1, 2], 10.0))


def test_rank_records_without_clicks_contribute_nothing():
    ds = to_rank_view(Dataset(3, 2, [[0, 1], [0, 2]], [50, 70], [[3, 4], [0, 0]]))
    only = to_rank_view(Dataset(3, 2, [[0, 1]], [50], [[3, 4]]))
    params = ModelParams([1.0, 2.0, 3.0])
    assert log_posterior("rank", ds, params) == pytest.approx(log_posterior("rank", only, params))


# -- gradient ------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", list(ModelKind))
def test_gradient_matches_finite_differences_example(kind, example, rng):
    ds = view_for(kind, example)
    obj = LogPosterior(kind, ds, PriorConfig())
    for _ in range(10):
        x = rng.uniform(-1, 3, size=obj.dim)
        g = grad_log_posterior(kind, ds, x)
        fd = central_difference(obj, x, h=1e-6)
        assert np.all(np.abs(g - fd) <= 1e-5 * np.maximum(np.abs(fd), 1.0))


def test_gradient_sign_with_only_non_clicks():
    ds = Dataset(3, 2, [[0, 1], [0, 2], [1, 2]], [100, 100, 100], np.zeros((3, 2)))
    obj = LogPosterior("full", ds, PriorConfig(), include_constants=False)
    x = np.log([1.0, 2.0, 3.0, 50.0])
    lik = lambda z: obj.log_likelihood(z)  # noqa: E731
    fd = central_difference(lik, x)
    assert np.all(fd[:3] < 0)
    assert fd[3] > 0


def test_gradient_rejects_non_finite(example):
    with pytest.raises(ValueError):
        grad_log_posterior("full", example, [0.0, np.nan, 0.0, 1.0])
    with pytest.raises(ValueError):
        grad_log_posterior("full", example, [0.0, 0.0, 1.0])


@pytest.mark.parametrize("kind", list(ModelKind))
def test_hessian_matches_finite_differences(kind, example, rng):
    ds = view_for(kind, example)
    obj = LogPosterior(kind, ds, PriorConfig())
    x = rng.uniform(-1, 3, size=obj.dim)
    H = obj.hessian(x)
    fd = np.column_stack([central_difference(lambda z: obj.grad(z)[i], x, h=1e-5)
                          for i in range(obj.dim)])
    np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-4)
    assert np.all(np.linalg.eigvalsh(H) < 0)


def test_views_keep_the_likelihood_consistent(example):
    # reward view of raw data equals the full model with clicks pooled per slate
    params = ModelParams([1.0, 3.0, 2.0], 80.0)
    pooled = 0.0
    for s, nc, c in zip(EXAMPLE_SLATES, EXAMPLE_NC, EXAMPLE_CLICKS):
        q, p = reward_probs(params, s)
        pooled += log_multinomial_pmf([nc, sum(c)], [q, p])
    got = LogPosterior("reward", to_reward_view(example)).log_likelihood(params.to_log())
    assert got == pytest.approx(pooled, rel=1e-13)
