import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmvae import autodiff as ad
from gmvae import distributions as dist
from gmvae.errors import ConfigError, DomainError


def gauss(g, mean, var):
    return dist.DiagGaussian(g.const(np.asarray(mean, float)), g.const(np.asarray(var, float)))


def scalar(t):
    return float(np.asarray(t.value).reshape(()))


# gaussian_logpdf


@pytest.mark.parametrize("d", [1, 3, 8])
def test_logpdf_at_mean_with_unit_variance(d):
    g = ad.Graph()
    q = gauss(g, np.zeros(d), np.ones(d))
    assert scalar(dist.gaussian_logpdf(g.const(np.zeros(d)), q)) == pytest.approx(-d / 2 * math.log(2 * math.pi), rel=1e-15)


def test_logpdf_one_dimensional_value():
    g = ad.Graph()
    val = scalar(dist.gaussian_logpdf(g.const([1.0]), gauss(g, [0.0], [1.0])))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, rel=1e-15)
    assert val == pytest.approx(-1.4189, abs=1e-4)


def test_logpdf_matches_high_precision_oracle():
    rng = np.random.default_rng(11)
    x, mu = rng.normal(size=5), rng.normal(size=5)
    var = rng.uniform(0.1, 3.0, size=5)
    mpmath.mp.dps = 50
    oracle = mpmath.mpf(0)
    for xi, mi, vi in zip(x, mu, var):
        xi, mi, vi = mpmath.mpf(xi), mpmath.mpf(mi), mpmath.mpf(vi)
        oracle += -mpmath.log(2 * mpmath.pi) / 2 - mpmath.log(vi) / 2 - (xi - mi) ** 2 / (2 * vi)
    g = ad.Graph()
    got = scalar(dist.gaussian_logpdf(g.const(x), gauss(g, mu, var)))
    assert abs(got - float(oracle)) / abs(float(oracle)) <= 1e-12


def test_nonpositive_variance_is_a_domain_error():
    g = ad.Graph()
    with pytest.raises(DomainError):
        gauss(g, [0.0, 0.0], [1.0, 0.0])


# KL divergences


def test_kl_of_identical_gaussians_is_zero():
    g = ad.Graph()
    q = gauss(g, [0.3, -1.0], [0.5, 2.0])
    assert scalar(dist.kl_diag_gaussians(q, q)) == pytest.approx(0.0, abs=1e-15)


def test_kl_mean_shift_one_dimension():
    g = ad.Graph()
    assert scalar(dist.kl_diag_gaussians(gauss(g, [1.0], [1.0]), gauss(g, [0.0], [1.0]))) == pytest.approx(0.5, rel=1e-15)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(5)
    qm, qv = rng.normal(size=3), rng.uniform(0.3, 2.0, size=3)
    pm, pv = rng.normal(size=3), rng.uniform(0.3, 2.0, size=3)
    g = ad.Graph()
    closed = scalar(dist.kl_diag_gaussians(gauss(g, qm, qv), gauss(g, pm, pv)))
    xs = qm + np.sqrt(qv) * rng.standard_normal((1_000_000, 3))

    def logpdf(x, m, v):
        return (-0.5 * np.log(2 * np.pi * v) - (x - m) ** 2 / (2 * v)).sum(axis=1)

    ratio = logpdf(xs, qm, qv) - logpdf(xs, pm, pv)
    se = ratio.std(ddof=1) / math.sqrt(len(ratio))
    assert abs(ratio.mean() - closed) <= 3 * se


def test_kl_to_standard_normal_values():
    g = ad.Graph()
    assert scalar(dist.kl_to_standard_normal(gauss(g, [0.0, 0.0], [1.0, 1.0]))) == 0.0
    val = scalar(dist.kl_to_standard_normal(gauss(g, [0.0], [math.e])))
    assert val == pytest.approx(0.5 * (math.e - 1 - 1), rel=1e-14)
    assert val == pytest.approx(0.3591, abs=1e-4)


def test_kl_to_standard_normal_agrees_with_general_kl():
    rng = np.random.default_rng(8)
    for _ in range(20):
        d = rng.integers(1, 6)
        m, v = rng.normal(size=d), rng.uniform(0.05, 4.0, size=d)
        g = ad.Graph()
        q = gauss(g, m, v)
        a = scalar(dist.kl_to_standard_normal(q))
        b = scalar(dist.kl_diag_gaussians(q, gauss(g, np.zeros(d), np.ones(d))))
        assert abs(a - b) <= 1e-12


# Bernoulli


def test_bernoulli_half():
    g = ad.Graph()
    val = scalar(dist.bernoulli_loglik(g.const(np.full(4, 0.5)), g.const(np.full(4, 0.5))))
    assert val == pytest.approx(4 * math.log(0.5), rel=1e-15)
    assert val == pytest.approx(-2.7726, abs=1e-4)


def test_bernoulli_clamp_boundary():
    g = ad.Graph()
    val = scalar(dist.bernoulli_loglik(g.const([1.0, 1.0]), g.const([1.0, 1.0 - 1e-7])))
    assert val == pytest.approx(2 * math.log(1 - 1e-7), rel=1e-9)
    val0 = scalar(dist.bernoulli_loglik(g.const([1.0]), g.const([0.0])))
    assert val0 == pytest.approx(math.log(1e-7), rel=1e-12)


def test_bernoulli_matches_direct_formula():
    rng = np.random.default_rng(2)
    y = rng.uniform(size=50)
    p = rng.uniform(0.01, 0.99, size=50)
    oracle = math.fsum(yi * math.log(pi) + (1 - yi) * math.log(1 - pi) for yi, pi in zip(y, p))
    g = ad.Graph()
    got = scalar(dist.bernoulli_loglik(g.const(y), g.const(p)))
    assert abs(got - oracle) / abs(oracle) <= 1e-12


# reparameterised sampling


def test_reparam_zero_noise_returns_mean():
    g = ad.Graph()
    q = gauss(g, [0.4, -2.0], [3.0, 0.1])
    np.testing.assert_array_equal(dist.reparam_sample(q, np.zeros(2)).value, [0.4, -2.0])


def test_reparam_at_variance_floor_stays_near_mean():
    g = ad.Graph()
    eps = np.array([2.5, -1.0])
    q = gauss(g, [1.0, 1.0], [1e-6, 1e-6])
    out = dist.reparam_sample(q, eps).value
    assert np.all(np.abs(out - 1.0) <= math.sqrt(1e-6) * np.abs(eps) + 1e-15)


def test_reparam_sample_mean_clt():
    rng = np.random.default_rng(9)
    n = 100_000
    mu, var = np.array([0.7, -1.2]), np.array([2.0, 0.5])
    g = ad.Graph()
    q = gauss(g, np.tile(mu, (n, 1)), np.tile(var, (n, 1)))
    xs = dist.reparam_sample(q, rng.standard_normal((n, 2))).value
    assert np.all(np.abs(xs.mean(axis=0) - mu) <= 3 * np.sqrt(var / n))


def test_reparam_is_differentiable_in_mean_and_variance():
    g = ad.Graph()
    m = g.param(np.array([0.2, 0.1]), "m")
    v = g.param(np.array([1.3, 0.4]), "v")
    eps = g.const(np.array([0.5, -1.5]))
    root = ad.sum(ad.square(dist.reparam_sample(dist.DiagGaussian(m, v), eps)))
    assert ad.gradcheck(g, root) <= 1e-6


# z posterior


def components(g, means, variances):
    means = np.asarray(means, float)
    return gauss(g, means[None], np.asarray(variances, float)[None])


def test_identical_components_give_uniform_posterior():
    g = ad.Graph()
    comps = components(g, np.tile([0.5, 1.0], (4, 1)), np.ones((4, 2)))
    post = dist.z_posterior(g.const([[3.0, -1.0]]), comps)
    np.testing.assert_allclose(post.probs.value, np.full((1, 4), 0.25), rtol=1e-15)


def test_symmetric_two_components():
    g = ad.Graph()
    post = dist.z_posterior(g.const([[0.0]]), components(g, [[-1.0], [1.0]], [[1.0], [1.0]]))
    np.testing.assert_allclose(post.probs.value, [[0.5, 0.5]], rtol=1e-15)


def test_two_components_direct_evaluation():
    g = ad.Graph()
    post = dist.z_posterior(g.const([[0.0]]), components(g, [[0.0], [2.0]], [[1.0], [1.0]]))
    p1 = 1.0 / (1.0 + math.exp(-2.0))
    assert post.probs.value[0, 0] == pytest.approx(p1, rel=1e-14)
    assert post.probs.value[0, 0] == pytest.approx(0.8808, abs=1e-4)


def test_z_posterior_needs_components():
    g = ad.Graph()
    with pytest.raises(ConfigError):
        dist.z_posterior(g.const([[0.0]]), components(g, np.zeros((0, 1)), np.ones((0, 1))))


@settings(max_examples=100, deadline=None)
@given(
    k=st.integers(1, 8),
    d=st.integers(1, 4),
    scale=st.sampled_from([1.0, 10.0, 1e3]),
    seed=st.integers(0, 2**31 - 1),
)
def test_z_posterior_rows_sum_to_one(k, d, scale, seed):
    rng = np.random.default_rng(seed)
    g = ad.Graph()
    comps = gauss(g, scale * rng.uniform(-1, 1, size=(5, k, d)), rng.uniform(0.01, 5, size=(5, k, d)))
    post = dist.z_posterior(g.const(scale * rng.uniform(-1, 1, size=(5, d))), comps)
    assert np.all(np.abs(post.probs.value.sum(axis=1) - 1) <= 1e-9)
    np.testing.assert_allclose(np.exp(post.log_probs.value), post.probs.value, atol=1e-9)


def test_z_posterior_shift_invariance_at_extreme_magnitudes():
    rng = np.random.default_rng(4)
    means = rng.normal(size=(3, 5, 2))
    var = rng.uniform(0.2, 2.0, size=(3, 5, 2))
    x = rng.normal(size=(3, 2))
    g = ad.Graph()
    base = dist.z_posterior(g.const(x), gauss(g, means, var)).probs.value
    for shift in (1e3, -1e3):
        shifted = dist.z_posterior(g.const(x + shift), gauss(g, means + shift, var)).probs.value
        np.testing.assert_allclose(shifted, base, atol=1e-9)


def test_z_posterior_far_from_all_components_is_finite():
    g = ad.Graph()
    comps = components(g, [[-1e3], [1e3]], [[1.0], [1.0]])
    post = dist.z_posterior(g.const([[1e3 - 1.0]]), comps)
    np.testing.assert_allclose(post.probs.value, [[0.0, 1.0]], atol=1e-12)


def test_z_posterior_gradient():
    rng = np.random.default_rng(6)
    g = ad.Graph()
    x = g.param(rng.normal(size=(2, 3)), "x")
    m = g.param(rng.normal(size=(2, 4, 3)), "m")
    v = g.param(rng.uniform(0.5, 2.0, size=(2, 4, 3)), "v")
    post = dist.z_posterior(x, dist.DiagGaussian(m, v))
    root = ad.sum(post.probs * g.const(rng.normal(size=(2, 4)))) + ad.sum(dist.kl_categorical_uniform(post))
    assert ad.gradcheck(g, root) <= 1e-4


# categorical KL


def test_kl_uniform_posterior_is_zero():
    g = ad.Graph()
    c = dist.categorical_from_logits(g.const(np.zeros(6)))
    assert abs(scalar(dist.kl_categorical_uniform(c))) <= 1e-15


def test_kl_one_hot_is_log_k():
    g = ad.Graph()
    c = dist.categorical_from_logits(g.const(np.r_[0.0, np.full(9, -1e4)]))
    assert scalar(dist.kl_categorical_uniform(c, 10)) == pytest.approx(math.log(10), rel=1e-15)


def test_kl_categorical_matches_term_by_term_oracle():
    rng = np.random.default_rng(12)
    logits = rng.normal(size=7)
    p = np.exp(logits) / np.exp(logits).sum()
    oracle = math.fsum(pk * (math.log(pk) - math.log(1 / 7)) for pk in p)
    g = ad.Graph()
    got = scalar(dist.kl_categorical_uniform(dist.categorical_from_logits(g.const(logits))))
    assert abs(got - oracle) / oracle <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_kl_bounds(logits):
    g = ad.Graph()
    k = len(logits)
    val = scalar(dist.kl_categorical_uniform(dist.categorical_from_logits(g.const(logits))))
    assert -1e-12 <= val <= math.log(k) + 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 5))
def test_gaussian_kls_are_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    g = ad.Graph()
    q = gauss(g, rng.normal(size=d) * 3, rng.uniform(1e-3, 10, size=d))
    p = gauss(g, rng.normal(size=d) * 3, rng.uniform(1e-3, 10, size=d))
    assert scalar(dist.kl_diag_gaussians(q, p)) >= -1e-12
    assert scalar(dist.kl_to_standard_normal(q)) >= -1e-12


def test_gaussian_kl_gradients():
    rng = np.random.default_rng(13)
    g = ad.Graph()
    qm, qv = g.param(rng.normal(size=(2, 3)), "qm"), g.param(rng.uniform(0.5, 2, size=(2, 3)), "qv")
    pm, pv = g.param(rng.normal(size=(2, 3)), "pm"), g.param(rng.uniform(0.5, 2, size=(2, 3)), "pv")
    q, p = dist.DiagGaussian(qm, qv), dist.DiagGaussian(pm, pv)
    root = ad.sum(dist.kl_diag_gaussians(q, p)) + ad.sum(dist.kl_to_standard_normal(q))
    root = root + ad.sum(dist.gaussian_logpdf(pm, q))
    assert ad.gradcheck(g, root) <= 1e-6
