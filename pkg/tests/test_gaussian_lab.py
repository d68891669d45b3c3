import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdiag import gaussian_lab as gl
from gibbsdiag.core_engine import make_rng
from conftest import random_correlated_spd, random_spd

RKL = gl.DivergenceKind.REVERSE_KL
FKL = gl.DivergenceKind.FORWARD_KL


def toy(prior_cov, like_cov, n_obs=1, mean=None):
    prior_cov = np.asarray(prior_cov, dtype=float)
    d = prior_cov.shape[0]
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    return gl.GaussianToyModel(
        prior=gl.GaussianDist(mean, prior_cov),
        likelihood_cov=np.asarray(like_cov, dtype=float),
        n_obs=n_obs,
    )


def test_gaussian_dist_validation():
    with pytest.raises(ValueError, match="symmetric"):
        gl.GaussianDist(np.zeros(2), np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(ValueError, match="positive definite"):
        gl.GaussianDist(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="dimensions"):
        gl.GaussianDist(np.zeros(3), np.eye(2))


def test_exact_posterior_equal_precision_average():
    model = toy(np.eye(2), np.eye(2), n_obs=1)
    post = gl.exact_posterior(model, np.array([[2.0, 0.0]]))
    assert np.allclose(post.mean, [1.0, 0.0], atol=1e-14)
    assert np.allclose(post.covariance, 0.5 * np.eye(2), atol=1e-14)


def test_exact_posterior_precision_weighting():
    model = toy(np.eye(2), np.eye(2), n_obs=4)
    Y = np.tile([2.0, 0.0], (4, 1))
    post = gl.exact_posterior(model, Y)
    assert np.allclose(post.mean, [1.6, 0.0], atol=1e-14)
    assert np.allclose(post.covariance, 0.2 * np.eye(2), atol=1e-14)


def test_exact_posterior_bayes_grid_oracle(rng):
    # log posterior minus (log prior + log likelihood) must be constant in theta
    d, n = 3, 5
    model = toy(random_spd(rng, d), random_spd(rng, d), n_obs=n, mean=rng.standard_normal(d))
    Y = rng.standard_normal((n, d))
    post = gl.exact_posterior(model, Y)
    like = gl.GaussianDist(np.zeros(d), model.likelihood_cov)
    consts = []
    for _ in range(100):
        theta = rng.standard_normal(d) * 2.0
        log_joint = model.prior.logpdf(theta) + sum(
            like.logpdf(Y[i] - theta) for i in range(n)
        )
        consts.append(post.logpdf(theta) - log_joint)
    assert np.max(consts) - np.min(consts) < 1e-8


def test_mean_field_fixed_point_on_diagonal_posterior():
    post = gl.GaussianDist(np.array([1.0, -2.0]), np.diag([0.5, 2.0]))
    for kind in (RKL, FKL):
        approx = gl.mean_field_approx(post, kind)
        assert np.allclose(approx.mean, post.mean, atol=1e-15)
        assert np.allclose(approx.covariance, post.covariance, atol=1e-15)


def test_mean_field_two_by_two_hand_values():
    # inv([[2,1],[1,2]]) = [[2,-1],[-1,2]]/3, so matched precisions give 1.5
    post = gl.GaussianDist(np.zeros(2), np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(
        gl.mean_field_approx(post, RKL).covariance, np.diag([1.5, 1.5]), atol=1e-12
    )
    assert np.allclose(
        gl.mean_field_approx(post, FKL).covariance, np.diag([2.0, 2.0]), atol=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 6))
def test_mean_field_variance_ordering(seed, d):
    # per-coordinate variances: matched-precision <= matched-marginals,
    # strictly when the covariance has off-diagonal mass
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d)
    post = gl.GaussianDist(np.zeros(d), cov)
    v_r = np.diag(gl.mean_field_approx(post, RKL).covariance)
    v_f = np.diag(gl.mean_field_approx(post, FKL).covariance)
    assert np.all(v_r <= v_f + 1e-12)
    if np.max(np.abs(cov - np.diag(np.diag(cov)))) > 1e-8:
        assert np.any(v_r < v_f - 1e-12)


def test_pointwise_prior_exact_approximation_recovers_prior(rng):
    model = toy(random_spd(rng, 2), random_spd(rng, 2), n_obs=3, mean=[0.7, -0.2])
    for _ in range(5):
        Y = rng.standard_normal((3, 2)) * 2.0
        res = gl.pointwise_prior(model, Y, kind=None)
        assert res.proper
        assert np.allclose(res.dist.mean, model.prior.mean, atol=1e-10)
        assert np.allclose(res.dist.covariance, model.prior.covariance, atol=1e-10)


def test_pointwise_prior_improper_with_correlated_likelihood(rng):
    model = toy(np.eye(2), np.array([[1.0, 0.95], [0.95, 1.0]]), n_obs=1)
    Y = rng.standard_normal((1, 2))
    res = gl.pointwise_prior(model, Y, FKL)
    assert not res.proper
    assert res.witness_eigenvalue <= 0
    assert res.witness_eigenvector.shape == (2,)


def test_pointwise_prior_proper_with_correlated_prior(rng):
    for _ in range(20):
        model = toy(random_correlated_spd(rng, 2), np.eye(2), n_obs=1)
        Y = rng.standard_normal((1, 2))
        for kind in (RKL, FKL):
            assert gl.pointwise_prior(model, Y, kind).proper


def test_gibbs_transition_zero_prior_mean(rng):
    model = toy(random_spd(rng, 3), random_spd(rng, 3), n_obs=2)
    trans = gl.gibbs_transition(model, RKL)
    assert np.allclose(trans.a, 0.0, atol=1e-14)


def test_gibbs_transition_scalar_case():
    model = toy([[1.0]], [[1.0]], n_obs=1)
    trans = gl.gibbs_transition(model, kind=None)
    assert np.allclose(trans.A, [[0.5]], atol=1e-14)
    assert np.allclose(trans.B, [[0.75]], atol=1e-14)


def test_gibbs_transition_monte_carlo_single_step(rng):
    # one chain step (y from the likelihood, theta' from the refitted
    # approximation) must match the marginalized transition Gaussian
    model = toy(
        np.array([[1.2, 0.4], [0.4, 0.9]]), np.array([[0.8, 0.2], [0.2, 1.1]]), n_obs=2
    )
    kind = RKL
    trans = gl.gibbs_transition(model, kind)
    theta = np.array([0.6, -1.0])
    reps = 100_000
    like_chol = np.linalg.cholesky(model.likelihood_cov)
    approx_chol = np.linalg.cholesky(gl.approx_covariance(model, kind))
    prior_prec = np.linalg.inv(model.prior.covariance)
    like_prec = np.linalg.inv(model.likelihood_cov)
    post_cov = np.linalg.inv(prior_prec + model.n_obs * like_prec)
    Y = theta[None, None, :] + rng.standard_normal((reps, model.n_obs, 2)) @ like_chol.T
    ybar = Y.mean(axis=1)
    means = (post_cov @ (prior_prec @ model.prior.mean)[:, None]).T + ybar @ (
        model.n_obs * post_cov @ like_prec
    ).T
    draws = means + rng.standard_normal((reps, 2)) @ approx_chol.T
    expected_mean = trans.a + trans.A @ theta
    se_mean = np.sqrt(np.diag(trans.B) / reps)
    assert np.all(np.abs(draws.mean(axis=0) - expected_mean) < 3 * se_mean)
    emp_cov = np.cov(draws, rowvar=False)
    # covariance entries fluctuate at ~B_ij/sqrt(reps) scale
    assert np.all(np.abs(emp_cov - trans.B) < 4 * np.abs(trans.B).max() / np.sqrt(reps) * 3)


def test_lyapunov_zero_A_returns_B(rng):
    B = random_spd(rng, 3)
    X = gl.solve_discrete_lyapunov(np.zeros((3, 3)), B)
    assert np.allclose(X, B, atol=1e-14)


def test_lyapunov_scalar_closed_form():
    X = gl.solve_discrete_lyapunov(np.array([[0.5]]), np.array([[1.0]]))
    assert np.allclose(X, [[4.0 / 3.0]], atol=1e-12)


def test_lyapunov_matches_series_oracle(rng):
    A = rng.standard_normal((4, 4))
    A *= 0.8 / np.max(np.abs(np.linalg.eigvals(A)))
    B = random_spd(rng, 4)
    X = gl.solve_discrete_lyapunov(A, B)
    series = np.zeros((4, 4))
    term = B.copy()
    for _ in range(201):
        series += term
        term = A @ term @ A.T
    assert np.max(np.abs(X - series)) < 1e-8


def test_lyapunov_rejects_unstable_A(rng):
    A = np.eye(2) * 1.01
    with pytest.raises(ValueError, match="spectral radius"):
        gl.solve_discrete_lyapunov(A, np.eye(2))


def test_gibbs_prior_exact_approximation_is_prior(rng):
    for _ in range(10):
        model = toy(
            random_spd(rng, 2), random_spd(rng, 2), n_obs=int(rng.integers(1, 5))
        )
        gp = gl.gibbs_prior_analytic(model, kind=None)
        assert np.allclose(gp.covariance, model.prior.covariance, atol=1e-8)
        assert np.allclose(gp.mean, model.prior.mean, atol=1e-12)


def test_gibbs_prior_canonical_correlated_prior_patterns():
    model = gl.canonical_model("correlated-prior")
    prior_entropy = gl.gaussian_entropy(model.prior)
    gp_r = gl.gibbs_prior_analytic(model, RKL)
    gp_f = gl.gibbs_prior_analytic(model, FKL)
    assert gl.gaussian_entropy(gp_r) < prior_entropy < gl.gaussian_entropy(gp_f)
    for gp in (gp_r, gp_f):
        assert 0.0 < gp.covariance[0, 1] < model.prior.covariance[0, 1]


def test_gibbs_prior_canonical_correlated_likelihood_negative_offdiag():
    model = gl.canonical_model("correlated-likelihood")
    for kind in (RKL, FKL):
        gp = gl.gibbs_prior_analytic(model, kind)
        assert gp.covariance[0, 1] < 0.0


def test_entropy_frozen_values():
    assert gl.gaussian_entropy(gl.GaussianDist(np.zeros(2), np.eye(2))) == pytest.approx(
        1.0 + np.log(2.0 * np.pi), abs=1e-12
    )
    assert gl.gaussian_entropy(
        gl.GaussianDist(np.zeros(1), np.array([[4.0]]))
    ) == pytest.approx(0.5 * (1.0 + np.log(2.0 * np.pi)) + 0.5 * np.log(4.0), abs=1e-12)


def test_entropy_monotone_in_scale():
    values = [
        gl.gaussian_entropy(gl.GaussianDist(np.zeros(2), c * np.eye(2)))
        for c in (1.0, 0.1, 0.01, 1e-6)
    ]
    assert all(a > b for a, b in zip(values, values[1:]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_compactness_entropy_ordering(seed):
    rng = np.random.default_rng(seed)
    model = toy(random_correlated_spd(rng, 3), random_spd(rng, 3), n_obs=2)
    Y = rng.standard_normal((2, 3))
    post = gl.exact_posterior(model, Y)
    if np.max(np.abs(post.covariance - np.diag(np.diag(post.covariance)))) < 1e-6:
        return
    h_post = gl.gaussian_entropy(post)
    h_r = gl.gaussian_entropy(gl.mean_field_approx(post, RKL))
    h_f = gl.gaussian_entropy(gl.mean_field_approx(post, FKL))
    assert h_r < h_post < h_f
    gp_r = gl.gibbs_prior_analytic(model, RKL)
    gp_f = gl.gibbs_prior_analytic(model, FKL)
    assert gl.gaussian_entropy(gp_r) < gl.gaussian_entropy(gp_f)


def test_gaussian_pair_roundtrip_shapes(rng):
    model = gl.canonical_model("correlated-prior", n_obs=3)
    pair = gl.gaussian_pair(model, RKL)
    gen = make_rng(5)
    theta = pair.init_sampler(gen)
    assert theta.shape == (2,)
    y = pair.likelihood_sampler(theta, gen)
    assert y.shape == (6,)
    theta2 = pair.approximator(y, gen)
    assert theta2.shape == (2,)
