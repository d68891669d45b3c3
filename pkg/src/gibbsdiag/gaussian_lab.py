"""Closed-form Gaussian laboratory for the alternating-chain diagnostic.

Model: latent mean with Gaussian prior, ``n`` Gaussian observations with
known covariance.  Posterior, mean-field approximations under both KL
directions, per-observation inverted priors (with propriety detection),
the one-step chain transition, and the stationary latent distribution via
a discrete Lyapunov solve are all available exactly.  This is the ground
truth the simulation engine is verified against.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from gibbsdiag.core_engine import ConditionalPair

__all__ = [
    "CANONICAL_CORRELATED",
    "DivergenceKind",
    "GaussianDist",
    "GaussianToyModel",
    "GibbsTransition",
    "PointwisePriorResult",
    "approx_covariance",
    "canonical_model",
    "exact_posterior",
    "gaussian_entropy",
    "gaussian_pair",
    "gibbs_prior_analytic",
    "gibbs_transition",
    "mean_field_approx",
    "pointwise_prior",
    "solve_discrete_lyapunov",
]

_SYM_TOL = 1e-10

#: Canonical strongly correlated 2x2 covariance used by the demo settings.
CANONICAL_CORRELATED = np.array([[1.7, 1.45], [1.45, 1.7]])


def _check_spd(mat: np.ndarray, name: str) -> np.ndarray:
    """Validate symmetry (abs 1e-10) and positive eigenvalues; symmetrize."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.max(np.abs(mat - mat.T)) > _SYM_TOL:
        raise ValueError(f"{name} is not symmetric within {_SYM_TOL}")
    mat = 0.5 * (mat + mat.T)
    eigs = np.linalg.eigvalsh(mat)
    tol = _SYM_TOL * max(np.max(np.abs(eigs)), 1e-300)
    if eigs[0] <= tol:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {eigs[0]:g})")
    return mat


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Mean vector plus symmetric positive definite covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = _check_spd(self.covariance, "covariance")
        if cov.shape[0] != len(mean):
            raise ValueError("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        chol = np.linalg.cholesky(self.covariance)
        if size is None:
            return self.mean + chol @ rng.standard_normal(self.dim)
        return self.mean + rng.standard_normal((size, self.dim)) @ chol.T

    def logpdf(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        diff = x - self.mean
        sign, logdet = np.linalg.slogdet(self.covariance)
        quad = diff @ np.linalg.solve(self.covariance, diff)
        return float(-0.5 * (self.dim * np.log(2 * np.pi) + logdet + quad))

    def to_json_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "covariance": [[float(v) for v in row] for row in self.covariance],
        }


@dataclass(frozen=True, eq=False)
class GaussianToyModel:
    """Gaussian prior on the latent mean, ``n_obs`` Gaussian observations."""

    prior: GaussianDist
    likelihood_cov: np.ndarray
    n_obs: int

    def __post_init__(self):
        cov = _check_spd(self.likelihood_cov, "likelihood_cov")
        if cov.shape[0] != self.prior.dim:
            raise ValueError("prior and likelihood covariance dimensions differ")
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        object.__setattr__(self, "likelihood_cov", cov)

    @property
    def dim(self) -> int:
        return self.prior.dim


class DivergenceKind(enum.Enum):
    """KL direction minimized by the mean-field approximation."""

    REVERSE_KL = "reverse-kl"
    FORWARD_KL = "forward-kl"


def canonical_model(setting: str, n_obs: int = 1) -> GaussianToyModel:
    """The two demo settings: correlation in the prior or in the likelihood.

    ``"correlated-prior"`` pairs the canonical correlated covariance with an
    isotropic likelihood; ``"correlated-likelihood"`` swaps them.  Prior
    mean is zero.
    """
    if setting == "correlated-prior":
        sp, sl = CANONICAL_CORRELATED, np.eye(2)
    elif setting == "correlated-likelihood":
        sp, sl = np.eye(2), CANONICAL_CORRELATED
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return GaussianToyModel(
        prior=GaussianDist(np.zeros(2), sp), likelihood_cov=sl, n_obs=n_obs
    )


def exact_posterior(model: GaussianToyModel, Y: np.ndarray) -> GaussianDist:
    """Conjugate posterior given the observation matrix ``Y`` (n_obs rows)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape != (model.n_obs, model.dim):
        raise ValueError(f"Y must have shape ({model.n_obs}, {model.dim})")
    prior_prec = np.linalg.inv(model.prior.covariance)
    like_prec = np.linalg.inv(model.likelihood_cov)
    ybar = Y.mean(axis=0)
    post_cov = np.linalg.inv(prior_prec + model.n_obs * like_prec)
    post_mean = post_cov @ (prior_prec @ model.prior.mean + model.n_obs * like_prec @ ybar)
    return GaussianDist(post_mean, 0.5 * (post_cov + post_cov.T))


def mean_field_approx(posterior: GaussianDist, kind: DivergenceKind) -> GaussianDist:
    """Best independent-coordinate Gaussian under the given KL direction.

    Both directions keep the posterior mean.  Minimizing KL(q || p) keeps
    the posterior precision diagonal (inverse of the diagonal of the
    precision matrix); minimizing KL(p || q) keeps the posterior marginal
    variances (diagonal of the covariance).
    """
    if kind is DivergenceKind.REVERSE_KL:
        cov = np.diag(1.0 / np.diag(np.linalg.inv(posterior.covariance)))
    elif kind is DivergenceKind.FORWARD_KL:
        cov = np.diag(np.diag(posterior.covariance))
    else:
        raise TypeError(f"kind must be a DivergenceKind, got {kind!r}")
    return GaussianDist(posterior.mean, cov)


def approx_covariance(
    model: GaussianToyModel, kind: DivergenceKind | None
) -> np.ndarray:
    """Covariance of the approximating family; ``None`` means the exact one.

    Does not depend on the observation in this model.
    """
    post_cov = np.linalg.inv(
        np.linalg.inv(model.prior.covariance)
        + model.n_obs * np.linalg.inv(model.likelihood_cov)
    )
    post_cov = 0.5 * (post_cov + post_cov.T)
    if kind is None:
        return post_cov
    dummy = GaussianDist(np.zeros(model.dim), post_cov)
    return mean_field_approx(dummy, kind).covariance


@dataclass(frozen=True, eq=False)
class PointwisePriorResult:
    """Inverted prior for one fixed observation, or an impropriety witness.

    Proper iff the approximation precision minus the pooled likelihood
    precision is positive definite; otherwise the offending eigenvalue and
    its eigenvector are reported.
    """

    proper: bool
    dist: GaussianDist | None = None
    witness_eigenvalue: float | None = None
    witness_eigenvector: np.ndarray | None = None


def pointwise_prior(
    model: GaussianToyModel, Y: np.ndarray, kind: DivergenceKind | None
) -> PointwisePriorResult:
    """Prior that would make the approximation at ``Y`` an exact posterior.

    Obtained by dividing the approximating density by the likelihood.  The
    result is a proper Gaussian only when ``inv(approx_cov) - n*inv(like_cov)``
    is positive definite; near-singular boundary cases are classified
    improper to fail safe.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    posterior = exact_posterior(model, Y)
    approx_cov = approx_covariance(model, kind)
    like_prec = np.linalg.inv(model.likelihood_cov)
    S = np.linalg.inv(approx_cov) - model.n_obs * like_prec
    S = 0.5 * (S + S.T)
    eigvals, eigvecs = np.linalg.eigh(S)
    tol = _SYM_TOL * max(np.max(np.abs(eigvals)), 1e-300)
    if eigvals[0] <= tol:
        return PointwisePriorResult(
            proper=False,
            witness_eigenvalue=float(eigvals[0]),
            witness_eigenvector=eigvecs[:, 0],
        )
    ybar = Y.mean(axis=0)
    cov_y = np.linalg.inv(S)
    mean_y = cov_y @ (
        np.linalg.solve(approx_cov, posterior.mean) - model.n_obs * like_prec @ ybar
    )
    return PointwisePriorResult(
        proper=True, dist=GaussianDist(mean_y, 0.5 * (cov_y + cov_y.T))
    )


@dataclass(frozen=True, eq=False)
class GibbsTransition:
    """One-step latent transition ``theta' | theta ~ N(a + A theta, B)``."""

    a: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float)
        B = _check_spd(self.B, "B")
        if A.shape != (len(a), len(a)) or B.shape != A.shape:
            raise ValueError("inconsistent transition dimensions")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


def gibbs_transition(
    model: GaussianToyModel, kind: DivergenceKind | None
) -> GibbsTransition:
    """Marginalized one-step transition of the alternating chain.

    With posterior covariance ``C``, prior precision ``P`` and likelihood
    precision ``Lp``: ``a = C P mu_p``, ``A = n C Lp`` and
    ``B = approx_cov + n C Lp C``.  Neither matrix depends on the
    observation in this model.
    """
    prior_prec = np.linalg.inv(model.prior.covariance)
    like_prec = np.linalg.inv(model.likelihood_cov)
    n = model.n_obs
    post_cov = np.linalg.inv(prior_prec + n * like_prec)
    post_cov = 0.5 * (post_cov + post_cov.T)
    approx_cov = approx_covariance(model, kind)
    a = post_cov @ prior_prec @ model.prior.mean
    A = n * post_cov @ like_prec
    B = approx_cov + n * post_cov @ like_prec @ post_cov
    return GibbsTransition(a=a, A=A, B=0.5 * (B + B.T))


def solve_discrete_lyapunov(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X A' - X + B = 0`` for symmetric positive definite ``X``.

    Solved exactly by Kronecker vectorization, ``(I - A (x) A) vec(X) =
    vec(B)``, which is adequate for the moderate dimensions used here.
    Requires the spectral radius of ``A`` to be below 1; a radius at or
    above 1 means the chain has no stationary covariance and is reported
    as an error rather than solved.
    """
    A = np.asarray(A, dtype=float)
    B = _check_spd(B, "B")
    d = A.shape[0]
    if A.shape != (d, d) or B.shape != (d, d):
        raise ValueError("A and B must be square with equal dimension")
    radius = float(np.max(np.abs(np.linalg.eigvals(A))))
    if radius >= 1.0:
        raise ValueError(
            f"spectral radius {radius:.6g} >= 1: chain has no stationary covariance"
        )
    lhs = np.eye(d * d) - np.kron(A, A)
    X = np.linalg.solve(lhs, B.reshape(-1)).reshape(d, d)
    X = 0.5 * (X + X.T)
    residual = np.linalg.norm(A @ X @ A.T - X + B, ord="fro")
    if residual > 1e-10 * np.linalg.norm(B, ord="fro"):
        raise RuntimeError(f"Lyapunov residual {residual:g} exceeds tolerance")
    return X


def gibbs_prior_analytic(
    model: GaussianToyModel, kind: DivergenceKind | None
) -> GaussianDist:
    """Stationary latent distribution of the alternating chain, exactly.

    The mean is the prior mean; the covariance solves the discrete
    Lyapunov equation of the one-step transition.
    """
    trans = gibbs_transition(model, kind)
    cov = solve_discrete_lyapunov(trans.A, trans.B)
    return GaussianDist(model.prior.mean, cov)


def gaussian_entropy(g: GaussianDist) -> float:
    """Differential entropy ``d/2 (1 + ln 2 pi) + ln det(cov) / 2``."""
    _, logdet = np.linalg.slogdet(g.covariance)
    return float(0.5 * g.dim * (1.0 + np.log(2.0 * np.pi)) + 0.5 * logdet)


def gaussian_pair(
    model: GaussianToyModel, kind: DivergenceKind | None
) -> ConditionalPair:
    """Simulation adapter: the toy model as a likelihood/approximator pair.

    Observations are the stacked rows of the observation matrix.  The
    approximator refits the (mean-field or exact) Gaussian on each
    observation and samples from it.  Initialization draws from the prior.
    """
    n, d = model.n_obs, model.dim
    like_chol = np.linalg.cholesky(model.likelihood_cov)
    prior_prec = np.linalg.inv(model.prior.covariance)
    like_prec = np.linalg.inv(model.likelihood_cov)
    post_cov = np.linalg.inv(prior_prec + n * like_prec)
    post_cov = 0.5 * (post_cov + post_cov.T)
    approx_chol = np.linalg.cholesky(approx_covariance(model, kind))
    mean_const = post_cov @ prior_prec @ model.prior.mean
    mean_gain = n * post_cov @ like_prec

    def likelihood_sampler(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((n, d)) @ like_chol.T
        return (theta[None, :] + noise).reshape(-1)

    def approximator(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ybar = y.reshape(n, d).mean(axis=0)
        mean = mean_const + mean_gain @ ybar
        return mean + approx_chol @ rng.standard_normal(d)

    def init_sampler(rng: np.random.Generator) -> np.ndarray:
        return model.prior.sample(rng)

    return ConditionalPair(
        likelihood_sampler=likelihood_sampler,
        approximator=approximator,
        latent_dim=d,
        observation_dim=n * d,
        init_sampler=init_sampler,
    )
