"""Exact chain computations on finite latent/observation spaces.

With row-stochastic matrices ``F`` (likelihood) and ``Q`` (approximation)
the alternating chain on latents is the matrix product ``F Q``, so
stationary distributions, mixture identities and compatibility questions
all reduce to small linear algebra.  This module is the exact oracle for
the generic simulation engine.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from gibbsdiag.core_engine import ConditionalPair

__all__ = [
    "FiniteModel",
    "StationaryResult",
    "finite_pair",
    "gibbs_stationary",
    "load_fixture",
    "model_from_joint",
    "perturb_approximation",
    "pointwise_prior_exact",
    "stationary_distribution",
    "transition_matrix",
    "verify_mixture_identities",
    "weak_compatibility_gap",
]

_ROW_TOL = 1e-12


def _check_row_stochastic(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if np.any(mat < 0):
        raise ValueError(f"{name} has negative entries")
    if np.max(np.abs(mat.sum(axis=1) - 1.0)) > _ROW_TOL:
        raise ValueError(f"{name} rows must sum to 1 within {_ROW_TOL}")
    return mat


@dataclass(frozen=True, eq=False)
class FiniteModel:
    """Row-stochastic likelihood ``F`` (n x m) and approximation ``Q`` (m x n)."""

    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        F = _check_row_stochastic(self.F, "F")
        Q = _check_row_stochastic(self.Q, "Q")
        if F.shape[1] != Q.shape[0] or F.shape[0] != Q.shape[1]:
            raise ValueError("F (n x m) and Q (m x n) shapes are inconsistent")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.F.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "F": [[float(v) for v in row] for row in self.F],
            "Q": [[float(v) for v in row] for row in self.Q],
        }


@dataclass(frozen=True, eq=False)
class StationaryResult:
    """Stationary marginals of the alternating chain plus the fixed-point residual."""

    pi_G: np.ndarray
    p_G: np.ndarray
    residual: float


def load_fixture(name_or_path: str | os.PathLike) -> FiniteModel:
    """Load a ``{"F": .., "Q": ..}`` JSON fixture by bundled name or by path."""
    text = None
    if isinstance(name_or_path, str) and os.sep not in name_or_path:
        fname = name_or_path if name_or_path.endswith(".json") else name_or_path + ".json"
        ref = resources.files("gibbsdiag").joinpath("fixtures", fname)
        if ref.is_file():
            text = ref.read_text()
    if text is None:
        with open(name_or_path) as fh:
            text = fh.read()
    data = json.loads(text)
    return FiniteModel(F=np.asarray(data["F"]), Q=np.asarray(data["Q"]))


def transition_matrix(model: FiniteModel) -> np.ndarray:
    """Latent-to-latent transition matrix of the alternating chain, ``F Q``."""
    return model.F @ model.Q


def stationary_distribution(
    P: np.ndarray, tol: float = 1e-10, start: np.ndarray | None = None
) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix by power iteration.

    Falls back to Cesaro averaging of the iterates, which converges for
    periodic chains.  Raises if the fixed point is not unique (the unit
    eigenvalue has multiplicity above one, e.g. for reducible chains) or
    if the iteration cap is reached without meeting ``tol``.  ``start``
    optionally replaces the uniform starting distribution.
    """
    P = _check_row_stochastic(P, "P")
    n = P.shape[0]
    if P.shape[1] != n:
        raise ValueError("P must be square")
    unit_mult = int(np.sum(np.abs(np.linalg.eigvals(P) - 1.0) <= 1e-9))
    if unit_mult > 1:
        raise RuntimeError(
            f"non-unique stationary distribution (unit eigenvalue multiplicity {unit_mult})"
        )
    if start is None:
        pi = np.full(n, 1.0 / n)
    else:
        pi = np.asarray(start, dtype=float)
        if pi.shape != (n,) or np.any(pi < 0) or pi.sum() <= 0:
            raise ValueError("start must be a probability vector over the states")
        pi = pi / pi.sum()
    cesaro = np.zeros(n)
    max_iter = 10**6
    for it in range(1, max_iter + 1):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= 0.5 * tol:
            pi = nxt
            break
        cesaro += nxt
        pi = nxt
        if it % 64 == 0:
            avg = cesaro / it
            avg = avg / avg.sum()
            if np.abs(avg @ P - avg).sum() <= 0.5 * tol:
                pi = avg
                break
    residual = float(np.abs(pi @ P - pi).sum())
    if residual > tol:
        raise RuntimeError(
            f"power iteration did not reach tolerance (residual {residual:g}); "
            "chain may be reducible or periodic"
        )
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def gibbs_stationary(model: FiniteModel, tol: float = 1e-10) -> StationaryResult:
    """Both stationary marginals: latents under ``FQ``, observations pushed through ``F``."""
    pi = stationary_distribution(transition_matrix(model), tol=tol)
    p_obs = pi @ model.F
    p_obs = np.maximum(p_obs, 0.0)
    p_obs /= p_obs.sum()
    residual = float(np.abs(pi @ transition_matrix(model) - pi).sum())
    return StationaryResult(pi_G=pi, p_G=p_obs, residual=residual)


def pointwise_prior_exact(model: FiniteModel, y_index: int) -> np.ndarray | None:
    """Normalized ``Q[y, theta] / F[theta, y]``, or ``None`` when improper.

    Improper means some latent state has zero likelihood mass at ``y``
    while the approximation still puts mass on it, so the ratio has no
    finite normalization.
    """
    if not (0 <= y_index < model.m):
        raise ValueError(f"y_index {y_index} out of range [0, {model.m})")
    q = model.Q[y_index, :]
    f = model.F[:, y_index]
    zero = f == 0.0
    if np.any(q[zero] > 0.0):
        return None
    ratio = np.zeros(model.n)
    np.divide(q, f, out=ratio, where=~zero)
    total = ratio.sum()
    if total <= 0.0:
        return None
    return ratio / total


def verify_mixture_identities(model: FiniteModel) -> tuple[float, float | None]:
    """Max-abs gaps of the two stationary-mixture identities.

    The first identity writes the stationary latent distribution as a
    mixture of the approximation rows weighted by the stationary
    observation mass, which is a restatement of stationarity and must hold
    for every model.  The second rewrites it through the per-observation
    inverted priors reweighted by the likelihood; its gap is ``None``
    whenever some inverted prior is improper.
    """
    pi = stationary_distribution(transition_matrix(model))
    g = pi @ model.F
    gap3 = float(np.max(np.abs(g @ model.Q - pi)))

    pointwise = [pointwise_prior_exact(model, y) for y in range(model.m)]
    if any(p is None for p in pointwise):
        return gap3, None
    mix = np.zeros(model.n)
    for y, p_y in enumerate(pointwise):
        denom = float(p_y @ model.F[:, y])
        if denom <= 0.0:
            return gap3, None
        mix += (g[y] / denom) * model.F[:, y] * p_y
    gap4 = float(np.max(np.abs(mix - pi)))
    return gap3, gap4


def perturb_approximation(model: FiniteModel, rng_seed: int) -> FiniteModel:
    """A different approximation matrix inducing the same chain.

    Adds ``eps * x0 w'`` to ``Q`` with ``x0`` in the kernel of ``F`` and
    ``w`` orthogonal to the all-ones vector, so ``F Q`` is unchanged and
    rows still sum to one.  ``eps`` is the largest scale keeping all
    entries inside ``[margin, 1 - margin]`` with margin 1e-6, which exists
    because ``Q`` is required to have entries strictly inside ``(0, 1)``.
    Raises when ``F`` has a trivial kernel (no such perturbation exists).
    """
    if model.n < 2:
        raise ValueError("need n >= 2")
    if np.any(model.Q <= 0.0) or np.any(model.Q >= 1.0):
        raise ValueError("Q entries must lie strictly inside (0, 1)")
    _, svals, vt = np.linalg.svd(model.F)
    thresh = 1e-10 * svals[0]
    null_mask = np.zeros(model.m, dtype=bool)
    null_mask[: len(svals)] = svals <= thresh
    null_mask[len(svals) :] = True
    if not np.any(null_mask):
        raise ValueError("kernel of F is trivial; no equivalent perturbation exists")
    x0 = vt[null_mask][0]

    rng = np.random.default_rng(rng_seed)
    w = rng.standard_normal(model.n)
    w -= w.mean()
    while np.linalg.norm(w) < 1e-12:
        w = rng.standard_normal(model.n)
        w -= w.mean()
    w /= np.linalg.norm(w)

    direction = np.outer(x0, w)
    margin = 1e-6
    pos = direction > 0
    neg = direction < 0
    eps = np.inf
    if np.any(pos):
        eps = min(eps, np.min((1.0 - margin - model.Q[pos]) / direction[pos]))
    if np.any(neg):
        eps = min(eps, np.min((model.Q[neg] - margin) / -direction[neg]))
    if not np.isfinite(eps) or eps <= 0.0:
        raise ValueError("no feasible perturbation scale")
    q_tilde = model.Q + eps * direction
    q_tilde /= q_tilde.sum(axis=1, keepdims=True)
    perturbed = FiniteModel(F=model.F, Q=q_tilde)
    gap = np.max(np.abs(transition_matrix(model) - transition_matrix(perturbed)))
    if gap > 1e-12:
        raise RuntimeError(f"perturbation changed the chain by {gap:g}")
    return perturbed


def weak_compatibility_gap(model: FiniteModel) -> float:
    """Max-abs chain difference against the stationary-model posteriors.

    Builds the posteriors of the model whose prior is the stationary
    latent distribution and whose likelihood is ``F``, and returns
    ``max |F Q - F Q*|``.  Zero means the approximation induces the same
    chain as those posteriors even if it is not equal to them.
    """
    pi = stationary_distribution(transition_matrix(model))
    joint = pi[:, None] * model.F
    mass = joint.sum(axis=0)
    if np.any(mass <= 1e-300):
        raise ValueError("some observation has zero stationary mass")
    q_star = (joint / mass).T
    return float(np.max(np.abs(model.F @ model.Q - model.F @ q_star)))


def model_from_joint(joint: np.ndarray) -> FiniteModel:
    """Conditionals of a positive joint table (rows: latents, cols: observations)."""
    joint = np.asarray(joint, dtype=float)
    if np.any(joint <= 0):
        raise ValueError("joint must have positive entries")
    F = joint / joint.sum(axis=1, keepdims=True)
    Q = (joint / joint.sum(axis=0, keepdims=True)).T
    return FiniteModel(F=F, Q=Q)


def finite_pair(model: FiniteModel) -> ConditionalPair:
    """Simulation adapter: states travel as length-1 index vectors."""
    cum_f = np.cumsum(model.F, axis=1)
    cum_q = np.cumsum(model.Q, axis=1)

    def likelihood_sampler(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        i = int(theta[0])
        return np.array([float(np.searchsorted(cum_f[i], rng.random(), side="right"))])

    def approximator(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        j = int(y[0])
        return np.array([float(np.searchsorted(cum_q[j], rng.random(), side="right"))])

    def init_sampler(rng: np.random.Generator) -> np.ndarray:
        return np.array([float(rng.integers(0, model.n))])

    return ConditionalPair(
        likelihood_sampler=likelihood_sampler,
        approximator=approximator,
        latent_dim=1,
        observation_dim=1,
        init_sampler=init_sampler,
    )
