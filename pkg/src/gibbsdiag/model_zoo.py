"""Concrete likelihood/approximator pairs for the chain diagnostic.

Includes the sum-of-log-normals model with a moment-matched log-normal
surrogate likelihood plus Laplace fit, a stochastic-volatility generative
model (sampling only; approximations are supplied externally), a pair of
1-D Gaussian conditional families with known compatibility status, and a
line-delimited JSON subprocess protocol for plugging in external
approximators.
"""

from __future__ import annotations

import enum
import json
import math
import os
import select
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from gibbsdiag.core_engine import ConditionalPair
from gibbsdiag.gaussian_lab import GaussianDist

__all__ = [
    "ArnoldVariant",
    "ExternalApproximator",
    "FWParams",
    "LogNormalSumModel",
    "ProtocolError",
    "StochVolModel",
    "arnold_joint_log_density",
    "arnold_pair",
    "external_approximator",
    "fenton_wilkinson",
    "fw_logpdf",
    "laplace_approx",
    "laplace_fit",
    "laplace_objective",
    "laplace_sample",
    "lognormal_pair",
    "lognormal_sum_sample",
    "stochvol_pair",
    "stochvol_sample_obs",
    "stochvol_sample_prior",
]

_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# sum of log-normals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogNormalSumModel:
    """Observation is the sum of ``L`` i.i.d. log-normal draws.

    Latents are ``(mu, sigma2)`` with a standard normal prior on ``mu`` and
    a unit-rate exponential prior on ``sigma2`` (the Gamma(1, 1)
    distribution).  The exact likelihood of the sum has no closed form;
    only sampling and the moment-matched surrogate are provided.
    """

    L: int = 10

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")

    def prior_sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.standard_normal(), rng.exponential(1.0)])

    def prior_logpdf(self, theta: np.ndarray) -> float:
        mu, s2 = float(theta[0]), float(theta[1])
        if s2 <= 0:
            return -math.inf
        return -0.5 * (mu * mu + _LOG2PI) - s2


def lognormal_sum_sample(
    theta: np.ndarray, L: int, rng: np.random.Generator
) -> float:
    """Draw the sum of ``L`` independent LogNormal(mu, sigma2) variables."""
    mu, s2 = float(theta[0]), float(theta[1])
    if s2 <= 0:
        raise ValueError("sigma2 must be positive")
    return float(np.sum(np.exp(mu + math.sqrt(s2) * rng.standard_normal(L))))


@dataclass(frozen=True)
class FWParams:
    """Log-normal surrogate parameters matching the sum's first two moments."""

    alpha: float
    beta2: float

    def __post_init__(self):
        if self.beta2 <= 0:
            raise ValueError("beta2 must be positive")


def _fw_beta2(s2: float, L: int) -> float:
    # log((exp(s2) - 1 + L) / L), with an overflow-free branch for large s2
    if s2 > 30.0:
        return s2 + math.log1p((L - 1.0) * math.exp(-s2)) - math.log(L)
    return math.log1p(math.expm1(s2) / L)


def _fw_dbeta2(s2: float, L: int) -> float:
    # exp(s2) / (exp(s2) - 1 + L) rewritten without overflow
    return 1.0 / (1.0 + (L - 1.0) * math.exp(-s2))


def fenton_wilkinson(theta: np.ndarray, L: int) -> FWParams:
    """Moment-matched log-normal surrogate for the L-fold log-normal sum.

    ``beta2 = log((exp(sigma2) - 1) / L + 1)`` and
    ``alpha = mu + log(L) + (sigma2 - beta2) / 2``.
    """
    mu, s2 = float(theta[0]), float(theta[1])
    if s2 <= 0:
        raise ValueError("sigma2 must be positive")
    beta2 = _fw_beta2(s2, L)
    alpha = mu + math.log(L) + 0.5 * (s2 - beta2)
    return FWParams(alpha=alpha, beta2=beta2)


def fw_logpdf(y: float, params: FWParams) -> float:
    """Log density of LogNormal(alpha, beta2) at ``y``."""
    if y <= 0:
        return -math.inf
    ly = math.log(y)
    return (
        -ly
        - 0.5 * (_LOG2PI + math.log(params.beta2))
        - (ly - params.alpha) ** 2 / (2.0 * params.beta2)
    )


def laplace_objective(mu, s2, y: float, model: LogNormalSumModel):
    """Objective maximized by the Laplace fit, on the ``(mu, sigma2)`` grid.

    Log prior plus surrogate log likelihood plus ``log(sigma2)``.  The last
    term is the change-of-variables correction for optimizing over
    ``log(sigma2)``: without it the target density is unbounded along a
    ``sigma2 -> 0`` ridge and has no maximizer.  Vectorized over ``mu`` and
    ``s2`` arrays for grid searches.
    """
    mu = np.asarray(mu, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    ly = math.log(y)
    L = model.L
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        beta2 = np.where(
            s2 > 30.0,
            s2 + np.log1p((L - 1.0) * np.exp(-np.abs(s2))) - math.log(L),
            np.log1p(np.expm1(np.minimum(s2, 31.0)) / L),
        )
        alpha = mu + math.log(model.L) + 0.5 * (s2 - beta2)
        val = (
            -0.5 * (mu * mu + _LOG2PI)
            - s2
            - ly
            - 0.5 * (_LOG2PI + np.log(beta2))
            - (ly - alpha) ** 2 / (2.0 * beta2)
            + np.log(s2)
        )
    return np.where((s2 > 0) & (beta2 > 0), val, -np.inf)


def _fw_post_logpdf_u(x: np.ndarray, ly: float, L: int) -> float:
    mu, u = float(x[0]), float(x[1])
    if u > 80.0:
        return -math.inf
    s2 = math.exp(u)
    if s2 <= 0.0:
        # exp underflow far out in the tail; the objective decays like u/2
        return -math.inf
    beta2 = _fw_beta2(s2, L)
    if beta2 <= 0.0:
        return -math.inf
    alpha = mu + math.log(L) + 0.5 * (s2 - beta2)
    return (
        -0.5 * (mu * mu + _LOG2PI)
        - s2
        - ly
        - 0.5 * (_LOG2PI + math.log(beta2))
        - (ly - alpha) ** 2 / (2.0 * beta2)
        + u
    )


def _fw_post_grad_u(x: np.ndarray, ly: float, L: int) -> np.ndarray:
    mu, u = float(x[0]), float(x[1])
    s2 = math.exp(u)
    beta2 = _fw_beta2(s2, L)
    alpha = mu + math.log(L) + 0.5 * (s2 - beta2)
    r = ly - alpha
    dbeta2 = _fw_dbeta2(s2, L)
    dalpha = 0.5 * (1.0 - dbeta2)
    dmu = -mu + r / beta2
    ds2 = (
        -1.0
        - 0.5 * dbeta2 / beta2
        + (r / beta2) * dalpha
        + r * r / (2.0 * beta2 * beta2) * dbeta2
    )
    return np.array([dmu, ds2 * s2 + 1.0])


def laplace_fit(
    logpdf: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    starts: Sequence[np.ndarray],
    max_iterations: int = 200,
    max_halvings: int = 30,
    fd_step: float = 1e-5,
    grad_tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian fit at a local maximum found by damped Newton ascent.

    The Hessian is taken by central finite differences of ``gradient``
    with a relative step of ``fd_step``; on a quadratic log density this
    reproduces the target Gaussian exactly up to round-off.  Each start
    runs Newton with backtracking halving (gradient ascent when the
    negated Hessian is not positive definite); a start counts as converged
    when the gradient norm is below ``grad_tol``.  The best converged
    start wins.  Raises ``RuntimeError`` when no start converges or the
    negated Hessian at the winning mode is not positive definite.
    """
    starts = [np.asarray(s, dtype=float).reshape(-1) for s in starts]
    if not starts:
        raise ValueError("need at least one start")
    dim = len(starts[0])

    def fd_hessian(x: np.ndarray) -> np.ndarray:
        H = np.empty((dim, dim))
        for j in range(dim):
            h = fd_step * max(1.0, abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            H[:, j] = (gradient(xp) - gradient(xm)) / (2.0 * h)
        return 0.5 * (H + H.T)

    best: tuple[float, np.ndarray] | None = None
    for start in starts:
        x = start.copy()
        converged = False
        for _ in range(max_iterations):
            g = gradient(x)
            gnorm = float(np.linalg.norm(g))
            if gnorm <= 1e-9:
                converged = True
                break
            H = fd_hessian(x)
            neg_evals = np.linalg.eigvalsh(-H)
            if neg_evals[0] > 1e-12:
                step = np.linalg.solve(-H, g)
            else:
                step = g / max(1.0, gnorm)
            f0 = logpdf(x)
            tau = 1.0
            moved = False
            for _ in range(max_halvings):
                cand = x + tau * step
                if logpdf(cand) > f0:
                    x = cand
                    moved = True
                    break
                tau *= 0.5
            if not moved:
                converged = gnorm <= grad_tol
                break
        if converged:
            val = logpdf(x)
            if best is None or val > best[0]:
                best = (val, x)
    if best is None:
        raise RuntimeError(
            f"Newton did not converge from any of {len(starts)} starts "
            f"within {max_iterations} iterations"
        )
    mode = best[1]
    H = fd_hessian(mode)
    neg_evals = np.linalg.eigvalsh(-H)
    if neg_evals[0] <= 0.0:
        raise RuntimeError("Hessian at the mode is not negative definite")
    cov = np.linalg.inv(-H)
    return mode, 0.5 * (cov + cov.T)


_LAPLACE_STARTS = (
    np.array([0.0, 0.0]),
    np.array([0.0, -1.0]),
    np.array([1.0, 0.5]),
    np.array([-1.0, 0.7]),
    np.array([0.5, -1.5]),
)


def laplace_approx(y: float, model: LogNormalSumModel) -> GaussianDist:
    """Gaussian fit to the surrogate posterior, in ``(mu, log sigma2)``.

    The fit runs in log-variance coordinates because the posterior density
    over ``(mu, sigma2)`` itself attains no maximum (see
    :func:`laplace_objective`); the returned distribution is over
    ``(mu, log sigma2)`` and callers map the second coordinate through
    ``exp``.  The mode maximizes :func:`laplace_objective`.
    """
    if y <= 0:
        raise ValueError("y must be positive")
    ly = math.log(y)
    mode, cov = laplace_fit(
        logpdf=lambda x: _fw_post_logpdf_u(x, ly, model.L),
        gradient=lambda x: _fw_post_grad_u(x, ly, model.L),
        starts=_LAPLACE_STARTS,
    )
    return GaussianDist(mode, cov)


def laplace_sample(
    dist: GaussianDist,
    rng: np.random.Generator,
    max_attempts: int = 10_000,
) -> tuple[np.ndarray, int]:
    """Draw ``(mu, sigma2)`` from a direct-coordinate Gaussian, rejecting
    draws with non-positive variance.

    Returns the accepted draw together with the number of rejected
    attempts.  Raises when ``max_attempts`` consecutive draws are all
    rejected, which signals an acceptance rate too low to be useful.
    """
    chol = np.linalg.cholesky(dist.covariance)
    for attempt in range(max_attempts):
        draw = dist.mean + chol @ rng.standard_normal(dist.dim)
        if draw[-1] > 0:
            return draw, attempt
    raise RuntimeError(
        f"no positive-variance draw in {max_attempts} attempts; "
        "acceptance rate is below a usable level"
    )


def lognormal_pair(model: LogNormalSumModel) -> ConditionalPair:
    """Full pipeline pair: log-normal sum likelihood, Laplace approximator.

    The approximator fits :func:`laplace_approx` on each observation,
    samples ``(mu, log sigma2)`` from it and returns
    ``(mu, exp(log sigma2))``.
    """

    def likelihood_sampler(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([lognormal_sum_sample(theta, model.L, rng)])

    def approximator(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        dist = laplace_approx(float(y[0]), model)
        draw = dist.sample(rng)
        return np.array([draw[0], np.exp(draw[1])])

    return ConditionalPair(
        likelihood_sampler=likelihood_sampler,
        approximator=approximator,
        latent_dim=2,
        observation_dim=1,
        init_sampler=model.prior_sample,
    )


# ---------------------------------------------------------------------------
# stochastic volatility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StochVolModel:
    """Gaussian random-walk log-volatility with Student-t returns."""

    T: int = 100
    sigma: float = 0.09
    nu: float = 12.0
    theta0: float = 0.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.nu <= 0:
            raise ValueError("nu must be positive")


def stochvol_sample_prior(model: StochVolModel, rng: np.random.Generator) -> np.ndarray:
    """Random-walk path ``theta_1 .. theta_T`` started at ``theta0``."""
    steps = model.sigma * rng.standard_normal(model.T)
    return model.theta0 + np.cumsum(steps)


def stochvol_sample_obs(
    theta: np.ndarray, nu: float, rng: np.random.Generator
) -> np.ndarray:
    """Independent scaled Student-t returns, scale ``exp(theta_i)``.

    Sampled through the normal/chi-square ratio representation.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    z = rng.standard_normal(len(theta))
    v = rng.chisquare(nu, size=len(theta))
    return np.exp(theta) * z / np.sqrt(v / nu)


def stochvol_pair(
    model: StochVolModel,
    approximator: Callable[[np.ndarray, np.random.Generator], np.ndarray],
) -> ConditionalPair:
    """Pair the volatility model with a supplied (typically external) approximator."""

    def likelihood_sampler(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return stochvol_sample_obs(theta, model.nu, rng)

    def init_sampler(rng: np.random.Generator) -> np.ndarray:
        return stochvol_sample_prior(model, rng)

    return ConditionalPair(
        likelihood_sampler=likelihood_sampler,
        approximator=approximator,
        latent_dim=model.T,
        observation_dim=model.T,
        init_sampler=init_sampler,
    )


# ---------------------------------------------------------------------------
# 1-D Gaussian conditional families with known compatibility status
# ---------------------------------------------------------------------------


class ArnoldVariant(enum.Enum):
    COMPATIBLE = "compatible"
    INCOMPATIBLE = "incompatible"


def arnold_joint_log_density(theta, y):
    """Unnormalized log joint the compatible conditional pair shares.

    ``4*theta - theta^2/2 + 4*y - y^2/2 - theta^2 y^2 / 2``; vectorized.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        4.0 * theta
        - 0.5 * theta**2
        + 4.0 * y
        - 0.5 * y**2
        - 0.5 * theta**2 * y**2
    )


def arnold_pair(variant: ArnoldVariant) -> ConditionalPair:
    """1-D conditional families, compatible or incompatible by construction.

    Compatible: both conditionals are ``N(4 / (1 + t^2), 1 / (1 + t^2))``
    in the other variable and share the joint density exposed by
    :func:`arnold_joint_log_density`.  Incompatible: conditional means are
    ``t / 2`` with the same variances; no joint distribution has these
    conditionals.
    """
    compatible = variant is ArnoldVariant.COMPATIBLE

    def conditional(t: float, rng: np.random.Generator) -> float:
        var = 1.0 / (1.0 + t * t)
        mean = 4.0 * var if compatible else 0.5 * t
        return mean + math.sqrt(var) * rng.standard_normal()

    def likelihood_sampler(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([conditional(float(theta[0]), rng)])

    def approximator(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([conditional(float(y[0]), rng)])

    def init_sampler(rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.standard_normal()])

    return ConditionalPair(
        likelihood_sampler=likelihood_sampler,
        approximator=approximator,
        latent_dim=1,
        observation_dim=1,
        init_sampler=init_sampler,
    )


# ---------------------------------------------------------------------------
# external approximators over a line-delimited JSON subprocess protocol
# ---------------------------------------------------------------------------


class ProtocolError(RuntimeError):
    """Wire-protocol violation: bad handshake, malformed reply, or timeout."""


class _LineReader:
    """Line reader with timeout over a raw pipe file descriptor."""

    def __init__(self, fd: int):
        self.fd = fd
        self.buf = b""

    def readline(self, timeout: float) -> bytes:
        while b"\n" not in self.buf:
            ready, _, _ = select.select([self.fd], [], [], timeout)
            if not ready:
                raise ProtocolError(f"no reply within {timeout} s")
            chunk = os.read(self.fd, 65536)
            if not chunk:
                raise ProtocolError("backend closed its output stream")
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return line


class ExternalApproximator:
    """Approximator half of a pair, backed by a subprocess.

    The backend speaks line-delimited JSON on stdin/stdout: a hello/ready
    handshake carrying the protocol version and dimensions, then one
    ``approximate`` request per chain step (observation plus a 64-bit
    seed), answered by one ``theta`` reply.  Any other message type or a
    version mismatch is a protocol error.  One instance drives one
    subprocess and must not be shared across concurrent chains.
    """

    def __init__(
        self,
        command: str | Sequence[str],
        latent_dim: int,
        observation_dim: int,
        protocol_version: int = 1,
        timeout: float = 60.0,
    ):
        self.latent_dim = latent_dim
        self.observation_dim = observation_dim
        self.version = protocol_version
        self.timeout = timeout
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self._reader = _LineReader(self.proc.stdout.fileno())
        self._send(
            {
                "type": "hello",
                "version": self.version,
                "latent_dim": latent_dim,
                "obs_dim": observation_dim,
            }
        )
        reply = self._recv()
        if reply.get("type") != "ready" or reply.get("version") != self.version:
            self.close()
            raise ProtocolError(f"bad handshake reply: {reply!r}")

    def _send(self, obj: dict) -> None:
        try:
            self.proc.stdin.write((json.dumps(obj) + "\n").encode())
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"backend is gone: {exc}") from exc

    def _recv(self) -> dict:
        line = self._reader.readline(self.timeout)
        try:
            obj = json.loads(line.decode())
        except (ValueError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"malformed reply: {line[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"malformed reply: {obj!r}")
        return obj

    def approximator(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Request one latent draw for observation ``y``."""
        seed = int(rng.integers(0, 2**63 - 1))
        self._send(
            {"type": "approximate", "y": [float(v) for v in y], "seed": seed}
        )
        reply = self._recv()
        if reply.get("type") != "theta":
            raise ProtocolError(f"expected a theta reply, got {reply!r}")
        theta = np.asarray(reply.get("value"), dtype=float).reshape(-1)
        if theta.shape != (self.latent_dim,):
            raise ProtocolError(f"theta has dimension {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ProtocolError("backend returned a non-finite theta")
        return theta

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._send({"type": "bye"})
            except ProtocolError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream is not None:
                stream.close()

    def __enter__(self) -> "ExternalApproximator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def external_approximator(
    command: str | Sequence[str],
    latent_dim: int,
    observation_dim: int,
    protocol_version: int = 1,
    timeout: float = 60.0,
) -> ExternalApproximator:
    """Launch a backend subprocess and perform the handshake."""
    return ExternalApproximator(
        command,
        latent_dim=latent_dim,
        observation_dim=observation_dim,
        protocol_version=protocol_version,
        timeout=timeout,
    )
