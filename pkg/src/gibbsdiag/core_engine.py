"""Generic alternating-chain simulation over a likelihood/approximator pair.

A single step samples an observation from the likelihood at the current
latent point, refits the approximator on that observation, and samples the
next latent point from it.  The latent marginal of the chain converges to
the prior implicitly used by the approximator; the paired joint samples
measure how compatible the two conditional families are.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from gibbsdiag.diagnostics import mmd2_permutation_null

__all__ = [
    "ChainConfig",
    "ChainError",
    "ChainTrace",
    "ConditionalPair",
    "child_seed",
    "compatibility_score",
    "make_rng",
    "paired_joint_samples",
    "run_chains",
    "simulate_gibbs_chain",
    "splitmix64",
    "write_config_json",
    "write_trace_csv",
]

_U64 = np.uint64


def splitmix64(x: int) -> int:
    """64-bit mixing function; used to derive per-chain child seeds."""
    z = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def child_seed(seed: int, chain_index: int) -> int:
    """Child seed for chain ``chain_index``: ``seed XOR splitmix64(index)``."""
    return (int(seed) ^ splitmix64(int(chain_index))) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; same seed reproduces the stream bitwise."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


class ChainError(RuntimeError):
    """Chain aborted at ``step``; carries the observation that caused it.

    Raised when the approximator fails to fit or either conditional returns
    a non-finite draw.  A failing fit signals a non-robust approximation
    method and is reported rather than masked.
    """

    def __init__(self, step: int, message: str, y: np.ndarray | None = None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.y = None if y is None else np.asarray(y, dtype=float)


@dataclass(frozen=True, eq=False)
class ConditionalPair:
    """A likelihood sampler plus a posterior approximator.

    ``likelihood_sampler(theta, rng)`` draws one observation given a latent
    point; ``approximator(y, rng)`` fits the approximation to ``y`` and draws
    one latent point from it.  Both must be pure given the generator state.
    ``init_sampler`` optionally draws a starting latent point (used when the
    chain config asks to initialize from the prior).
    """

    likelihood_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    approximator: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    latent_dim: int
    observation_dim: int
    init_sampler: Callable[[np.random.Generator], np.ndarray] | None = None

    def __post_init__(self):
        if self.latent_dim < 1 or self.observation_dim < 1:
            raise ValueError("latent_dim and observation_dim must be positive")


@dataclass(frozen=True, eq=False)
class ChainConfig:
    """Run length, seed, initialization and subsampling of one chain.

    ``init`` is either an explicit latent vector or the string ``"prior"``,
    in which case the pair must expose an ``init_sampler``.  ``burn_in``
    defaults to ``steps // 10``.
    """

    steps: int
    seed: int
    init: np.ndarray | str = "prior"
    burn_in: int | None = None
    thinning: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (0 <= int(self.seed) <= 0xFFFFFFFFFFFFFFFF):
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.steps // 10)
        if not (0 <= self.burn_in < self.steps):
            raise ValueError("need burn_in + 1 <= steps")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if not isinstance(self.init, str):
            object.__setattr__(
                self, "init", np.asarray(self.init, dtype=float).reshape(-1)
            )
        elif self.init != "prior":
            raise ValueError(f"unknown init directive {self.init!r}")

    def to_json_dict(self) -> dict:
        init = self.init if isinstance(self.init, str) else [float(v) for v in self.init]
        return {
            "steps": int(self.steps),
            "seed": int(self.seed),
            "init": init,
            "burn_in": int(self.burn_in),
            "thinning": int(self.thinning),
        }


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Alternating latent/observation record of one chain run.

    ``thetas`` has one more row than ``ys``: ``thetas[t + 1]`` was drawn from
    the approximator fitted on ``ys[t]``, which was drawn from the likelihood
    at ``thetas[t]``.
    """

    thetas: np.ndarray
    ys: np.ndarray
    config: ChainConfig = field(repr=False)

    def __post_init__(self):
        if len(self.thetas) != len(self.ys) + 1:
            raise ValueError("need len(thetas) == len(ys) + 1")

    @property
    def steps(self) -> int:
        return len(self.ys)

    def latent_draws(self) -> np.ndarray:
        """Post-burn-in, thinned latent samples (the implicit-prior draws)."""
        cfg = self.config
        return self.thetas[cfg.burn_in + 1 : len(self.thetas) : cfg.thinning]


def simulate_gibbs_chain(pair: ConditionalPair, cfg: ChainConfig) -> ChainTrace:
    """Run the alternating chain for ``cfg.steps`` steps.

    Returns the full trace (no subsampling applied; burn-in and thinning are
    carried as metadata and applied by the consumers).  Raises
    :class:`ChainError` with the failing step index if the approximator
    errors out or either conditional produces a non-finite draw.
    """
    rng = make_rng(cfg.seed)
    if isinstance(cfg.init, str):
        if pair.init_sampler is None:
            raise ValueError("init='prior' requires the pair to define init_sampler")
        theta = np.asarray(pair.init_sampler(rng), dtype=float).reshape(-1)
    else:
        theta = cfg.init
    if theta.shape != (pair.latent_dim,):
        raise ValueError(
            f"init has dimension {theta.shape}, expected ({pair.latent_dim},)"
        )

    T = cfg.steps
    thetas = np.empty((T + 1, pair.latent_dim))
    ys = np.empty((T, pair.observation_dim))
    thetas[0] = theta
    for t in range(T):
        y = np.asarray(pair.likelihood_sampler(theta, rng), dtype=float).reshape(-1)
        if y.shape != (pair.observation_dim,):
            raise ChainError(t, f"likelihood draw has shape {y.shape}", y)
        if not np.all(np.isfinite(y)):
            raise ChainError(t, "likelihood produced a non-finite observation", y)
        ys[t] = y
        try:
            theta = np.asarray(pair.approximator(y, rng), dtype=float).reshape(-1)
        except ChainError:
            raise
        except Exception as exc:
            raise ChainError(t, f"approximator failed: {exc}", y) from exc
        if theta.shape != (pair.latent_dim,):
            raise ChainError(t, f"approximator draw has shape {theta.shape}", y)
        if not np.all(np.isfinite(theta)):
            raise ChainError(t, "approximator produced a non-finite draw", y)
        thetas[t + 1] = theta
    return ChainTrace(thetas=thetas, ys=ys, config=cfg)


def run_chains(
    pair: ConditionalPair,
    cfg: ChainConfig,
    n_chains: int,
    max_workers: int | None = None,
) -> list[ChainTrace]:
    """Run ``n_chains`` independent chains with derived child seeds.

    Chain ``i`` uses seed ``child_seed(cfg.seed, i)``; results are ordered by
    chain index and independent of scheduling.  Worker count is capped by the
    ``GIBBS_DIAG_THREADS`` environment variable when set.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    configs = [replace(cfg, seed=child_seed(cfg.seed, i)) for i in range(n_chains)]
    if max_workers is None:
        env = os.environ.get("GIBBS_DIAG_THREADS")
        max_workers = int(env) if env else min(n_chains, os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, n_chains))
    if max_workers == 1:
        return [simulate_gibbs_chain(pair, c) for c in configs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda c: simulate_gibbs_chain(pair, c), configs))


def paired_joint_samples(trace: ChainTrace) -> tuple[np.ndarray, np.ndarray]:
    """Post-burn-in joint samples paired in both orders.

    Returns ``(current_pairs, shifted_pairs)`` of equal length: row ``k`` of
    ``current_pairs`` stacks ``(theta_t, y_t)`` and the same row of
    ``shifted_pairs`` stacks ``(theta_{t+1}, y_t)``.  The first set draws
    from the joint whose latent marginal is the implicit prior; the second
    from the joint whose observation marginal is stationary.  They coincide
    in distribution exactly when the two conditional families are
    compatible.
    """
    cfg = trace.config
    idx = np.arange(cfg.burn_in + 1, trace.steps, cfg.thinning)
    if len(idx) == 0:
        raise ValueError("post-burn-in segment is empty; no pairs available")
    current = np.hstack([trace.thetas[idx], trace.ys[idx]])
    shifted = np.hstack([trace.thetas[idx + 1], trace.ys[idx]])
    return current, shifted


def compatibility_score(
    trace: ChainTrace,
    bandwidth: float = 1.0,
    n_permutations: int = 200,
    seed: int | None = None,
) -> tuple[float, np.ndarray]:
    """Squared-MMD compatibility measurement with a permutation null.

    Computes the unbiased squared-MMD estimate between the two paired joint
    sample sets under a Gaussian kernel with the given bandwidth, clamped at
    zero, together with the sorted squared-MMD statistics of
    ``n_permutations`` random splits of the pooled pairs.  A score above the
    high quantiles of the null indicates incompatible conditionals.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    current, shifted = paired_joint_samples(trace)
    if len(current) < 10:
        raise ValueError(f"only {len(current)} pairs; need at least 10")
    if seed is None:
        seed = child_seed(trace.config.seed, 0x5C07E)
    score, null = mmd2_permutation_null(
        current, shifted, bandwidth=bandwidth, n_permutations=n_permutations, seed=seed
    )
    return max(score, 0.0), null


def write_trace_csv(trace: ChainTrace, path: str | os.PathLike) -> None:
    """Write the trace as CSV; observation columns are empty on the last row."""
    d = trace.thetas.shape[1]
    m = trace.ys.shape[1]
    header = (
        ["step"]
        + [f"theta_{j}" for j in range(d)]
        + [f"y_{j}" for j in range(m)]
    )
    lines = [",".join(header)]
    for t in range(trace.steps + 1):
        row = [str(t)] + [repr(float(v)) for v in trace.thetas[t]]
        if t < trace.steps:
            row += [repr(float(v)) for v in trace.ys[t]]
        else:
            row += [""] * m
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_config_json(cfg: ChainConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json_dict(), fh, indent=2)
        fh.write("\n")
