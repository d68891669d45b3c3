"""Convergence monitoring, two-sample divergence, and rank calibration.

Everything here is a pure computation on arrays.  The rank-histogram
routine implements the classic prior/posterior rank uniformity check with a
pointwise binomial confidence band.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from gibbsdiag import svg

__all__ = [
    "RankHistogram",
    "autocorrelation",
    "compactness",
    "gelman_rubin",
    "median_bandwidth",
    "mmd2",
    "mmd2_permutation_null",
    "mmd_permutation_pvalue",
    "sbc_ranks",
]


def gelman_rubin(chains: np.ndarray, split: bool = False) -> float | np.ndarray:
    """Potential scale reduction factor across parallel chains.

    ``chains`` has shape ``(n_chains, n_steps)`` for a scalar quantity or
    ``(n_chains, n_steps, d)`` for a vector one; the result is a float or a
    length-``d`` array accordingly.  With ``split=True`` every chain is
    halved first, which also detects trends within single chains.

    Values near 1 indicate the chains are sampling the same distribution.
    """
    arr = np.asarray(chains, dtype=float)
    scalar = arr.ndim == 2
    if scalar:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("chains must have shape (n_chains, n_steps[, d])")
    if split:
        half = arr.shape[1] // 2
        arr = np.concatenate([arr[:, :half], arr[:, arr.shape[1] - half :]], axis=0)
    m, n = arr.shape[0], arr.shape[1]
    if m < 2:
        raise ValueError("need at least 2 chains")
    if n < 4:
        raise ValueError("need chains of length >= 4")
    means = arr.mean(axis=1)
    W = arr.var(axis=1, ddof=1).mean(axis=0)
    if np.any(W <= 0):
        raise ValueError("within-chain variance is zero")
    B = n * means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    rhat = np.sqrt(var_hat / W)
    return float(rhat[0]) if scalar else rhat


def autocorrelation(chain: np.ndarray, k: int) -> float:
    """Sample correlation between the sequence and itself shifted by ``k``."""
    x = np.asarray(chain, dtype=float).reshape(-1)
    if k < 0:
        raise ValueError("lag must be nonnegative")
    if len(x) <= k + 1:
        raise ValueError("sequence too short for this lag")
    if np.var(x) == 0:
        raise ValueError("sequence is constant")
    if k == 0:
        return 1.0
    a = x[:-k]
    b = x[k:]
    sa = a.std()
    sb = b.std()
    if sa == 0 or sb == 0:
        raise ValueError("shifted segment is constant")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def _gaussian_gram(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * x @ y.T
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * bandwidth * bandwidth))


def mmd2(a: np.ndarray, b: np.ndarray, bandwidth: float = 1.0) -> float:
    """Unbiased estimate of the squared maximum mean discrepancy.

    Uses the Gaussian kernel ``exp(-||x - y||^2 / (2 bandwidth^2))``; the
    default bandwidth 1 matches the plain ``exp(-||x - y||^2 / 2)`` kernel.
    The U-statistic is unbiased and may be slightly negative for samples
    from the same distribution.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise ValueError("need at least 2 samples on each side")
    kaa = _gaussian_gram(a, a, bandwidth)
    kbb = _gaussian_gram(b, b, bandwidth)
    kab = _gaussian_gram(a, b, bandwidth)
    term_aa = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_bb = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    term_ab = kab.sum() / (n * m)
    return float(term_aa + term_bb - 2.0 * term_ab)


def median_bandwidth(samples: np.ndarray, cap: int = 2000) -> float:
    """Median heuristic: median pairwise distance of (a subset of) samples."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(x) > cap:
        x = x[:: len(x) // cap + 1]
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(x * x, axis=1)[None, :]
        - 2.0 * x @ x.T
    )
    np.maximum(sq, 0.0, out=sq)
    med = float(np.median(np.sqrt(sq[np.triu_indices(len(x), k=1)])))
    return med if med > 0 else 1.0


def mmd2_permutation_null(
    a: np.ndarray,
    b: np.ndarray,
    bandwidth: float = 1.0,
    n_permutations: int = 200,
    seed: int = 0,
    block: int = 2048,
) -> tuple[float, np.ndarray]:
    """Observed squared MMD plus its permutation null distribution.

    Pools the two sample sets, draws ``n_permutations`` random relabelings,
    and evaluates the unbiased squared-MMD statistic for every split from a
    single blocked pass over the pooled Gram matrix (for each indicator
    vector ``s`` the statistic only needs ``s'Ks``, ``s'K1`` and ``1'K1``).
    Returns ``(observed, sorted_null)``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise ValueError("need at least 2 samples on each side")
    rng = np.random.default_rng(seed)
    pooled = np.vstack([a, b])
    N = n + m
    S = np.zeros((N, n_permutations + 2))
    S[:n, 0] = 1.0
    for j in range(1, n_permutations + 1):
        S[rng.permutation(N)[:n], j] = 1.0
    S[:, -1] = 1.0
    KS = np.zeros((N, n_permutations + 2))
    sq = np.sum(pooled * pooled, axis=1)
    inv = -1.0 / (2.0 * bandwidth * bandwidth)
    for i0 in range(0, N, block):
        i1 = min(i0 + block, N)
        d2 = sq[i0:i1, None] + sq[None, :] - 2.0 * pooled[i0:i1] @ pooled.T
        np.maximum(d2, 0.0, out=d2)
        np.exp(d2 * inv, out=d2)
        KS[i0:i1] = d2 @ S
    k_ones = KS[:, -1]
    total = float(np.sum(k_ones))
    out = np.empty(n_permutations + 1)
    for j in range(n_permutations + 1):
        s = S[:, j]
        within_a = float(s @ KS[:, j])
        row_a = float(s @ k_ones)
        within_b = total - 2.0 * row_a + within_a
        cross = row_a - within_a
        out[j] = (
            (within_a - n) / (n * (n - 1))
            + (within_b - m) / (m * (m - 1))
            - 2.0 * cross / (n * m)
        )
    return float(out[0]), np.sort(out[1:])


def mmd_permutation_pvalue(observed: float, null: np.ndarray) -> float:
    """Upper-tail permutation p-value with the +1 correction."""
    null = np.asarray(null, dtype=float)
    return float((1 + np.sum(null >= observed)) / (1 + len(null)))


def compactness(samples: np.ndarray) -> float:
    """Frobenius norm of the unbiased sample covariance matrix."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    cov = np.cov(x, rowvar=False, ddof=1)
    return float(np.linalg.norm(np.atleast_2d(cov), ord="fro"))


@dataclass(frozen=True)
class RankHistogram:
    """Rank counts of a prior draw among approximator draws.

    ``counts[r]`` is the number of repetitions whose statistic ranked
    ``r``-th among ``L`` approximator draws, ``r = 0 .. L``.  ``band_99``
    is the pointwise 99% interval of a single bin count under uniformity,
    from Binomial(N, 1/(L+1)) quantiles.
    """

    counts: np.ndarray
    N: int
    L: int
    band_99: tuple[float, float]

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.N:
            raise ValueError("counts must sum to N")
        if len(self.counts) != self.L + 1:
            raise ValueError("need L + 1 rank bins")

    def rebinned(self) -> "RankHistogram":
        """Merge adjacent bin pairs once, recomputing the band.

        A trailing unpaired bin is kept as-is when the bin count is odd.
        The merged histogram reuses this class with ``L`` set to the new
        bin count minus one; bins then carry unequal probabilities only in
        the odd case, where the band refers to the merged bins.
        """
        c = self.counts
        merged = [int(c[i] + c[i + 1]) for i in range(0, len(c) - len(c) % 2, 2)]
        if len(c) % 2:
            merged.append(int(c[-1]))
        p = 2.0 / (self.L + 1)
        band = (
            float(stats.binom.ppf(0.005, self.N, p)),
            float(stats.binom.ppf(0.995, self.N, p)),
        )
        return RankHistogram(
            counts=np.asarray(merged), N=self.N, L=len(merged) - 1, band_99=band
        )

    def uniformity_pvalue(self) -> float:
        """Chi-square uniformity p-value on the once-merged bins."""
        merged = self.rebinned()
        n_bins = len(merged.counts)
        expected = np.full(n_bins, self.N / n_bins)
        if (self.L + 1) % 2:
            expected = self.N * np.array(
                [2.0 / (self.L + 1)] * (n_bins - 1) + [1.0 / (self.L + 1)]
            )
        chi2 = float(np.sum((merged.counts - expected) ** 2 / expected))
        return float(stats.chi2.sf(chi2, df=n_bins - 1))

    def to_json_dict(self) -> dict:
        return {
            "counts": [int(v) for v in self.counts],
            "N": int(self.N),
            "L": int(self.L),
            "band_99": [float(self.band_99[0]), float(self.band_99[1])],
        }

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def write_svg(self, path: str | os.PathLike, title: str = "rank histogram") -> None:
        svg.bar_chart(
            [int(v) for v in self.counts],
            path,
            band=self.band_99,
            title=title,
        )


def sbc_ranks(
    prior_sampler: Callable[[np.random.Generator], np.ndarray],
    likelihood_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    approximator: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    f: Callable[[np.ndarray], float],
    N: int,
    L: int,
    rng: np.random.Generator,
) -> RankHistogram:
    """Rank-uniformity calibration of an approximator.

    Each of the ``N`` repetitions draws a latent point from the prior, an
    observation from the likelihood, and ``L`` latent draws from the
    approximator fitted on that observation; the statistic of the prior
    draw is ranked among the statistics of the approximator draws.  Ranks
    are uniform on ``{0, .., L}`` when the approximator equals the exact
    posterior.  Ties are broken by uniform randomization.
    """
    if N < 1 or L < 1:
        raise ValueError("N and L must be >= 1")
    counts = np.zeros(L + 1, dtype=int)
    for i in range(N):
        theta = np.asarray(prior_sampler(rng), dtype=float).reshape(-1)
        y = np.asarray(likelihood_sampler(theta, rng), dtype=float).reshape(-1)
        ref = float(f(theta))
        vals = np.empty(L)
        for l in range(L):
            try:
                draw = approximator(y, rng)
            except Exception as exc:
                raise RuntimeError(f"approximator failed at repetition {i}") from exc
            vals[l] = float(f(np.asarray(draw, dtype=float).reshape(-1)))
        below = int(np.sum(vals < ref))
        ties = int(np.sum(vals == ref))
        rank = below + (int(rng.integers(0, ties + 1)) if ties else 0)
        counts[rank] += 1
    band = (
        float(stats.binom.ppf(0.005, N, 1.0 / (L + 1))),
        float(stats.binom.ppf(0.995, N, 1.0 / (L + 1))),
    )
    return RankHistogram(counts=counts, N=N, L=L, band_99=band)
