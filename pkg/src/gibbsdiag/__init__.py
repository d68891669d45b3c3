"""Diagnostics for approximate Bayesian inference via pseudo-Gibbs sampling.

The central object is the alternating chain over a likelihood sampler and a
posterior approximator.  Its latent-side stationary distribution is the prior
the approximation method implicitly uses; comparing it to the declared prior
exposes the method's inductive bias.  Exact Gaussian and finite-state
laboratories provide closed-form ground truth for verification.
"""

__version__ = "0.1.0"

from gibbsdiag.core_engine import (
    ChainConfig,
    ChainError,
    ChainTrace,
    ConditionalPair,
    compatibility_score,
    paired_joint_samples,
    run_chains,
    simulate_gibbs_chain,
)

__all__ = [
    "ChainConfig",
    "ChainError",
    "ChainTrace",
    "ConditionalPair",
    "compatibility_score",
    "paired_joint_samples",
    "run_chains",
    "simulate_gibbs_chain",
    "__version__",
]
