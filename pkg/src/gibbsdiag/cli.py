"""Batch front end: run experiments from JSON configs, compare reports.

Every run writes a reproducibility manifest, a machine-readable report,
the raw chain trace (for chain experiments) and simple SVG figures into
the output directory.  Exit codes: 0 success, 2 chain failure, 3 config
error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

import gibbsdiag
from gibbsdiag import diagnostics, finite_lab, gaussian_lab, model_zoo, svg
from gibbsdiag.core_engine import (
    ChainConfig,
    ChainError,
    ChainTrace,
    child_seed,
    compatibility_score,
    make_rng,
    run_chains,
    write_config_json,
    write_trace_csv,
)

__all__ = ["ConfigError", "RunConfig", "compare", "compare_reports", "load_config", "main", "run"]

EXPERIMENTS = (
    "toy-gaussian",
    "finite",
    "lognormal",
    "stochvol-external",
    "sbc",
    "compat",
)

_TOP_KEYS = {"experiment", "seed", "steps", "burn_in", "thinning", "output_dir", "params"}
_PARAM_KEYS = {
    "toy-gaussian": {"setting", "divergence", "n_obs", "n_chains", "max_lag"},
    "finite": {"fixture", "F", "Q", "perturb_seed"},
    "lognormal": {"L", "n_chains", "max_lag"},
    "stochvol-external": {"command", "T", "sigma", "nu", "timeout"},
    "sbc": {"N", "L", "variant"},
    "compat": {"variant", "bandwidth", "permutations"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    steps: int
    burn_in: int | None
    thinning: int
    output_dir: str
    params: dict

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": int(self.seed),
            "steps": int(self.steps),
            "burn_in": None if self.burn_in is None else int(self.burn_in),
            "thinning": int(self.thinning),
            "output_dir": self.output_dir,
            "params": self.params,
        }

    def chain_config(self, init: Any = "prior") -> ChainConfig:
        return ChainConfig(
            steps=self.steps,
            seed=self.seed,
            init=init,
            burn_in=self.burn_in,
            thinning=self.thinning,
        )


def load_config(
    path: str,
    output_override: str | None = None,
    seed_override: int | None = None,
) -> RunConfig:
    """Parse and validate a JSON config (or a manifest wrapping one)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]

    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    bad = set(params) - _PARAM_KEYS[experiment]
    if bad:
        raise ConfigError(f"unknown params for {experiment}: {sorted(bad)}")

    def _int(key: str, default: int, minimum: int) -> int:
        val = data.get(key, default)
        if not isinstance(val, int) or isinstance(val, bool) or val < minimum:
            raise ConfigError(f"{key} must be an integer >= {minimum}")
        return val

    seed = seed_override if seed_override is not None else _int("seed", 0, 0)
    steps = _int("steps", 5000, 1)
    burn_in = data.get("burn_in")
    if burn_in is not None and (
        not isinstance(burn_in, int) or isinstance(burn_in, bool) or burn_in < 0
    ):
        raise ConfigError("burn_in must be a nonnegative integer or null")
    thinning = _int("thinning", 1, 1)
    output_dir = output_override or data.get("output_dir")
    if not output_dir or not isinstance(output_dir, str):
        raise ConfigError("output_dir is required (config key or --output)")
    if burn_in is not None and burn_in >= steps:
        raise ConfigError("need burn_in + 1 <= steps")
    return RunConfig(
        experiment=experiment,
        seed=int(seed),
        steps=steps,
        burn_in=burn_in,
        thinning=thinning,
        output_dir=output_dir,
        params=params,
    )


def _mat(x: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(x)]


def _vec(x: np.ndarray) -> list:
    return [float(v) for v in np.asarray(x).reshape(-1)]


def _chain_diagnostics(traces: list[ChainTrace], max_lag: int) -> dict:
    draws = [t.latent_draws() for t in traces]
    out: dict[str, Any] = {}
    if len(draws) >= 2:
        length = min(len(d) for d in draws)
        stacked = np.stack([d[:length] for d in draws])
        rhat = diagnostics.gelman_rubin(stacked)
        out["rhat"] = _vec(np.atleast_1d(rhat))
        lengths = [n for n in np.unique(np.geomspace(8, length, 12).astype(int)) if n >= 4]
        out["rhat_curve"] = {
            "lengths": [int(n) for n in lengths],
            "values": [
                _vec(np.atleast_1d(diagnostics.gelman_rubin(stacked[:, :n])))
                for n in lengths
            ],
        }
    first = draws[0]
    lags = list(range(1, max_lag + 1))
    out["autocorrelation"] = {
        str(k): [
            float(diagnostics.autocorrelation(first[:, j], k))
            for j in range(first.shape[1])
        ]
        for k in lags
        if len(first) > k + 1
    }
    return out


def _write_rhat_curve_svg(report: dict, outdir: str) -> None:
    curve = report.get("rhat_curve")
    if not curve:
        return
    values = np.asarray(curve["values"])
    series = {f"dim {j}": values[:, j] for j in range(values.shape[1])}
    svg.line_chart(
        series,
        os.path.join(outdir, "rhat_curve.svg"),
        title="scale-reduction factor vs draws (log-spaced checkpoints)",
    )


# ---------------------------------------------------------------------------
# experiment drivers (report dict + artifact writers)
# ---------------------------------------------------------------------------


def _run_toy_gaussian(cfg: RunConfig, outdir: str) -> dict:
    setting = cfg.params.get("setting", "correlated-prior")
    divergence = cfg.params.get("divergence", "reverse-kl")
    n_obs = cfg.params.get("n_obs", 1)
    n_chains = cfg.params.get("n_chains", 2)
    max_lag = cfg.params.get("max_lag", 10)
    kind = {
        "reverse-kl": gaussian_lab.DivergenceKind.REVERSE_KL,
        "forward-kl": gaussian_lab.DivergenceKind.FORWARD_KL,
        "exact": None,
    }.get(divergence, "bad")
    if kind == "bad":
        raise ConfigError("divergence must be reverse-kl, forward-kl or exact")
    model = gaussian_lab.canonical_model(setting, n_obs=n_obs)

    rng = make_rng(child_seed(cfg.seed, 0xD5))
    theta_ref = model.prior.sample(rng)
    chol = np.linalg.cholesky(model.likelihood_cov)
    y_ref = theta_ref[None, :] + rng.standard_normal((n_obs, model.dim)) @ chol.T
    posterior = gaussian_lab.exact_posterior(model, y_ref)
    approx_cov = gaussian_lab.approx_covariance(model, kind)
    approximation = gaussian_lab.GaussianDist(posterior.mean, approx_cov)
    gibbs_prior = gaussian_lab.gibbs_prior_analytic(model, kind)
    trans = gaussian_lab.gibbs_transition(model, kind)
    pw = gaussian_lab.pointwise_prior(model, y_ref, kind)

    report: dict[str, Any] = {
        "experiment": cfg.experiment,
        "setting": setting,
        "divergence": divergence,
        "prior": model.prior.to_json_dict(),
        "posterior": posterior.to_json_dict(),
        "approximation": approximation.to_json_dict(),
        "gibbs_prior": gibbs_prior.to_json_dict(),
        "entropies": {
            "prior": gaussian_lab.gaussian_entropy(model.prior),
            "posterior": gaussian_lab.gaussian_entropy(posterior),
            "approximation": gaussian_lab.gaussian_entropy(approximation),
            "gibbs_prior": gaussian_lab.gaussian_entropy(gibbs_prior),
        },
        "pointwise_prior_status": "proper" if pw.proper else "improper",
        "reference_observation": _mat(y_ref),
        "transition": {
            "a": _vec(trans.a),
            "A": _mat(trans.A),
            "B": _mat(trans.B),
            "spectral_radius": trans.spectral_radius,
        },
    }
    if pw.proper:
        report["pointwise_prior"] = pw.dist.to_json_dict()
    else:
        report["pointwise_prior_witness"] = {
            "eigenvalue": pw.witness_eigenvalue,
            "eigenvector": _vec(pw.witness_eigenvector),
        }

    pair = gaussian_lab.gaussian_pair(model, kind)
    traces = run_chains(pair, cfg.chain_config(), n_chains)
    draws = traces[0].latent_draws()
    emp_mean = draws.mean(axis=0)
    emp_cov = np.cov(draws, rowvar=False, ddof=1)
    rel_err = np.linalg.norm(emp_cov - gibbs_prior.covariance, "fro") / np.linalg.norm(
        gibbs_prior.covariance, "fro"
    )
    report["simulation"] = {
        "empirical_mean": _vec(emp_mean),
        "empirical_covariance": _mat(emp_cov),
        "covariance_rel_frobenius_error": float(rel_err),
        "n_draws": int(len(draws)),
        **_chain_diagnostics(traces, max_lag),
    }
    write_trace_csv(traces[0], os.path.join(outdir, "trace.csv"))
    write_config_json(traces[0].config, os.path.join(outdir, "trace_config.json"))
    _write_rhat_curve_svg(report["simulation"], outdir)
    for j in range(draws.shape[1]):
        svg.histogram(
            draws[:, j],
            os.path.join(outdir, f"latent_{j}.svg"),
            title=f"latent draws, coordinate {j}",
        )
    return report


def _run_finite(cfg: RunConfig, outdir: str) -> dict:
    if "fixture" in cfg.params:
        model = finite_lab.load_fixture(cfg.params["fixture"])
    elif "F" in cfg.params and "Q" in cfg.params:
        model = finite_lab.FiniteModel(
            F=np.asarray(cfg.params["F"]), Q=np.asarray(cfg.params["Q"])
        )
    else:
        raise ConfigError("finite experiment needs a fixture name or F and Q matrices")
    P = finite_lab.transition_matrix(model)
    stationary = finite_lab.gibbs_stationary(model)
    gap3, gap4 = finite_lab.verify_mixture_identities(model)
    pointwise = [
        (None if p is None else _vec(p))
        for p in (
            finite_lab.pointwise_prior_exact(model, y) for y in range(model.m)
        )
    ]
    report: dict[str, Any] = {
        "experiment": cfg.experiment,
        "F": _mat(model.F),
        "Q": _mat(model.Q),
        "P": _mat(P),
        "stationary": {
            "pi_G": _vec(stationary.pi_G),
            "p_G": _vec(stationary.p_G),
            "residual": stationary.residual,
        },
        "mixture_identity_gaps": {"eq_stationarity": gap3, "eq_pointwise": gap4},
        "pointwise_priors": pointwise,
        "weak_compatibility_gap": finite_lab.weak_compatibility_gap(model),
    }
    try:
        perturbed = finite_lab.perturb_approximation(
            model, cfg.params.get("perturb_seed", cfg.seed)
        )
        report["perturbation"] = {
            "Q_tilde": _mat(perturbed.Q),
            "max_chain_gap": float(
                np.max(np.abs(P - finite_lab.transition_matrix(perturbed)))
            ),
        }
    except ValueError as exc:
        report["perturbation"] = {"unavailable": str(exc)}

    pair = finite_lab.finite_pair(model)
    trace = run_chains(pair, cfg.chain_config(), 1)[0]
    draws = trace.latent_draws()[:, 0].astype(int)
    freq = np.bincount(draws, minlength=model.n) / len(draws)
    report["simulation"] = {
        "empirical_frequencies": _vec(freq),
        "tv_distance_to_exact": float(0.5 * np.abs(freq - stationary.pi_G).sum()),
        "n_draws": int(len(draws)),
    }
    write_trace_csv(trace, os.path.join(outdir, "trace.csv"))
    write_config_json(trace.config, os.path.join(outdir, "trace_config.json"))
    svg.bar_chart(
        _vec(stationary.pi_G),
        os.path.join(outdir, "stationary.svg"),
        title="stationary latent distribution",
    )
    return report


def _run_lognormal(cfg: RunConfig, outdir: str) -> dict:
    model = model_zoo.LogNormalSumModel(L=cfg.params.get("L", 10))
    n_chains = cfg.params.get("n_chains", 2)
    max_lag = cfg.params.get("max_lag", 10)
    pair = model_zoo.lognormal_pair(model)
    traces = run_chains(pair, cfg.chain_config(), n_chains)
    draws = traces[0].latent_draws()
    mu, s2 = draws[:, 0], draws[:, 1]
    n = len(draws)
    prior_rng = make_rng(child_seed(cfg.seed, 0xF00D))
    prior_draws = np.stack([model.prior_sample(prior_rng) for _ in range(n)])
    z = float(mu.mean() / (mu.std(ddof=1) / math.sqrt(n)))
    report = {
        "experiment": cfg.experiment,
        "L": model.L,
        "mu": {
            "mean": float(mu.mean()),
            "std": float(mu.std(ddof=1)),
            "z_vs_prior_mean": z,
        },
        "sigma2": {
            "mean": float(s2.mean()),
            "p50": float(np.quantile(s2, 0.5)),
            "p99": float(np.quantile(s2, 0.99)),
            "prior_p99_matched": float(np.quantile(prior_draws[:, 1], 0.99)),
        },
        "n_draws": n,
        **_chain_diagnostics(traces, max_lag),
    }
    write_trace_csv(traces[0], os.path.join(outdir, "trace.csv"))
    write_config_json(traces[0].config, os.path.join(outdir, "trace_config.json"))
    _write_rhat_curve_svg(report, outdir)
    svg.histogram(mu, os.path.join(outdir, "mu.svg"), title="location draws")
    svg.histogram(s2, os.path.join(outdir, "sigma2.svg"), title="variance draws")
    return report


def _run_stochvol_external(cfg: RunConfig, outdir: str) -> dict:
    command = cfg.params.get("command")
    if not command:
        raise ConfigError("stochvol-external needs params.command")
    model = model_zoo.StochVolModel(
        T=cfg.params.get("T", 100),
        sigma=cfg.params.get("sigma", 0.09),
        nu=cfg.params.get("nu", 12.0),
    )
    backend = model_zoo.external_approximator(
        command,
        latent_dim=model.T,
        observation_dim=model.T,
        timeout=cfg.params.get("timeout", 60.0),
    )
    try:
        pair = model_zoo.stochvol_pair(model, backend.approximator)
        trace = run_chains(pair, cfg.chain_config(), 1)[0]
    finally:
        backend.close()
    draws = trace.latent_draws()
    prior_rng = make_rng(child_seed(cfg.seed, 0xF00D))
    prior_draws = np.stack(
        [model_zoo.stochvol_sample_prior(model, prior_rng) for _ in range(len(draws))]
    )
    path_means = draws.mean(axis=1)
    report = {
        "experiment": cfg.experiment,
        "T": model.T,
        "compactness": {
            "prior": diagnostics.compactness(prior_draws),
            "gibbs": diagnostics.compactness(draws),
        },
        "mmd2_gibbs_vs_prior": diagnostics.mmd2(draws, prior_draws, bandwidth=1.0),
        "path_mean": {
            "mean": float(path_means.mean()),
            "std": float(path_means.std(ddof=1)) if len(path_means) > 1 else 0.0,
        },
        "n_draws": int(len(draws)),
    }
    write_trace_csv(trace, os.path.join(outdir, "trace.csv"))
    write_config_json(trace.config, os.path.join(outdir, "trace_config.json"))
    svg.histogram(
        path_means, os.path.join(outdir, "path_mean.svg"), title="mean of latent path"
    )
    return report


def _sbc_conjugate_parts(variant: str):
    """1-D conjugate model: N(0,1) prior, unit-noise likelihood."""

    def prior_sampler(rng):
        return np.array([rng.standard_normal()])

    def likelihood_sampler(theta, rng):
        return np.array([theta[0] + rng.standard_normal()])

    post_sd = math.sqrt(0.5)
    if variant == "exact":
        shift, sd = 0.0, post_sd
    elif variant == "variance-halved":
        shift, sd = 0.0, math.sqrt(0.25)
    elif variant == "mean-shifted":
        shift, sd = 2.0 * post_sd, post_sd
    else:
        raise ConfigError(f"unknown sbc variant {variant!r}")

    def approximator(y, rng):
        return np.array([0.5 * y[0] + shift + sd * rng.standard_normal()])

    return prior_sampler, likelihood_sampler, approximator


def _run_sbc(cfg: RunConfig, outdir: str) -> dict:
    N = cfg.params.get("N", 323)
    L = cfg.params.get("L", 31)
    variant = cfg.params.get("variant", "exact")
    prior_sampler, likelihood_sampler, approximator = _sbc_conjugate_parts(variant)
    hist = diagnostics.sbc_ranks(
        prior_sampler,
        likelihood_sampler,
        approximator,
        f=lambda th: float(th[0]),
        N=N,
        L=L,
        rng=make_rng(cfg.seed),
    )
    report = {
        "experiment": cfg.experiment,
        "variant": variant,
        "rank_histogram": hist.to_json_dict(),
        "uniformity_pvalue": hist.uniformity_pvalue(),
        "extreme_bins_above_band": {
            "low": bool(hist.counts[0] > hist.band_99[1]),
            "high": bool(hist.counts[-1] > hist.band_99[1]),
        },
    }
    hist.write_json(os.path.join(outdir, "rank_histogram.json"))
    hist.write_svg(os.path.join(outdir, "rank_histogram.svg"))
    return report


def _run_compat(cfg: RunConfig, outdir: str) -> dict:
    variant = cfg.params.get("variant", "compatible")
    pair = model_zoo.arnold_pair(
        model_zoo.ArnoldVariant.COMPATIBLE
        if variant == "compatible"
        else model_zoo.ArnoldVariant.INCOMPATIBLE
    )
    trace = run_chains(pair, cfg.chain_config(), 1)[0]
    score, null = compatibility_score(
        trace,
        bandwidth=cfg.params.get("bandwidth", 1.0),
        n_permutations=cfg.params.get("permutations", 200),
    )
    pval = diagnostics.mmd_permutation_pvalue(score, null)
    report = {
        "experiment": cfg.experiment,
        "variant": variant,
        "compatibility_score": score,
        "null_quantiles": {
            "q50": float(np.quantile(null, 0.50)),
            "q95": float(np.quantile(null, 0.95)),
            "q99": float(np.quantile(null, 0.99)),
        },
        "p_value": pval,
        "rejects_compatibility_at_1pct": bool(pval <= 0.01),
    }
    write_trace_csv(trace, os.path.join(outdir, "trace.csv"))
    write_config_json(trace.config, os.path.join(outdir, "trace_config.json"))
    svg.histogram(null, os.path.join(outdir, "null.svg"), title="permutation null")
    return report


_DRIVERS = {
    "toy-gaussian": _run_toy_gaussian,
    "finite": _run_finite,
    "lognormal": _run_lognormal,
    "stochvol-external": _run_stochvol_external,
    "sbc": _run_sbc,
    "compat": _run_compat,
}


def run(
    config_path: str,
    output_override: str | None = None,
    seed_override: int | None = None,
) -> int:
    """Execute one experiment config; see module docstring for exit codes."""
    try:
        cfg = load_config(config_path, output_override, seed_override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    manifest = {"version": gibbsdiag.__version__, "config": cfg.to_json_dict()}
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    try:
        report = _DRIVERS[cfg.experiment](cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (ChainError, model_zoo.ProtocolError, RuntimeError) as exc:
        error = {"error": str(exc)}
        if isinstance(exc, ChainError):
            error["step"] = exc.step
            if exc.y is not None:
                error["y"] = _vec(exc.y)
        with open(os.path.join(outdir, "error.json"), "w") as fh:
            json.dump(error, fh, indent=2)
            fh.write("\n")
        print(f"chain failure: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return 0


def _numeric_leaves(obj: Any, prefix: str = "") -> dict[str, float]:
    out: dict[str, float] = {}
    if isinstance(obj, bool):
        return out
    if isinstance(obj, (int, float)):
        out[prefix] = float(obj)
    elif isinstance(obj, dict):
        for key, val in obj.items():
            out.update(_numeric_leaves(val, f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(obj, list):
        arr = np.asarray(obj, dtype=object)
        try:
            flat = np.asarray(obj, dtype=float).reshape(-1)
        except (ValueError, TypeError):
            for i, val in enumerate(arr.tolist()):
                out.update(_numeric_leaves(val, f"{prefix}[{i}]"))
        else:
            for i, val in enumerate(flat):
                out[f"{prefix}[{i}]"] = float(val)
    return out


def compare_reports(report_a: dict, report_b: dict) -> dict[str, float]:
    """Numeric deltas (a minus b) over the shared keys of two reports."""
    if report_a.get("experiment") != report_b.get("experiment"):
        raise ConfigError(
            f"experiment mismatch: {report_a.get('experiment')!r} vs "
            f"{report_b.get('experiment')!r}"
        )
    leaves_a = _numeric_leaves(report_a)
    leaves_b = _numeric_leaves(report_b)
    return {k: leaves_a[k] - leaves_b[k] for k in leaves_a if k in leaves_b}


def compare(report_path_a: str, report_path_b: str) -> int:
    try:
        with open(report_path_a) as fh:
            a = json.load(fh)
        with open(report_path_b) as fh:
            b = json.load(fh)
        deltas = compare_reports(a, b)
    except (OSError, ValueError, ConfigError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return 3
    for key in sorted(deltas):
        print(f"delta {key} = {deltas[key]:.10g}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gibbsdiag", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--output", default=None, help="override output_dir")
    p_run.add_argument("--seed-override", type=int, default=None)
    p_cmp = sub.add_parser("compare", help="diff two report.json files")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    args = parser.parse_args(argv)
    if args.cmd == "run":
        return run(args.config, args.output, args.seed_override)
    return compare(args.report_a, args.report_b)


if __name__ == "__main__":
    sys.exit(main())
