"""Command-line interface.

Models are addressed either by a JSON file path or by a ``corpus:`` URI.
Every command that writes results takes ``--out DIR`` and leaves a
``manifest.json`` there describing what produced the directory.  Exit
codes: 0 success, 1 a gated conflict fired, 2 usage/model errors, 3
sampling or numerical failures.
"""
from __future__ import annotations

import datetime
import functools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import __version__
from .calibration import (
    normal_normal_alternative,
    normal_normal_degenerate,
    normal_normal_null,
    run_calibration,
)
from .conflict import (
    KdeConfig,
    component_moments,
    conflict_auto,
    conflict_chi2,
    conflict_discrete,
    conflict_kde_multivariate,
    conflict_kde_univariate,
    conflict_mahalanobis,
    conflict_one_sided,
    conflict_two_sided,
)
from .corpus import corpus_names, corpus_splits, describe, load_split, parse_uri, resolve
from .corpus.disease import disease_posteriors
from .diagnostics import convergence_report
from .errors import ContractError, ModelError, NumericalError, SamplingError
from .model import DagModel, load_model
from .sampler import SamplerConfig, run_mcmc
from .splitting import SplitSpec, delta_samples, split_node
from .trace import save_trace

_USAGE_ERRORS = (ContractError, ModelError, OSError, json.JSONDecodeError, KeyError)
_NUMERIC_ERRORS = (SamplingError, NumericalError)


class ConflictGateFired(Exception):
    pass


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConflictGateFired as e:
            click.echo(str(e))
            sys.exit(1)
        except _NUMERIC_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3)
        except _USAGE_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)

    return wrapper


def _load_model_arg(model: str) -> DagModel:
    if model.startswith("corpus:"):
        m, _ = resolve(model)
        return m
    return load_model(model)


def _write_manifest(out: Path, command: str, **extra) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
    }
    manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sampler_config(seed, chains, iters, burnin, thin, conjugate) -> SamplerConfig:
    # --iters counts retained sweeps per chain, so total = burn-in + iters
    return SamplerConfig(
        n_chains=chains,
        n_iterations=burnin + iters,
        burn_in=burnin,
        thin=thin,
        seed=seed,
        enable_conjugate=conjugate,
    )


def _sampling_options(fn):
    for opt in reversed(
        (
            click.option("--seed", default=0, show_default=True, help="Base random seed."),
            click.option("--chains", default=2, show_default=True),
            click.option("--iters", default=2000, show_default=True, help="Retained iterations per chain (after burn-in)."),
            click.option("--burnin", default=1000, show_default=True),
            click.option("--thin", default=1, show_default=True),
            click.option("--no-conjugate", "conjugate", flag_value=False, default=True, help="Force random-walk updates everywhere."),
        )
    ):
        fn = opt(fn)
    return fn


_METHODS = {
    "auto": conflict_auto,
    "two_sided": lambda d, cfg: conflict_two_sided(d),
    "one_sided_lower": lambda d, cfg: conflict_one_sided(d, "lower"),
    "one_sided_upper": lambda d, cfg: conflict_one_sided(d, "upper"),
    "kde": None,  # dispatched on dimensionality
    "chi2": lambda d, cfg: conflict_chi2(d),
    "mahalanobis": lambda d, cfg: conflict_mahalanobis(d),
}


def _run_estimator(method: str, delta, kde_config: KdeConfig):
    if method == "auto":
        return conflict_auto(delta, kde_config)
    if method == "kde":
        if delta.k == 1:
            return conflict_kde_univariate(delta, kde_config)
        return conflict_kde_multivariate(delta, kde_config)
    fn = _METHODS.get(method)
    if fn is None:
        raise ContractError(f"unknown method {method!r}; choose from " + ", ".join(_METHODS))
    return fn(delta, kde_config)


@click.group()
@click.version_option(version=__version__, prog_name="dagsplit")
def main():
    """Node-splitting conflict diagnostics for DAG evidence synthesis."""


@main.command()
@click.argument("model")
@_guard
def validate(model):
    """Check a model file (or corpus: URI) and print its report."""
    m = _load_model_arg(model)
    report = m.validate()
    for v in report.violations:
        click.echo(f"violation[{v.kind}] {v.node}: {v.detail}")
    for w in report.warnings:
        click.echo(f"warning[{w.kind}] {w.node}: {w.detail}")
    if not report.ok:
        raise ModelError(f"{model} failed validation with {len(report.violations)} violation(s)")
    click.echo(f"ok: {len(m.nodes)} nodes, hash {m.hash()[:12]}")


@main.command()
@click.argument("model")
@click.option("--out", "-o", required=True, type=click.Path(path_type=Path))
@_sampling_options
@click.option("--no-rhat-gate", "rhat_gate", flag_value=False, default=True, help="Skip the split-Rhat convergence gate.")
@_guard
def sample(model, out, seed, chains, iters, burnin, thin, conjugate, rhat_gate):
    """Sample a model and write samples.csv / meta.json to --out."""
    m = _load_model_arg(model)
    config = _sampler_config(seed, chains, iters, burnin, thin, conjugate)
    trace = run_mcmc(m, config)
    save_trace(trace, out)
    _write_manifest(out, "sample", model=model, seed=seed, model_hash=m.hash())
    report = convergence_report(trace)
    click.echo(report.summary())
    if rhat_gate and not report.ok:
        raise NumericalError(f"convergence gate failed: {report.summary()}")
    click.echo(f"wrote {out / 'samples.csv'}")


def _conflict_once(
    model_arg: str,
    split_arg: str | None,
    out: Path | None,
    method: str,
    bandwidth: str,
    config: SamplerConfig,
    rhat_gate: bool,
) -> dict:
    """Shared sample-split-score pipeline for `conflict` and `report`."""
    split_name = None
    if model_arg.startswith("corpus:"):
        name, split_name, params = parse_uri(model_arg)
        if name == "disease" and split_name is None and split_arg is None:
            pa, pb = disease_posteriors(**params)
            res = conflict_discrete(pa, pb)
            return {"split": "indicator", "result": res, "rhat_max": None, "trace": None, "model_hash": None}
        base, spec = resolve(model_arg)
        if spec is None and split_arg is None:
            raise ContractError("no split named; use corpus:<name>/<split> or --split")
    else:
        base = load_model(model_arg)
        spec = None
    if split_arg is not None:
        if split_arg.startswith("corpus:"):
            sname, ssplit, _ = parse_uri(split_arg)
            if ssplit is None:
                raise ContractError(f"split URI {split_arg!r} names no split")
            spec = load_split(sname, ssplit)
        else:
            with open(split_arg) as fh:
                spec = SplitSpec.from_json(json.load(fh))
    assert spec is not None
    split = split_node(base, spec)
    trace = run_mcmc(split.model, config)
    report = convergence_report(trace)
    if rhat_gate and not report.ok:
        raise NumericalError(f"convergence gate failed for split {spec.name}: {report.summary()}")
    delta = delta_samples(trace, split)
    bw = "silverman" if bandwidth == "silverman" else float(bandwidth)
    res = _run_estimator(method, delta, KdeConfig(bandwidth=bw))
    skew, kurt = component_moments(delta)
    finite = [r for r in report.rhat.values() if math.isfinite(r)]
    row = {
        "split": spec.name or "+".join(spec.separators),
        "result": res,
        "rhat_max": max(finite) if finite else None,
        "trace": trace,
        "model_hash": split.model.hash(),
        "skewness": [float(v) for v in skew],
        "excess_kurtosis": [float(v) for v in kurt],
    }
    if out is not None:
        save_trace(trace, out)
        payload = {
            "method": res.method,
            "p_value": res.p_value,
            "mc_se": res.mc_se,
            "n_draws": res.n_draws,
            "k": res.k,
            "details": res.details,
            "split": spec.to_json(),
            "model_hash": row["model_hash"],
            "rhat_max": row["rhat_max"],
        }
        with open(out / "conflict.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return row


@main.command()
@click.argument("model")
@click.option("--split", "split_arg", default=None, help="Split spec: JSON file or corpus:<name>/<split>.")
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None)
@click.option("--method", default="auto", show_default=True, type=click.Choice(sorted(_METHODS)))
@click.option("--bandwidth", default="silverman", show_default=True, help="KDE bandwidth: 'silverman' or a number.")
@_sampling_options
@click.option("--no-rhat-gate", "rhat_gate", flag_value=False, default=True)
@click.option("--gate", type=float, default=None, help="Exit 1 when the p-value falls below this threshold.")
@_guard
def conflict(model, split_arg, out, method, bandwidth, seed, chains, iters, burnin, thin, conjugate, rhat_gate, gate):
    """Split, sample and score one separator; print the p-value."""
    config = _sampler_config(seed, chains, iters, burnin, thin, conjugate)
    row = _conflict_once(model, split_arg, out, method, bandwidth, config, rhat_gate)
    res = row["result"]
    if out is not None:
        _write_manifest(out, "conflict", model=model, split=row["split"], seed=seed, model_hash=row["model_hash"])
    click.echo(f"{row['split']}: {res.summary()}")
    if gate is not None and res.p_value < gate:
        raise ConflictGateFired(
            f"conflict gate fired: p={res.p_value:.6g} < {gate:g} for split {row['split']}"
        )


def _report_worker(args) -> tuple[str, dict]:
    (model_uri, split_name, out_dir, method, bandwidth, config_kw, rhat_gate) = args
    config = SamplerConfig(**config_kw)
    name, _, params = parse_uri(model_uri)
    suffix = "?" + "&".join(f"{k}={v}" for k, v in params.items()) if params else ""
    uri = f"corpus:{name}/{split_name}{suffix}"
    out = Path(out_dir) / split_name if out_dir else None
    row = _conflict_once(uri, None, out, method, bandwidth, config, rhat_gate)
    row.pop("trace", None)
    return split_name, row


@main.command()
@click.argument("corpus_uri")
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None)
@click.option("--method", default="auto", show_default=True, type=click.Choice(sorted(_METHODS)))
@click.option("--bandwidth", default="silverman", show_default=True)
@click.option("--splits", default=None, help="Comma-separated subset of split names.")
@click.option("--jobs", default=1, show_default=True, help="Parallel worker processes.")
@_sampling_options
@click.option("--no-rhat-gate", "rhat_gate", flag_value=False, default=True)
@click.option("--gate", type=float, default=None, help="Exit 1 when any split's p-value falls below this.")
@_guard
def report(corpus_uri, out, method, bandwidth, splits, jobs, seed, chains, iters, burnin, thin, conjugate, rhat_gate, gate):
    """Run every split of a corpus entry and print a conflict table."""
    name, split_part, params = parse_uri(corpus_uri)
    if split_part is not None:
        raise ContractError("pass the bare corpus entry; use `conflict` for one split")
    all_splits = corpus_splits(name)
    if name == "disease":
        row = _conflict_once(corpus_uri, None, None, "auto", bandwidth, _sampler_config(seed, chains, iters, burnin, thin, conjugate), rhat_gate)
        res = row["result"]
        click.echo("split        method    p_value     mc_se")
        click.echo(f"{row['split']:<12} {res.method:<9} {res.p_value:<11.6g} {res.mc_se:.2g}")
        if out is not None:
            _write_report_csv(out, [(row["split"], res, None, None, None)])
            _write_manifest(out, "report", corpus=corpus_uri, seed=seed)
        if gate is not None and res.p_value < gate:
            raise ConflictGateFired(f"conflict gate fired for {row['split']}")
        return
    chosen = all_splits
    if splits:
        chosen = tuple(s.strip() for s in splits.split(","))
        unknown = set(chosen) - set(all_splits)
        if unknown:
            raise ContractError(f"unknown splits for {name!r}: " + ", ".join(sorted(unknown)))
    config_kw = dict(
        n_chains=chains, n_iterations=burnin + iters, burn_in=burnin,
        thin=thin, seed=seed, enable_conjugate=conjugate,
    )
    tasks = [
        (corpus_uri, s, str(out) if out else None, method, bandwidth, config_kw, rhat_gate)
        for s in chosen
    ]
    results: dict[str, dict] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for split_name, row in pool.map(_report_worker, tasks):
                results[split_name] = row
    else:
        for t in tasks:
            split_name, row = _report_worker(t)
            results[split_name] = row
    click.echo("split           method            p_value     mc_se    max_rhat  max|skew|  max|exkurt|")
    rows = []
    fired = []
    for s in chosen:
        row = results[s]
        res = row["result"]
        rh = row["rhat_max"]
        skew = row.get("skewness")
        kurt = row.get("excess_kurtosis")
        ms = max(abs(v) for v in skew) if skew else math.nan
        mk = max(abs(v) for v in kurt) if kurt else math.nan
        click.echo(
            f"{s:<15} {res.method:<17} {res.p_value:<11.6g} {res.mc_se:<8.2g} "
            + (f"{rh:<9.3f}" if rh is not None else "-        ")
            + f" {ms:<10.3f} {mk:.3f}"
        )
        rows.append((s, res, rh, skew, kurt))
        if gate is not None and res.p_value < gate:
            fired.append(s)
    if out is not None:
        _write_report_csv(out, rows)
        _write_manifest(out, "report", corpus=corpus_uri, seed=seed, splits=list(chosen))
    if fired:
        raise ConflictGateFired("conflict gate fired for: " + ", ".join(fired))


def _write_report_csv(out: Path, rows) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w") as fh:
        fh.write("split,method,p_value,mc_se,max_rhat,skewness,excess_kurtosis\n")
        for s, res, rh, skew, kurt in rows:
            fh.write(
                f"{s},{res.method},{res.p_value!r},{res.mc_se!r},"
                + (f"{rh!r}" if rh is not None else "")
                + ","
                + (";".join(repr(v) for v in skew) if skew else "")
                + ","
                + (";".join(repr(v) for v in kurt) if kurt else "")
                + "\n"
            )


_SCENARIOS = {
    "null": normal_normal_null,
    "degenerate": normal_normal_degenerate,
    "alternative": normal_normal_alternative,
}


@main.command()
@click.option("--scenario", default="null", show_default=True, type=click.Choice(sorted(_SCENARIOS)))
@click.option("--replicates", default=200, show_default=True)
@click.option("--method", default="two_sided", show_default=True,
              type=click.Choice(["two_sided", "kde_univariate", "chi2", "mahalanobis"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None)
@click.option("--gate", is_flag=True, default=False, help="Exit 1 when the 5% KS gate fails.")
@_guard
def calibrate(scenario, replicates, method, seed, jobs, out, gate):
    """Replicate the null (or a stress scenario) and test p-value uniformity."""
    sc = _SCENARIOS[scenario](method=method)
    result = run_calibration(sc, seed=seed, n_replicates=replicates, jobs=jobs)
    click.echo(result.summary())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "pvalues.csv", "w") as fh:
            fh.write("replicate,p_value\n")
            for i, p in enumerate(result.p_values):
                fh.write(f"{i},{p!r}\n")
        payload = {
            "scenario": scenario,
            "method": method,
            "seed": seed,
            "replicates": replicates,
            "ks_statistic": result.ks.statistic,
            "ks_critical": result.ks.critical_values,
            "pilot_max_rhat": result.pilot_max_rhat,
        }
        with open(out / "calibration.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "calibrate", scenario=scenario, seed=seed)
    if gate and not result.ks.passes("5%"):
        raise ConflictGateFired(
            f"KS gate failed: {result.ks.statistic:.4f} >= {result.ks.critical_values['5%']:.4f}"
        )


@main.command("corpus")
@_guard
def corpus_list():
    """List bundled models and their split names."""
    for name in corpus_names():
        click.echo(f"corpus:{name}  -  {describe(name)}")
        names = corpus_splits(name)
        if names:
            click.echo("  splits: " + ", ".join(names))


if __name__ == "__main__":
    main()
