"""Command-line entry point: run experiments, verify bounds, serve sessions.

Exit codes: 0 success, 1 verification-check failure, 2 configuration error.
"""

from __future__ import annotations

import difflib
import json
import sys
from pathlib import Path

import click
import numpy as np

from .analysis import (
    Box,
    box_from_points,
    check_sequence_lemma,
    compute_bound_constants,
    lipschitz_constant_x,
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
    verify_lemma4,
    verify_theorem1,
)
from .controller import TrajectoryRecord
from .harness import ConfigError, ExperimentConfig, builtin_configs, run_experiment
from .plant import compute_lyapunov_certificate
from .preference import LinkFunction, QuadraticTracking, ReducedUtility

_LEMMAS = ("1", "2", "3", "4", "5", "theorem1")


@click.group()
def main():
    """Preference-feedback online optimization controller."""


def _resolve_config(name_or_path: str) -> ExperimentConfig:
    builtins = builtin_configs()
    if name_or_path in builtins:
        return builtins[name_or_path]
    if Path(name_or_path).exists():
        return ExperimentConfig.from_file(name_or_path)
    close = difflib.get_close_matches(name_or_path, builtins, n=3, cutoff=0.3)
    hint = f"; did you mean: {', '.join(close)}?" if close else ""
    raise ConfigError(
        f"{name_or_path!r} is neither a builtin ({', '.join(sorted(builtins))}) "
        f"nor an existing config file{hint}"
    )


def _override(config: ExperimentConfig, seed, replicas, horizon) -> ExperimentConfig:
    doc = config.to_dict()
    if seed is not None:
        doc["seed"] = seed
    if replicas is not None:
        doc["replicas"] = replicas
    if horizon is not None:
        doc["horizon"] = horizon
    return ExperimentConfig.from_dict(doc, name=config.name)


@main.command("list-builtins")
def list_builtins():
    """Print the names of the built-in experiment configurations."""
    for name in sorted(builtin_configs()):
        click.echo(name)


@main.command("run")
@click.argument("config")
@click.option("--seed", type=int, default=None, help="Base RNG seed override.")
@click.option("--replicas", type=int, default=None, help="Replica count override.")
@click.option("--horizon", type=int, default=None, help="Horizon override.")
@click.option("--out", type=click.Path(), default="results", show_default=True,
              help="Output directory.")
def run_cmd(config, seed, replicas, horizon, out):
    """Run a builtin or JSON-file experiment CONFIG."""
    try:
        cfg = _override(_resolve_config(config), seed, replicas, horizon)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    result = run_experiment(cfg, out)
    click.echo(f"wrote {result.out_dir} "
               f"({cfg.replicas} replicas x {len(cfg.links)} link(s), "
               f"T = {cfg.horizon})")


def _load_result_dir(result_dir: Path):
    cfg_path = result_dir / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"{result_dir} has no config.json (not a result directory?)")
    config = ExperimentConfig.from_file(cfg_path)
    records = {}
    for link in config.links:
        link_dir = result_dir / link
        reps = sorted(link_dir.glob("rep*.csv"))
        if not reps:
            raise ConfigError(f"no replica CSVs under {link_dir}")
        records[link] = [TrajectoryRecord.from_csv(p) for p in reps]
    return config, records


@main.command("verify")
@click.argument("result_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--lemma", "lemmas", multiple=True,
              type=click.Choice(_LEMMAS), help="Restrict to specific checks.")
@click.option("--inner-samples", type=int, default=10_000, show_default=True,
              help="Inner Monte Carlo samples for the error-term check.")
@click.option("--k-prime", type=int, default=500, show_default=True,
              help="Envelope start index for the convergence check.")
def verify_cmd(result_dir, lemmas, inner_samples, k_prime):
    """Run the numerical bound checks against a result directory."""
    result_dir = Path(result_dir)
    lemmas = tuple(lemmas) or _LEMMAS
    try:
        config, records = _load_result_dir(result_dir)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)

    model = config.build_plant()
    cert = compute_lyapunov_certificate(model, Q=config.plant_q())
    utility = config.build_utility()
    link = LinkFunction(kind=config.links[0])
    reps = records[config.links[0]]
    reports = []

    quadratic = isinstance(utility, QuadraticTracking)
    if quadratic:
        reduced = ReducedUtility(utility, model)
        u_box = box_from_points(np.vstack([r.u for r in reps]))
        x_box = box_from_points(np.vstack([r.x for r in reps]))
        L_x = lipschitz_constant_x(utility, x_box)
        constants = compute_bound_constants(reduced, link, cert, config.eta,
                                            config.delta, u_box, L_x)

    rng = np.random.default_rng(config.seed)
    for lemma in lemmas:
        if lemma == "1":
            rep = verify_lemma1(reps, cert, config.eta, config.delta)
        elif lemma == "5":
            b = 0.5 * 0.95 ** np.arange(50)
            rep = check_sequence_lemma(0.9, b, 0.5, 2.0, trials=200, rng=rng)
        elif not quadratic:
            click.echo(f"lemma {lemma}: skipped (needs an analytic gradient)")
            continue
        elif lemma == "2":
            rep = verify_lemma2(reduced, link, u_box, samples=10_000, rng=rng)
        elif lemma == "3":
            u_star = reduced.minimizer()
            cands = u_star + rng.uniform(-3.0, 3.0, size=(5, model.n_u))
            rep = verify_lemma3(reduced, link, cands)
        elif lemma == "4":
            rep = verify_lemma4(reps[0], reduced, link, constants,
                                n_inner=inner_samples, rng=rng,
                                steps=list(range(1, len(reps[0]),
                                                 max(1, len(reps[0]) // 100))))
        else:  # theorem1
            rep = verify_theorem1(reps, constants, k_prime=min(k_prime,
                                                               len(reps[0]) - 1))
        reports.append(rep)
        out_path = result_dir / f"verification_{rep.lemma}.json"
        with open(out_path, "w") as fh:
            fh.write(rep.to_json() + "\n")
        click.echo(f"{rep.lemma}: {rep.status.upper()}  -> {out_path}")

    if any(r.failed for r in reports):
        sys.exit(1)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(host, port):
    """Start the human-in-the-loop session service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
