"""``retention-lab`` command line: synth, train, evaluate, explain.

Exit codes: 0 success, 2 configuration or validation error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np
from click.core import ParameterSource

from retention_lab import shap as treeshap
from retention_lab.binning import bin_features, bin_like
from retention_lab.config import EXPLAIN_SPLITS, RunConfig, build_run_config, load_config_file
from retention_lab.errors import ConfigError, DataError, InvariantError, RetentionLabError
from retention_lab.gbdt import Ensemble, cohort_digest, split_indices, train
from retention_lab.metrics import evaluate
from retention_lab.plots import scatter_svg
from retention_lab.records import (
    FEATURES,
    atomic_write_text,
    load_cohort_csv,
    synth_cohort,
    to_arrays,
    write_cohort_csv,
)

LOCAL_ACCURACY_TOL = 1e-6


def _fail(exc: RetentionLabError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RetentionLabError as exc:
            _fail(exc)
        except OSError as exc:
            _fail(ConfigError(f"{exc.filename or ''}: {exc.strerror or exc}"))

    return wrapper


def resolve_config(ctx: click.Context, mapping: dict[str, str]) -> RunConfig:
    """Config file values first, then any flag given explicitly on the command line.

    ``mapping`` maps click parameter names to config keys.
    """
    values: dict[str, object] = {}
    if ctx.params.get("config"):
        values.update(load_config_file(ctx.params["config"]))
    for param, key in mapping.items():
        value = ctx.params.get(param)
        source = ctx.get_parameter_source(param)
        if source is ParameterSource.COMMANDLINE or (key not in values and value is not None):
            values[key] = value
    return build_run_config(values)


config_option = click.option(
    "--config", type=click.Path(dir_okay=False), default=None,
    help="Flat 'key = value' file; command-line flags override it.",
)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Dropout-risk modeling with boosted trees and exact SHAP explanations."""


# ---------------------------------------------------------------------- synth


@main.command()
@click.option("--n", "n_students", type=int, default=None, help="Number of students.")
@click.option("--seed", type=int, default=None, help="Generator seed.")
@click.option("--base-rate", type=float, default=None, help="Target dropout rate.")
@click.option("--noise-scale", type=float, default=None, help="Label noise scale.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output CSV.")
@config_option
@click.pass_context
@handle_errors
def synth(ctx, n_students, seed, base_rate, noise_scale, out, config):
    """Generate a synthetic cohort CSV."""
    cfg = resolve_config(ctx, {
        "n_students": "n_students", "seed": "synth_seed",
        "base_rate": "dropout_base_rate", "noise_scale": "noise_scale", "out": "cohort",
    })
    if cfg.cohort is None:
        raise ConfigError("--out is required")
    vectors = synth_cohort(cfg.synth)
    write_cohort_csv(cfg.cohort, vectors)
    rate = sum(v.label for v in vectors) / len(vectors)
    click.echo(f"wrote {len(vectors)} rows to {cfg.cohort}; dropout rate {rate:.4f}")


# ---------------------------------------------------------------------- train

_TRAIN_FLAGS = {
    "cohort": "cohort", "out_dir": "out_dir", "model": "model",
    "iterations": "num_iterations", "learning_rate": "learning_rate",
    "max_bin": "max_bin", "num_leaves": "num_leaves", "min_data": "min_data",
    "lambda_l2": "lambda_l2", "split_ratio": "split_ratio", "seed": "seed",
    "early_stopping_rounds": "early_stopping_rounds", "stratify": "stratify",
    "boost_from_average": "boost_from_average",
}


def _load(path: Path | None):
    if path is None:
        raise ConfigError("--cohort is required")
    vectors, _ = load_cohort_csv(path)
    if not vectors:
        raise DataError(f"{path}: cohort is empty")
    return to_arrays(vectors)


def _split(X, y, train_cfg):
    labels = y if train_cfg.stratify else None
    return split_indices(len(y), train_cfg.split_ratio, train_cfg.seed, labels)


def _model_path(cfg: RunConfig) -> Path:
    return Path(cfg.model) if cfg.model else Path(cfg.out_dir) / "model.json"


@main.command("train")
@click.option("--cohort", type=click.Path(dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--model", type=click.Path(dir_okay=False), default=None,
              help="Model file path (default <out-dir>/model.json).")
@click.option("--iterations", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--max-bin", type=int, default=None)
@click.option("--num-leaves", type=int, default=None)
@click.option("--min-data", type=int, default=None)
@click.option("--lambda-l2", type=float, default=None)
@click.option("--split-ratio", type=float, default=None)
@click.option("--seed", type=int, default=None, help="Train/test split seed.")
@click.option("--early-stopping-rounds", type=int, default=None)
@click.option("--stratify/--no-stratify", default=None)
@click.option("--boost-from-average/--no-boost-from-average", default=None)
@config_option
@click.pass_context
@handle_errors
def train_cmd(ctx, **_):
    """Split, bin and boost; write the model JSON and per-iteration history."""
    cfg = resolve_config(ctx, _TRAIN_FLAGS)
    tc = cfg.train
    X, y = _load(cfg.cohort)
    tr, te = _split(X, y, tc)
    d_train = bin_features(X[tr], y[tr], tc.max_bin)
    d_test = bin_like(X[te], y[te], d_train)
    model, history = train(d_train, d_test, tc)
    model.data_info.update(n_rows=int(len(y)), cohort_sha256=cohort_digest(X, y))

    model_path = _model_path(cfg)
    model.save(model_path)
    rows = ["iteration,valid_logloss"]
    rows += [f"{i},{loss!r}" for i, loss in enumerate(history.valid_logloss, start=1)]
    atomic_write_text(Path(cfg.out_dir) / "history.csv", "\n".join(rows) + "\n")
    click.echo(f"trained {len(model.trees)} trees on {len(tr)} rows; model -> {model_path}")
    if history.valid_logloss:
        click.echo(f"valid logloss: first {history.valid_logloss[0]:.6f}, "
                   f"last {history.valid_logloss[-1]:.6f}")


# ------------------------------------------------------------ evaluate/explain


def _load_model_and_split(cfg: RunConfig, seed_flag: int | None):
    model = Ensemble.load(_model_path(cfg))
    X, y = _load(cfg.cohort)
    if tuple(model.schema) != FEATURES:
        raise DataError("model schema differs from the cohort schema")
    recorded = model.data_info.get("cohort_sha256")
    if recorded is not None and recorded != cohort_digest(X, y):
        raise DataError("cohort does not match the one the model was trained on")
    try:
        train_cfg = build_run_config(dict(model.config)).train
    except ConfigError as exc:
        raise DataError(f"model file has an invalid config echo: {exc}") from None
    if seed_flag is not None and seed_flag != train_cfg.seed:
        raise ConfigError(
            f"--seed {seed_flag} differs from the model's split seed {train_cfg.seed}"
        )
    tr, te = _split(X, y, train_cfg)
    return model, X, y, tr, te


@main.command("evaluate")
@click.option("--cohort", type=click.Path(dir_okay=False), default=None)
@click.option("--model", type=click.Path(dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--seed", type=int, default=None, help="Must match the model's split seed.")
@config_option
@click.pass_context
@handle_errors
def evaluate_cmd(ctx, seed, **_):
    """Score the held-out split and write metrics.json."""
    cfg = resolve_config(ctx, {
        "cohort": "cohort", "model": "model", "out_dir": "out_dir", "threshold": "threshold",
    })
    model, X, y, _, te = _load_model_and_split(cfg, seed)
    report = evaluate(y[te], model.predict_proba(X[te]), cfg.threshold)
    atomic_write_text(Path(cfg.out_dir) / "metrics.json", report.to_json())
    click.echo(report.render())


def _parse_pair(text: str, schema) -> tuple[str, str]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"--interactions expects 'A,B', got {text!r}")
    for name in parts:
        if name not in schema:
            raise ConfigError(f"unknown feature {name!r} in --interactions")
    if parts[0] == parts[1]:
        raise ConfigError("--interactions needs two different features")
    return parts[0], parts[1]


@main.command("explain")
@click.option("--cohort", type=click.Path(dir_okay=False), default=None)
@click.option("--model", type=click.Path(dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--split", "explain_split", type=click.Choice(EXPLAIN_SPLITS), default=None,
              help="Rows to explain (default: test).")
@click.option("--interactions", multiple=True, metavar="A,B",
              help="Feature pair for interaction output; repeatable.")
@config_option
@click.pass_context
@handle_errors
def explain_cmd(ctx, interactions, **_):
    """SHAP matrix, importance table, dependence data and SVG scatters."""
    cfg = resolve_config(ctx, {
        "cohort": "cohort", "model": "model", "out_dir": "out_dir",
        "explain_split": "explain_split",
    })
    model, X, y, tr, te = _load_model_and_split(cfg, None)
    schema = list(model.schema)
    pairs = [_parse_pair(text, schema) for text in interactions]
    rows = {"test": te, "train": tr, "all": np.arange(len(y))}[cfg.explain_split]
    Xe = X[rows]

    phi, base = treeshap.shap_values(model, Xe)
    gap = np.max(np.abs(base + phi.sum(axis=1) - model.predict_margin(Xe)), initial=0.0)
    if gap > LOCAL_ACCURACY_TOL:
        raise InvariantError(f"local accuracy violated by {gap:.3g}")

    out = Path(cfg.out_dir)
    atomic_write_text(out / "shap.csv", treeshap.shap_matrix_csv(phi, base, schema))
    table = treeshap.importance_table(phi, schema)
    atomic_write_text(out / "importance.csv", table.to_csv())
    atomic_write_text(out / "importance.txt", table.render())
    for name in schema:
        series = treeshap.dependence_series(name, Xe, phi, schema)
        atomic_write_text(out / "dependence" / f"{name}.csv", series.to_csv())
        svg = scatter_svg(series.points, f"{name}_shap", name)
        atomic_write_text(out / "dependence" / f"{name}.svg", svg)

    if pairs:
        inter, _ = treeshap.shap_interaction_values(model, Xe)
        for a, b in pairs:
            triples = treeshap.interaction_dependence(a, b, Xe, inter, schema)
            stem = out / "interactions" / f"{a}__{b}"
            atomic_write_text(stem.with_suffix(".csv"), treeshap.interaction_csv(triples, a, b))
            svg = scatter_svg([(t[0], t[2]) for t in triples], f"{a} x {b}", a,
                              "SHAP interaction value")
            atomic_write_text(stem.with_suffix(".svg"), svg)

    click.echo(table.render(), nl=False)
    click.echo(f"explained {len(rows)} rows ({cfg.explain_split}); bundle -> {out}")


if __name__ == "__main__":
    main()
