from dotenv import load_dotenv
# Load environment variables from .env file.
load_dotenv()

import json
import logging
import os
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from config import DEFAULT_CONFIG_PATH, AppConfig, apply_env_overrides, load_config
from detector import detect, group_by_index
from errors import ConfigError, FormatError, ShiftwatchError
from evaluation import (
    ALGORITHMS,
    DEFAULT_MARGINS,
    generate,
    run_evaluation,
    run_length_sweep,
    select_scenarios,
    sweep_to_text,
)
from ingest import GRAPHITE_DEFAULT_FROM, load_test_series, parse_csv, write_csv
from models import MetricDef, TimeSeries, slice_series, validate
from notify import post_webhook
from report import payload_json, regressions, render_report, webhook_payload
from validation import OutputFormat, ReportOptions, build_detector_config, build_report_options

logger = logging.getLogger(__name__)
logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO").upper())

REGRESSION_EXIT_CODE = 3

app = typer.Typer(
    help="Change point detection for performance test results.",
    no_args_is_help=True,
    add_completion=False,
)


# === HELPERS === #

def _split(value: Optional[str]) -> list[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip()]


def _config_path(config: Optional[Path]) -> Path:
    return config or Path(os.getenv("SHIFTWATCH_CONFIG", DEFAULT_CONFIG_PATH))


def _load_app_config(config: Optional[Path]) -> AppConfig:
    return apply_env_overrides(load_config(_config_path(config)))


def _parse_since(value: Optional[str]) -> Optional[int]:
    if value is None:
        return None
    try:
        moment = datetime.fromisoformat(value)
    except ValueError:
        raise typer.BadParameter(f"not an ISO-8601 date: {value!r}", param_hint="--since")
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp())


def _parse_directions(values: Optional[list[str]]) -> dict[str, MetricDef]:
    metrics = {}
    for value in values or []:
        name, sep, direction = value.partition("=")
        if not sep or direction.strip() not in ("-1", "0", "1"):
            raise typer.BadParameter(f"expected NAME=-1|0|1, got {value!r}", param_hint="--direction")
        metrics[name.strip()] = MetricDef(name=name.strip(), direction=int(direction))
    return metrics


def _trim(series: TimeSeries, since: Optional[int]) -> TimeSeries:
    if since is None:
        return series
    start = int(np.searchsorted(series.timestamps, since, side="left"))
    return slice_series(series, start, len(series))


def _fail(e: Exception):
    typer.echo(f"error: {e}", err=True)
    raise typer.Exit(code=1)


# === COMMANDS === #

@app.command()
def analyse(
    target: str = typer.Argument(..., help="CSV file or name of a configured test"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config (default $SHIFTWATCH_CONFIG)"),
    window_len: Optional[int] = typer.Option(None, "--window-len"),
    overlap: Optional[int] = typer.Option(None, "--overlap"),
    max_pvalue: Optional[float] = typer.Option(None, "--max-pvalue"),
    min_magnitude: Optional[float] = typer.Option(None, "--min-magnitude"),
    since: Optional[str] = typer.Option(None, "--since", help="Ignore data older than this ISO-8601 date"),
    output: OutputFormat = typer.Option(OutputFormat.TEXT, "--output"),
    fail_on_regression: bool = typer.Option(False, "--fail-on-regression",
                                            help=f"Exit {REGRESSION_EXIT_CODE} when a regression is reported"),
    notify: bool = typer.Option(False, "--notify", help="Send the webhook notification"),
    dry_run: bool = typer.Option(False, "--dry-run", help="Print only the webhook payload instead of the report, send nothing"),
    time_column: str = typer.Option("time", "--time-column", help="CSV time column"),
    delimiter: str = typer.Option(",", "--delimiter", help="CSV delimiter"),
    direction: Optional[list[str]] = typer.Option(None, "--direction", help="NAME=-1|0|1 for CSV metrics"),
    workers: int = typer.Option(1, "--workers", min=1),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """
    Detect change points in one test and print the report.
    1. Load the series (CSV path or configured test)
    2. Trim it to --since
    3. Detect, render, notify
    """
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    since_time = _parse_since(since)
    metrics = _parse_directions(direction)

    try:
        # 1. Load
        app_config = None
        if target.endswith(".csv") or Path(target).is_file():
            series = parse_csv(target, time_column=time_column, delimiter=delimiter)
        else:
            app_config = _load_app_config(config)
            test = app_config.get_test(target)
            graphite_from = str(since_time) if since_time is not None else GRAPHITE_DEFAULT_FROM
            series = load_test_series(test, app_config.graphite, graphite_from)
            metrics = {**test.metrics, **metrics}

        # 2. Trim and check
        series = _trim(series, since_time)
        violations = validate(series)
        if violations:
            raise FormatError("; ".join(v.message for v in violations))

        # 3. Detect
        cfg = build_detector_config(
            window_len=window_len, overlap=overlap, max_pvalue=max_pvalue, min_magnitude=min_magnitude,
        )
        start = time.perf_counter()
        groups = group_by_index(detect(series, cfg, metrics, workers=workers))
        logger.debug(f"Detection took {time.perf_counter() - start:.3f}s")

        # --dry-run prints the webhook document in place of the report
        if not dry_run:
            opts = build_report_options(output_format=output.value)
            typer.echo(render_report(groups, opts, metrics, series), nl=False)

        # 4. Notify (best effort)
        if notify or dry_run:
            webhook = app_config.slack if app_config else None
            webhook_url = os.getenv("WEBHOOK_URL") or (webhook.url if webhook else None)
            webhook_opts = ReportOptions(since_days=webhook.since_days) if webhook else ReportOptions()
            reference = int(series.timestamps[-1]) if len(series) else None
            payload = webhook_payload(groups, webhook_opts, series.test_name, reference, metrics)
            if dry_run:
                typer.echo(payload_json(payload), nl=False)
            elif not webhook_url:
                logger.warning(json.dumps({"event": "webhook_skipped", "reason": "no webhook url"}))
            elif webhook is None or webhook.enabled:
                post_webhook(webhook_url, payload)
    except (ShiftwatchError, OSError) as e:
        _fail(e)

    if fail_on_regression and regressions(groups):
        typer.echo(f"{len(regressions(groups))} regression(s) detected", err=True)
        raise typer.Exit(code=REGRESSION_EXIT_CODE)


@app.command()
def evaluate(
    scenarios: str = typer.Option("all", "--scenarios", help="'all' or comma separated scenario names"),
    algorithms: str = typer.Option("hunter,pelt,dynp", "--algorithms",
                                   help=f"Comma separated subset of {','.join(ALGORITHMS)}"),
    margins: str = typer.Option(",".join(str(m) for m in DEFAULT_MARGINS), "--margins"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Replace the scenario seeds"),
    output: OutputFormat = typer.Option(OutputFormat.TEXT, "--output"),
    length_scales: Optional[str] = typer.Option(None, "--length-scales",
                                                help="Comma separated factors for a series-length sweep"),
    workers: int = typer.Option(1, "--workers", min=1),
):
    """Score the detector and the baselines on the built-in scenarios."""
    try:
        selected = select_scenarios(_split(scenarios))
        if seed is not None:
            selected = [s.model_copy(update={"base_seed": seed + i}) for i, s in enumerate(selected)]
        try:
            margin_values = [int(m) for m in _split(margins)]
            scales = [float(s) for s in _split(length_scales)]
        except ValueError as e:
            raise ConfigError(f"bad number: {e}")
        algorithm_names = _split(algorithms)

        if scales:
            sweep_margin = margin_values[0] if len(margin_values) == 1 else 10
            for spec in selected:
                rows = run_length_sweep(spec, scales, algorithm_names, sweep_margin, workers=workers)
                typer.echo(f"{spec.name}")
                typer.echo(sweep_to_text(rows), nl=False)
            return

        report = run_evaluation(selected, algorithm_names, margin_values, workers=workers)
        if output == OutputFormat.CSV:
            typer.echo(report.to_csv(), nl=False)
        elif output == OutputFormat.JSON:
            typer.echo(report.to_json())
        else:
            typer.echo(report.to_text(), nl=False)
    except (ShiftwatchError, OSError) as e:
        _fail(e)


@app.command("generate")
def generate_fixture(
    scenario: str = typer.Argument(..., help="Built-in scenario name"),
    variant: int = typer.Option(0, "--variant"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="CSV path (default <scenario>_<variant>.csv)"),
):
    """Write one generated scenario series as CSV and print its true change points."""
    try:
        spec = select_scenarios([scenario])[0]
        if seed is not None:
            spec = spec.model_copy(update={"base_seed": seed})
        series, truth = generate(spec, variant)
        path = out or Path(f"{spec.name}_{variant}.csv")
        write_csv(series, path)
        typer.echo(json.dumps({"path": str(path), "points": len(series), "change_points": truth.indices}))
    except (ShiftwatchError, OSError) as e:
        _fail(e)


@app.command("list-tests")
def list_tests(config: Optional[Path] = typer.Option(None, "--config")):
    """Names of the configured tests."""
    try:
        for name in sorted(_load_app_config(config).tests):
            typer.echo(name)
    except (ShiftwatchError, OSError) as e:
        _fail(e)


@app.command("list-metrics")
def list_metrics(test: str = typer.Argument(...), config: Optional[Path] = typer.Option(None, "--config")):
    """Resolved metrics of one test with their scale and direction."""
    try:
        for metric in _load_app_config(config).get_test(test).metrics.values():
            typer.echo(f"{metric.name}  scale={metric.scale:g}  direction={metric.direction:+d}")
    except (ShiftwatchError, OSError) as e:
        _fail(e)


if __name__ == "__main__":
    app()
