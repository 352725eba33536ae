"""
End-to-end tests of the command line.
Run with: pytest test_integration.py -v
"""
import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

import main
from detector import detect
from evaluation import generate, select_scenarios
from ingest import parse_csv, write_csv
from models import ChangePoint, TimeSeries
from validation import DetectorConfig

DAY = 86400


@pytest.fixture(name="runner")
def runner_fixture(monkeypatch):
    monkeypatch.delenv("WEBHOOK_URL", raising=False)
    monkeypatch.delenv("GRAPHITE_URL", raising=False)
    return CliRunner()


@pytest.fixture(name="constant_csv")
def constant_csv_fixture(tmp_path) -> Path:
    path = tmp_path / "constant.csv"
    write_csv(TimeSeries(test_name="constant", timestamps=np.arange(30), metrics={"p99": [5.0] * 30}), path)
    return path


@pytest.fixture(name="regression_csv")
def regression_csv_fixture(tmp_path) -> Path:
    """Daily p99 latency that jumps from 100 to 150 four days before the end."""
    rng = np.random.default_rng(17)
    values = np.concatenate([rng.normal(100, 2, 36), rng.normal(150, 2, 4)])
    path = tmp_path / "latency.csv"
    write_csv(TimeSeries(test_name="latency", timestamps=np.arange(40) * DAY, metrics={"p99": values}), path)
    return path


@pytest.fixture(name="scenario_csv")
def scenario_csv_fixture(tmp_path) -> Path:
    series, _ = generate(select_scenarios(["scenario4"])[0], 0)
    path = tmp_path / "scenario4.csv"
    write_csv(series, path)
    return path


@pytest.fixture(name="config_file")
def config_file_fixture(tmp_path, regression_csv: Path) -> Path:
    path = tmp_path / "shiftwatch.yaml"
    path.write_text(
        "templates:\n"
        "  latency:\n"
        "    metrics:\n"
        "      p99: {scale: 1.0e-3, direction: -1}\n"
        "tests:\n"
        "  nightly:\n"
        "    inherit: [latency]\n"
        f"    file: {regression_csv.name}\n"
        "  other:\n"
        "    prefix: perf.other\n"
        "    metrics: [throughput]\n"
    )
    return path


# === ANALYSE === #

def test_analyse_constant_series(runner: CliRunner, constant_csv: Path):
    """Test a constant series reports nothing and exits 0."""
    result = runner.invoke(main.app, ["analyse", str(constant_csv)])
    assert result.exit_code == 0
    assert result.stdout == "no change points\n"


def test_analyse_missing_file(runner: CliRunner, tmp_path: Path):
    """Test a missing CSV is an error with a message."""
    result = runner.invoke(main.app, ["analyse", str(tmp_path / "nonexistent.csv")])
    assert result.exit_code == 1
    assert "error:" in result.output


def test_analyse_json_matches_library(runner: CliRunner, scenario_csv: Path):
    """Test the JSON report holds the change points of a library call."""
    result = runner.invoke(main.app, ["analyse", str(scenario_csv), "--output", "json"])
    assert result.exit_code == 0
    reported = [ChangePoint(**p) for p in json.loads(result.stdout)["change_points"]]
    expected = detect(parse_csv(scenario_csv), DetectorConfig())["p99"]
    assert reported
    assert reported == expected


def test_analyse_detector_flags(runner: CliRunner, scenario_csv: Path):
    """Test detector settings reach the detector."""
    args = ["analyse", str(scenario_csv), "--output", "json", "--window-len", "80", "--max-pvalue", "0.01"]
    result = runner.invoke(main.app, args)
    assert result.exit_code == 0
    cfg = DetectorConfig(window_len=80, max_pvalue=0.01)
    expected = [cp.index for cp in detect(parse_csv(scenario_csv), cfg)["p99"]]
    assert [p["index"] for p in json.loads(result.stdout)["change_points"]] == expected


def test_analyse_invalid_settings(runner: CliRunner, scenario_csv: Path):
    """Test an invalid window is a config error and a bad --since a usage error."""
    assert runner.invoke(main.app, ["analyse", str(scenario_csv), "--window-len", "3"]).exit_code == 1
    assert runner.invoke(main.app, ["analyse", str(scenario_csv), "--since", "last week"]).exit_code == 2
    assert runner.invoke(main.app, ["analyse", str(scenario_csv), "--direction", "p99"]).exit_code == 2


def test_fail_on_regression(runner: CliRunner, regression_csv: Path):
    """Test a latency increase fails the run only with --fail-on-regression."""
    args = ["analyse", str(regression_csv), "--direction", "p99=-1"]
    assert runner.invoke(main.app, args).exit_code == 0
    result = runner.invoke(main.app, [*args, "--fail-on-regression"])
    assert result.exit_code == main.REGRESSION_EXIT_CODE
    assert "regression" in result.output


def test_no_regression_when_latency_drops(runner: CliRunner, regression_csv: Path):
    """Test a higher-is-better reading of the same data passes the gate."""
    args = ["analyse", str(regression_csv), "--direction", "p99=1", "--fail-on-regression"]
    assert runner.invoke(main.app, args).exit_code == 0


def test_since_trims_old_data(runner: CliRunner, regression_csv: Path):
    """Test --since removes the points before the date."""
    after_jump = "1970-02-06"  # day 36, the first day at the new level
    result = runner.invoke(main.app, ["analyse", str(regression_csv), "--since", after_jump])
    assert result.exit_code == 0
    assert result.stdout == "no change points\n"


def test_dry_run_prints_payload(runner: CliRunner, regression_csv: Path):
    """Test --dry-run prints only the webhook document."""
    result = runner.invoke(main.app, ["analyse", str(regression_csv), "--direction", "p99=-1", "--dry-run"])
    assert result.exit_code == 0
    payload = json.loads(result.stdout)
    assert payload["test"] == "latency"
    assert payload["generated_at"] == "1970-02-09T00:00:00+00:00"
    assert [c["effect"] for c in payload["changes"]] == ["regression"]


def test_dry_run_with_json_output_is_one_document(runner: CliRunner, regression_csv: Path):
    """Test --output json --dry-run leaves a single parseable document on stdout."""
    result = runner.invoke(
        main.app, ["analyse", str(regression_csv), "--direction", "p99=-1", "--output", "json", "--dry-run"],
    )
    assert result.exit_code == 0
    assert "changes" in json.loads(result.stdout)


def test_configured_test(runner: CliRunner, config_file: Path):
    """Test a named csv test uses the metric definitions of its template."""
    result = runner.invoke(main.app, ["analyse", "nightly", "--config", str(config_file), "--fail-on-regression"])
    assert result.exit_code == main.REGRESSION_EXIT_CODE
    # scale 1e-3 shows 100 as 0.1
    assert "0.1" in result.stdout


def test_notify_posts_payload(runner: CliRunner, config_file: Path, monkeypatch):
    """Test --notify posts one payload to the webhook url."""
    posted = []
    monkeypatch.setattr(main, "post_webhook", lambda url, payload: posted.append((url, payload)) or True)
    monkeypatch.setenv("WEBHOOK_URL", "http://hooks.local/perf")
    result = runner.invoke(main.app, ["analyse", "nightly", "--config", str(config_file), "--notify"])
    assert result.exit_code == 0
    assert len(posted) == 1
    assert posted[0][0] == "http://hooks.local/perf"
    assert posted[0][1]["test"] == "nightly"
    assert len(posted[0][1]["changes"]) == 1


def test_notify_without_url_is_skipped(runner: CliRunner, config_file: Path, monkeypatch):
    """Test a missing webhook url does not fail the analysis."""
    posted = []
    monkeypatch.setattr(main, "post_webhook", lambda url, payload: posted.append(url) or True)
    result = runner.invoke(main.app, ["analyse", "nightly", "--config", str(config_file), "--notify"])
    assert result.exit_code == 0
    assert posted == []


def test_unknown_test(runner: CliRunner, config_file: Path):
    """Test an unknown test name exits 1."""
    result = runner.invoke(main.app, ["analyse", "missing", "--config", str(config_file)])
    assert result.exit_code == 1
    assert "unknown test" in result.output


# === EVALUATE === #

def test_evaluate_single_column(runner: CliRunner):
    """Test one algorithm at one margin gives one score column."""
    result = runner.invoke(main.app, ["evaluate", "--scenarios", "scenario1", "--algorithms", "hunter", "--margins", "10"])
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "F1"
    assert lines[1].split() == ["scenario", "hunter", "M=10"]
    assert lines[2].split()[0] == "scenario1"


def test_evaluate_csv_output(runner: CliRunner):
    """Test machine-readable rows."""
    args = ["evaluate", "--scenarios", "scenario1,scenario2", "--algorithms", "pelt,dynp", "--margins", "4,10",
            "--output", "csv"]
    result = runner.invoke(main.app, args)
    assert result.exit_code == 0
    rows = result.stdout.splitlines()
    assert rows[0] == "scenario,algorithm,margin,f1,rand"
    assert len(rows) == 1 + 2 * 2 * 2


def test_evaluate_seed_is_deterministic(runner: CliRunner):
    """Test a fixed seed gives the same report twice and differs from another seed."""
    args = ["evaluate", "--scenarios", "scenario4", "--algorithms", "hunter,pelt", "--margins", "4", "--output", "json"]
    first = runner.invoke(main.app, [*args, "--seed", "7"])
    second = runner.invoke(main.app, [*args, "--seed", "7"])
    assert first.exit_code == 0
    assert first.stdout == second.stdout


@pytest.mark.parametrize("args", [
    ["--algorithms", "binseg"],
    ["--scenarios", "scenario42"],
    ["--margins", "ten"],
])
def test_evaluate_rejects_unknown_names(runner: CliRunner, args):
    """Test unknown algorithms, scenarios and bad margins exit 1."""
    result = runner.invoke(main.app, ["evaluate", *args])
    assert result.exit_code == 1
    assert "error:" in result.output


def test_evaluate_length_sweep(runner: CliRunner):
    """Test the sweep prints one table per scenario."""
    args = ["evaluate", "--scenarios", "scenario1", "--algorithms", "dynp", "--margins", "10",
            "--length-scales", "0.5,1"]
    result = runner.invoke(main.app, args)
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "scenario1"
    assert lines[1].split() == ["scale", "points", "algorithm", "f1"]
    assert [line.split()[:3] for line in lines[2:]] == [["0.5", "60", "dynp"], ["1", "120", "dynp"]]


# === FIXTURES AND CONFIG === #

def test_generate_writes_csv(runner: CliRunner, tmp_path: Path):
    """Test a generated scenario can be analysed from its CSV."""
    out = tmp_path / "s7.csv"
    result = runner.invoke(main.app, ["generate", "scenario7", "--variant", "1", "--out", str(out)])
    assert result.exit_code == 0
    info = json.loads(result.stdout)
    series, truth = generate(select_scenarios(["scenario7"])[0], 1)
    assert info == {"path": str(out), "points": len(series), "change_points": truth.indices}
    assert np.array_equal(parse_csv(out).metrics["p99"], series.metrics["p99"])


def test_generate_unknown_variant(runner: CliRunner, tmp_path: Path):
    """Test a variant outside the scenario exits 1."""
    result = runner.invoke(main.app, ["generate", "scenario1", "--variant", "9", "--out", str(tmp_path / "x.csv")])
    assert result.exit_code == 1


def test_list_tests_and_metrics(runner: CliRunner, config_file: Path):
    """Test the configured tests and their resolved metrics are listed."""
    tests = runner.invoke(main.app, ["list-tests", "--config", str(config_file)])
    assert tests.exit_code == 0
    assert tests.stdout.splitlines() == ["nightly", "other"]

    metrics = runner.invoke(main.app, ["list-metrics", "nightly", "--config", str(config_file)])
    assert metrics.exit_code == 0
    assert metrics.stdout.splitlines() == ["p99  scale=0.001  direction=-1"]


def test_config_from_environment(runner: CliRunner, config_file: Path, monkeypatch):
    """Test SHIFTWATCH_CONFIG is used when --config is missing."""
    monkeypatch.setenv("SHIFTWATCH_CONFIG", str(config_file))
    result = runner.invoke(main.app, ["list-tests"])
    assert result.exit_code == 0
    assert "nightly" in result.stdout


def test_missing_config(runner: CliRunner, tmp_path: Path):
    """Test a missing config file exits 1."""
    result = runner.invoke(main.app, ["list-tests", "--config", str(tmp_path / "none.yaml")])
    assert result.exit_code == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
