"""
Tests for scenario generation, change point matching and accuracy scores.
Run with: pytest test_evaluation.py -v
"""
import json

import numpy as np
import pytest

from errors import ConfigError, FormatError
from evaluation import (
    EVALUATION_DETECTOR,
    Category,
    EvalReport,
    EvalRow,
    GroundTruth,
    ScenarioSpec,
    builtin_scenarios,
    generate,
    load_scenarios,
    match_true_positives,
    precision_recall_f1,
    predict,
    rand_index,
    run_evaluation,
    run_length_sweep,
    scale_scenario,
    select_scenarios,
    sweep_to_text,
)


def max_matching(predicted, truth, margin):
    """Largest number of disjoint (predicted, truth) pairs within the margin, by exhaustive search."""
    def best(i, used):
        if i == len(predicted):
            return 0
        result = best(i + 1, used)
        for j, t in enumerate(truth):
            if j not in used and abs(predicted[i] - t) <= margin:
                result = max(result, 1 + best(i + 1, used | {j}))
        return result
    return best(0, frozenset())


@pytest.fixture(name="step_scenario")
def step_scenario_fixture():
    return ScenarioSpec(
        name="step",
        groups=[{"length": 60, "mean": 50, "stddev": 0}, {"length": 60, "mean": 60, "stddev": 0}],
        variants=3,
        base_seed=5,
    )


@pytest.fixture(name="builtin_report", scope="module")
def builtin_report_fixture():
    return run_evaluation(builtin_scenarios(), ["hunter", "pelt", "dynp"], [1, 4, 10, 15])


# === SCENARIOS === #

def test_nine_builtin_scenarios():
    """Test the presets cover 1, 2 and 4 change points for each kind of shift."""
    scenarios = builtin_scenarios()
    assert len(scenarios) == 9
    assert [s.change_count for s in scenarios] == [1, 1, 1, 2, 2, 2, 4, 4, 4]
    assert [s.category for s in scenarios] == [
        Category.MEAN_SHIFT, Category.VARIANCE_SHIFT, Category.MEAN_AND_VARIANCE,
    ] * 3
    assert all(s.variants == 5 for s in scenarios)
    assert len({s.base_seed for s in scenarios}) == 9


def test_select_scenarios():
    """Test selection by name, the 'all' shortcut and unknown names."""
    assert len(select_scenarios(None)) == 9
    assert len(select_scenarios(["all"])) == 9
    assert [s.name for s in select_scenarios(["scenario7", "scenario2"])] == ["scenario7", "scenario2"]
    with pytest.raises(ConfigError):
        select_scenarios(["scenario10"])


def test_load_scenarios_rejects_bad_files(tmp_path):
    """Test a file without a scenario list and an invalid group."""
    path = tmp_path / "scenarios.yaml"
    path.write_text("version: 1\n")
    with pytest.raises(FormatError):
        load_scenarios(path)

    path.write_text("scenarios:\n  - name: bad\n    groups:\n      - {length: 1, mean: 0, stddev: 1}\n")
    with pytest.raises(ConfigError):
        load_scenarios(path)


def test_generate_single_group_has_no_truth():
    """Test one group means no boundary."""
    spec = ScenarioSpec(name="flat", groups=[{"length": 40, "mean": 10, "stddev": 1}], base_seed=3)
    series, truth = generate(spec, 0)
    assert truth.indices == []
    assert 36 <= len(series) <= 44


def test_generate_two_groups():
    """Test the boundary sits at the perturbed length of the first group."""
    spec = ScenarioSpec(
        name="pair",
        groups=[{"length": 50, "mean": 0, "stddev": 1}, {"length": 50, "mean": 5, "stddev": 1}],
    )
    series, truth = generate(spec, 0)
    assert 90 <= len(series) <= 110
    assert len(truth.indices) == 1
    assert 45 <= truth.indices[0] <= 55
    assert series.timestamps.tolist() == list(range(len(series)))
    assert series.test_name == "pair/0"
    assert series.metric_names == ["p99"]


def test_generate_is_deterministic():
    """Test the same scenario and variant give the same series."""
    spec = builtin_scenarios()[6]
    first, truth = generate(spec, 2)
    second, again = generate(spec, 2)
    assert first == second
    assert truth == again
    assert first.metrics["p99"].tobytes() == second.metrics["p99"].tobytes()
    assert generate(spec, 3)[0] != first


def test_generate_rejects_unknown_variant():
    """Test variants outside the scenario are a config error."""
    spec = builtin_scenarios()[0]
    with pytest.raises(ConfigError):
        generate(spec, 5)
    with pytest.raises(ConfigError):
        generate(spec, -1)


def test_ground_truth_must_increase():
    """Test unordered or non-interior indices are rejected."""
    with pytest.raises(ValueError):
        GroundTruth(indices=[10, 5])
    with pytest.raises(ValueError):
        GroundTruth(indices=[0, 5])


# === SCORES === #

def test_match_identical_lists():
    """Test predictions equal to the truth all match, even at margin 0."""
    assert match_true_positives([10, 20, 30], [10, 20, 30], 0) == [(10, 10), (20, 20), (30, 30)]


def test_match_visited_rule():
    """Test a truth point can be matched only once."""
    assert len(match_true_positives([48, 52], [50], 10)) == 1


def test_match_outside_margin():
    """Test a prediction farther than the margin does not match."""
    assert match_true_positives([100], [150], 10) == []


def test_match_ties_go_to_earlier_truth():
    """Test a prediction halfway between two truth points takes the earlier one."""
    assert match_true_positives([15], [10, 20], 5) == [(15, 10)]


@pytest.mark.parametrize("predicted,truth,expected", [
    ([100], [100], {"precision": 1.0, "recall": 1.0, "f1": 1.0}),
    ([105], [100, 200], {"precision": 1.0, "recall": 0.5, "f1": 2 / 3}),
    ([], [], {"precision": 1.0, "recall": 1.0, "f1": 1.0}),
    ([], [50], {"precision": 0.0, "recall": 0.0, "f1": 0.0}),
    ([50], [], {"precision": 0.0, "recall": 1.0, "f1": 0.0}),
])
def test_precision_recall_f1(predicted, truth, expected):
    """Test the hand-derived scores and the empty-list conventions."""
    scores = precision_recall_f1(predicted, truth, 10)
    assert scores == pytest.approx(expected)


@pytest.mark.parametrize("predicted,truth,expected", [
    ([10, 20], [10, 20], 1.0),
    ([105], [100, 200], 0.5),
    ([], [50], 0.0),
    ([], [], 1.0),
])
def test_rand_index(predicted, truth, expected):
    """Test the Rand index with true negatives counted as zero."""
    assert rand_index(predicted, truth, 10) == pytest.approx(expected)


def test_score_properties_on_random_lists():
    """Test bounds, margin monotonicity and the f1 == 1 condition."""
    rng = np.random.default_rng(21)
    for _ in range(300):
        predicted = sorted(rng.choice(100, size=int(rng.integers(0, 6)), replace=False).tolist())
        truth = sorted(rng.choice(np.arange(1, 100), size=int(rng.integers(0, 6)), replace=False).tolist())
        tp = len(match_true_positives(predicted, truth, 10))
        assert tp <= min(len(predicted), len(truth))

        f1s = [precision_recall_f1(predicted, truth, m)["f1"] for m in (0, 1, 4, 10, 15, 50)]
        rands = [rand_index(predicted, truth, m) for m in (0, 1, 4, 10, 15, 50)]
        assert f1s == sorted(f1s)
        assert rands == sorted(rands)
        assert all(0 <= v <= 1 for v in f1s + rands)

        is_perfect = len(predicted) == len(truth) == tp
        assert (precision_recall_f1(predicted, truth, 10)["f1"] == pytest.approx(1.0)) == is_perfect


def test_greedy_matching_against_maximum_matching():
    """Test greedy matching never beats the optimum and never drops below half of it."""
    rng = np.random.default_rng(33)
    for _ in range(500):
        predicted = sorted(rng.choice(40, size=int(rng.integers(0, 7)), replace=False).tolist())
        truth = sorted(rng.choice(40, size=int(rng.integers(0, 7)), replace=False).tolist())
        margin = int(rng.integers(0, 8))
        greedy = len(match_true_positives(predicted, truth, margin))
        best = max_matching(predicted, truth, margin)
        assert best / 2 <= greedy <= best


def test_greedy_matching_known_divergence():
    """Test the case where nearest-first matching loses a pair."""
    # 10 takes 12 as nearest; 14 is then left without a partner
    assert len(match_true_positives([10, 14], [5, 12], 5)) == 1
    assert max_matching([10, 14], [5, 12], 5) == 2


# === HARNESS === #

def test_empty_evaluation():
    """Test no scenarios give an empty report."""
    report = run_evaluation([], ["hunter"], [10])
    assert report.rows == []
    assert report.to_text() == "no evaluation results\n"


def test_noiseless_step_is_solved_by_every_algorithm(step_scenario):
    """Test a clean step gives f1 == 1 for every algorithm at margin 10."""
    report = run_evaluation([step_scenario], ["hunter", "hunter-strict", "pelt", "dynp"], [10])
    assert [r.algorithm for r in report.rows] == ["hunter", "hunter-strict", "pelt", "dynp"]
    assert all(r.f1 == pytest.approx(1.0) for r in report.rows)
    assert all(r.rand == pytest.approx(1.0) for r in report.rows)


def test_unknown_algorithm_or_margin():
    """Test invalid harness arguments raise ConfigError."""
    with pytest.raises(ConfigError):
        run_evaluation(builtin_scenarios()[:1], ["binseg"], [10])
    with pytest.raises(ConfigError):
        run_evaluation(builtin_scenarios()[:1], ["pelt"], [-1])


def test_workers_do_not_change_the_report():
    """Test parallel cells produce the same rows in the same order."""
    scenarios = select_scenarios(["scenario1", "scenario4"])
    sequential = run_evaluation(scenarios, ["hunter", "pelt", "dynp"], [4, 10])
    parallel = run_evaluation(scenarios, ["hunter", "pelt", "dynp"], [4, 10], workers=4)
    assert parallel == sequential


def test_builtin_report_shape(builtin_report):
    """Test one row per scenario, algorithm and margin."""
    assert len(builtin_report.rows) == 9 * 3 * 4
    assert builtin_report.scenarios() == [f"scenario{i}" for i in range(1, 10)]
    assert builtin_report.columns()[:4] == [("hunter", 1), ("hunter", 4), ("hunter", 10), ("hunter", 15)]


def test_margin_monotonicity(builtin_report):
    """Test every algorithm scores at least as well with a wider margin."""
    for algorithm in ("hunter", "pelt", "dynp"):
        means = [builtin_report.mean_f1(algorithm, m) for m in (1, 4, 10, 15)]
        assert means == sorted(means), f"{algorithm}: {means}"
        for scenario in builtin_report.scenarios():
            cells = [builtin_report.cell(scenario, algorithm, m).f1 for m in (1, 4, 10, 15)]
            assert cells == sorted(cells)


def test_detector_finds_every_large_mean_shift():
    """Test every variant of the 5 sigma mean shift scenario is fully recalled."""
    spec = select_scenarios(["scenario4"])[0]
    for variant in range(spec.variants):
        series, truth = generate(spec, variant)
        predicted = predict("hunter", series, truth)
        assert precision_recall_f1(predicted, truth.indices, 10)["recall"] == 1.0, variant


def test_detector_matches_or_beats_both_baselines(builtin_report):
    """Test the detector scores at least as well as PELT and DYNP at margin 10 in 7 of 9 scenarios."""
    ahead = []
    for scenario in builtin_report.scenarios():
        best_baseline = max(builtin_report.cell(scenario, a, 10).f1 for a in ("pelt", "dynp"))
        if builtin_report.cell(scenario, "hunter", 10).f1 >= best_baseline - 1e-9:
            ahead.append(scenario)
    assert len(ahead) >= 7, builtin_report.to_text()


def test_evaluation_keeps_variance_only_changes():
    """Test scoring runs the detector without the magnitude filter."""
    spec = select_scenarios(["scenario2"])[0]
    series, truth = generate(spec, 0)
    assert predict("hunter", series, truth) == predict("hunter", series, truth, EVALUATION_DETECTOR)
    assert EVALUATION_DETECTOR.min_magnitude == 0


def test_report_tables():
    """Test the text pivot and CSV rows of a small report."""
    report = EvalReport(rows=[
        EvalRow(scenario="s1", algorithm="hunter", margin=10, f1=1.0, rand=1.0),
        EvalRow(scenario="s1", algorithm="pelt", margin=10, f1=0.5, rand=1 / 3),
    ])
    text = report.to_text()
    assert text.startswith("F1\nscenario  hunter M=10  pelt M=10\n")
    assert "s1        1.000000     0.500000" in text
    assert "Rand index" in text
    assert "0.333333" in text
    assert report.to_csv() == (
        "scenario,algorithm,margin,f1,rand\n"
        "s1,hunter,10,1.000000,1.000000\n"
        "s1,pelt,10,0.500000,0.333333\n"
    )
    assert json.loads(report.to_json())[1]["algorithm"] == "pelt"
    assert report.mean_f1("pelt", 10) == 0.5
    assert report.mean_f1("dynp", 10) == 0.0


# === LENGTH SWEEP === #

def test_scale_scenario(step_scenario):
    """Test group lengths scale and never drop below two points."""
    assert [g.length for g in scale_scenario(step_scenario, 0.5).groups] == [30, 30]
    assert [g.length for g in scale_scenario(step_scenario, 0.01).groups] == [2, 2]
    assert scale_scenario(step_scenario, 2).name == "stepx2"
    with pytest.raises(ConfigError):
        scale_scenario(step_scenario, 0)


def test_length_sweep(step_scenario):
    """Test the sweep reports one row per scale and algorithm."""
    rows = run_length_sweep(step_scenario, [0.5, 1], ["hunter", "dynp"])
    assert [(r.scale, r.algorithm) for r in rows] == [(0.5, "hunter"), (0.5, "dynp"), (1.0, "hunter"), (1.0, "dynp")]
    assert [r.points for r in rows] == [60, 60, 120, 120]
    assert all(r.f1 == pytest.approx(1.0) for r in rows)
    assert sweep_to_text(rows).splitlines()[0].split() == ["scale", "points", "algorithm", "f1"]
    assert sweep_to_text([]) == "no sweep results\n"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
