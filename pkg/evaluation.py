"""
Accuracy harness: synthetic scenarios with known change points, margin
based matching and the scores used to compare the detector with the
PELT and DYNP baselines.
"""
import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import baselines
from detector import detect
from errors import ConfigError, FormatError
from models import TimeSeries
from validation import DetectorConfig

logger = logging.getLogger(__name__)

MIN_SEGMENT = 2
METRIC = "p99"
ALGORITHMS = ("hunter", "hunter-strict", "pelt", "dynp")
DEFAULT_MARGINS = (1, 4, 10, 15)
SCENARIOS_FILE = Path(__file__).with_name("scenarios.yaml")
# scoring counts variance-only changes, whose means barely move
EVALUATION_DETECTOR = DetectorConfig(min_magnitude=0.0)


class Category(str, Enum):
    MEAN_SHIFT = "mean_shift"
    VARIANCE_SHIFT = "variance_shift"
    MEAN_AND_VARIANCE = "mean_and_variance"


class GroupSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    length: int = Field(..., ge=MIN_SEGMENT)
    mean: float
    stddev: float = Field(..., ge=0)


class ScenarioSpec(BaseModel):
    """
    A family of synthetic series.
    Fields:
        - name: Scenario identifier
        - groups: Consecutive regimes, each with its own length, mean and stddev
        - category: What changes between groups
        - variants: Number of perturbed series generated from the spec
        - base_seed: Seed shared by all variants
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    groups: list[GroupSpec] = Field(..., min_length=1)
    category: Category = Category.MEAN_SHIFT
    variants: int = Field(default=5, ge=1)
    base_seed: int = 0

    @property
    def change_count(self) -> int:
        return len(self.groups) - 1


class GroundTruth(BaseModel):
    model_config = ConfigDict(frozen=True)

    indices: list[int]

    @field_validator("indices")
    @classmethod
    def validate_indices(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])) or any(i <= 0 for i in v):
            raise ValueError("ground truth indices must be positive and strictly increasing")
        return v


def build_scenario(**fields) -> ScenarioSpec:
    try:
        return ScenarioSpec(**fields)
    except ValidationError as e:
        logger.warning(f"Invalid scenario {fields.get('name')!r}: {e}")
        raise ConfigError(f"Invalid scenario {fields.get('name')!r}: {e}") from e


def load_scenarios(path: Path = SCENARIOS_FILE) -> list[ScenarioSpec]:
    """Read scenario presets from a YAML file with a top-level `scenarios` list."""
    with open(path, encoding="utf-8") as f:
        document = yaml.safe_load(f) or {}
    if not isinstance(document, dict) or not isinstance(document.get("scenarios"), list):
        raise FormatError(f"{path}: expected a mapping with a 'scenarios' list")
    return [build_scenario(**entry) for entry in document["scenarios"]]


def builtin_scenarios() -> list[ScenarioSpec]:
    return load_scenarios(SCENARIOS_FILE)


def select_scenarios(names: Optional[list[str]] = None) -> list[ScenarioSpec]:
    """Built-in scenarios by name; None or ['all'] selects all of them."""
    scenarios = builtin_scenarios()
    if not names or names == ["all"]:
        return scenarios
    by_name = {s.name: s for s in scenarios}
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise ConfigError(f"unknown scenarios: {', '.join(unknown)} (known: {', '.join(by_name)})")
    return [by_name[n] for n in names]


def generate(spec: ScenarioSpec, variant: int) -> tuple[TimeSeries, GroundTruth]:
    """
    One series of the scenario. Group means are perturbed by up to 5% and
    lengths by up to 10%, seeded by (base_seed, variant).
    """
    if not 0 <= variant < spec.variants:
        raise ConfigError(f"variant {variant} outside [0, {spec.variants}) for {spec.name}")

    rng = np.random.default_rng([spec.base_seed, variant])
    # 1. Perturb the groups
    lengths, means = [], []
    for group in spec.groups:
        means.append(group.mean * (1 + rng.uniform(-0.05, 0.05)))
        lengths.append(max(MIN_SEGMENT, int(round(group.length * (1 + rng.uniform(-0.1, 0.1))))))

    # 2. Draw the samples
    values = np.concatenate([
        rng.normal(mean, group.stddev, length)
        for group, mean, length in zip(spec.groups, means, lengths)
    ])

    # 3. Boundaries
    truth = GroundTruth(indices=[int(i) for i in np.cumsum(lengths)[:-1]])
    series = TimeSeries(
        test_name=f"{spec.name}/{variant}",
        timestamps=np.arange(len(values)),
        metrics={METRIC: values},
    )
    return series, truth


def match_true_positives(predicted: list[int], truth: list[int], margin: int) -> list[tuple[int, int]]:
    """
    (predicted, truth) pairs within the margin. Predictions are visited in
    ascending order and take the nearest unvisited truth point; a truth
    point is matched at most once.
    """
    visited = set()
    pairs = []
    for x in sorted(predicted):
        close = [(abs(x - t), t) for t in truth if t not in visited and abs(x - t) <= margin]
        if not close:
            continue
        _, nearest = min(close)
        visited.add(nearest)
        pairs.append((x, nearest))
    return pairs


def precision_recall_f1(predicted: list[int], truth: list[int], margin: int) -> dict[str, float]:
    tp = len(match_true_positives(predicted, truth, margin))
    if predicted:
        precision = tp / len(predicted)
    else:
        precision = 1.0 if not truth else 0.0
    recall = tp / len(truth) if truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def rand_index(predicted: list[int], truth: list[int], margin: int) -> float:
    """TP / (TP + FN + FP), true negatives counted as zero."""
    if not predicted and not truth:
        return 1.0
    tp = len(match_true_positives(predicted, truth, margin))
    return tp / (tp + (len(truth) - tp) + (len(predicted) - tp))


class EvalRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario: str
    algorithm: str
    margin: int
    f1: float = Field(..., ge=0, le=1)
    rand: float = Field(..., ge=0, le=1)


class EvalReport(BaseModel):
    """Per-scenario mean scores over the variants of each scenario."""

    rows: list[EvalRow] = Field(default_factory=list)

    def columns(self) -> list[tuple[str, int]]:
        seen = {}
        for row in self.rows:
            seen.setdefault((row.algorithm, row.margin), None)
        return list(seen)

    def scenarios(self) -> list[str]:
        return list(dict.fromkeys(row.scenario for row in self.rows))

    def cell(self, scenario: str, algorithm: str, margin: int) -> Optional[EvalRow]:
        for row in self.rows:
            if (row.scenario, row.algorithm, row.margin) == (scenario, algorithm, margin):
                return row
        return None

    def mean_f1(self, algorithm: str, margin: int) -> float:
        scores = [r.f1 for r in self.rows if r.algorithm == algorithm and r.margin == margin]
        return float(np.mean(scores)) if scores else 0.0

    def _table(self, score: str) -> list[str]:
        columns = self.columns()
        header = ["scenario", *[f"{a} M={m}" for a, m in columns]]
        body = []
        for scenario in self.scenarios():
            cells = [self.cell(scenario, a, m) for a, m in columns]
            body.append([scenario, *["" if c is None else f"{getattr(c, score):.6f}" for c in cells]])
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        return ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header, *body]]

    def to_text(self) -> str:
        if not self.rows:
            return "no evaluation results\n"
        lines = ["F1", *self._table("f1"), "", "Rand index", *self._table("rand")]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["scenario", "algorithm", "margin", "f1", "rand"])
        for row in self.rows:
            writer.writerow([row.scenario, row.algorithm, row.margin, f"{row.f1:.6f}", f"{row.rand:.6f}"])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps([row.model_dump() for row in self.rows], indent=2)


def _check_algorithms(algorithms) -> list[str]:
    algorithms = list(algorithms)
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown:
        raise ConfigError(f"unknown algorithms: {', '.join(unknown)} (known: {', '.join(ALGORITHMS)})")
    return algorithms


def predict(algorithm: str, series: TimeSeries, truth: GroundTruth,
            detector_config: Optional[DetectorConfig] = None) -> list[int]:
    """Change point indices of the generated metric according to one algorithm."""
    values = series.metrics[METRIC]
    cfg = detector_config or EVALUATION_DETECTOR
    if algorithm == "hunter":
        return [cp.index for cp in detect(series, cfg)[METRIC]]
    if algorithm == "hunter-strict":
        settings = cfg.model_dump(exclude={"weak_pvalue"})
        return [cp.index for cp in detect(series, DetectorConfig.strict(**settings))[METRIC]]
    if algorithm == "pelt":
        return baselines.pelt(values, baselines.default_penalty(values), MIN_SEGMENT)
    if algorithm == "dynp":
        # the baseline is told how many change points to place
        return baselines.dynp(values, len(truth.indices), MIN_SEGMENT)
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def run_evaluation(scenarios: list[ScenarioSpec], algorithms, margins,
                   detector_config: Optional[DetectorConfig] = None, workers: int = 1) -> EvalReport:
    """
    Score every algorithm on every variant of every scenario at every margin.
    Rows come out in (scenario, algorithm, margin) input order whatever the
    worker count.
    """
    algorithms = _check_algorithms(algorithms)
    margins = [int(m) for m in margins]
    if any(m < 0 for m in margins):
        raise ConfigError("margins must be non-negative")

    # 1. Generate
    generated = {
        (spec.name, variant): generate(spec, variant)
        for spec in scenarios
        for variant in range(spec.variants)
    }

    # 2. Predict, one cell per (scenario, variant, algorithm)
    cells = [(key, algorithm) for key in generated for algorithm in algorithms]

    def run_cell(cell):
        (key, algorithm) = cell
        series, truth = generated[key]
        return predict(algorithm, series, truth, detector_config)

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = dict(zip(cells, pool.map(run_cell, cells)))
    else:
        predictions = {cell: run_cell(cell) for cell in cells}

    # 3. Score and average over variants
    rows = []
    for spec in scenarios:
        for algorithm in algorithms:
            for margin in margins:
                f1s, rands = [], []
                for variant in range(spec.variants):
                    key = (spec.name, variant)
                    truth = generated[key][1].indices
                    predicted = predictions[(key, algorithm)]
                    f1s.append(precision_recall_f1(predicted, truth, margin)["f1"])
                    rands.append(rand_index(predicted, truth, margin))
                rows.append(EvalRow(
                    scenario=spec.name,
                    algorithm=algorithm,
                    margin=margin,
                    f1=float(np.mean(f1s)),
                    rand=float(np.mean(rands)),
                ))

    logger.info(json.dumps({
        "event": "evaluation_finished",
        "scenarios": len(scenarios),
        "algorithms": algorithms,
        "margins": margins,
        "cells": len(cells),
    }))
    return EvalReport(rows=rows)


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    scale: float
    points: int
    algorithm: str
    f1: float = Field(..., ge=0, le=1)


def scale_scenario(spec: ScenarioSpec, scale: float) -> ScenarioSpec:
    if scale <= 0:
        raise ConfigError("length scales must be positive")
    groups = [g.model_copy(update={"length": max(MIN_SEGMENT, int(round(g.length * scale)))}) for g in spec.groups]
    return spec.model_copy(update={"groups": groups, "name": f"{spec.name}x{scale:g}"})


def run_length_sweep(spec: ScenarioSpec, scales, algorithms, margin: int = 10,
                     detector_config: Optional[DetectorConfig] = None, workers: int = 1) -> list[SweepRow]:
    """Mean F1 of each algorithm as every group length is scaled."""
    rows = []
    for scale in scales:
        scaled = scale_scenario(spec, float(scale))
        report = run_evaluation([scaled], algorithms, [margin], detector_config, workers)
        points = sum(g.length for g in scaled.groups)
        for row in report.rows:
            rows.append(SweepRow(scale=float(scale), points=points, algorithm=row.algorithm, f1=row.f1))
    return rows


def sweep_to_text(rows: list[SweepRow]) -> str:
    if not rows:
        return "no sweep results\n"
    header = ["scale", "points", "algorithm", "f1"]
    body = [[f"{r.scale:g}", str(r.points), r.algorithm, f"{r.f1:.6f}"] for r in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header, *body]) + "\n"
