"""
Rendering of detected change points: console text, CSV rows, JSON and the
webhook payload.
"""
import csv
import io
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from jinja2 import Environment, FileSystemLoader

from models import ChangePoint, ChangePointGroup, Effect, MetricDef, TimeSeries
from validation import WEBHOOK_SINCE_DAYS, OutputFormat, ReportOptions

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

templates = Environment(
    loader=FileSystemLoader(Path(__file__).with_name("templates")),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)


# === FORMATTING === #

def format_time(epoch_seconds: int) -> str:
    return datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc).isoformat()


def format_percent(relative_change: float) -> str:
    if math.isinf(relative_change):
        return "+inf%" if relative_change > 0 else "-inf%"
    return f"{relative_change * 100:+.1f}%"


def format_value(value: float, scale: float = 1.0) -> str:
    return f"{value * scale:.6g}"


def format_pvalue(p_value: float) -> str:
    return f"{p_value:.4g}"


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _scale_of(metric: str, metrics: Optional[dict[str, MetricDef]]) -> float:
    definition = (metrics or {}).get(metric)
    return definition.scale if definition else 1.0


# === FILTERING === #

def newest_time(groups: list[ChangePointGroup], series: Optional[TimeSeries] = None) -> Optional[int]:
    """Newest data timestamp, falling back to the newest change point."""
    if series is not None and len(series):
        return int(series.timestamps[-1])
    if groups:
        return max(g.time for g in groups)
    return None


def filter_recent(groups: list[ChangePointGroup], since_days: Optional[int],
                  reference_time: Optional[int]) -> list[ChangePointGroup]:
    """Groups no older than since_days before reference_time (inclusive)."""
    if since_days is None or reference_time is None:
        return list(groups)
    cutoff = reference_time - since_days * SECONDS_PER_DAY
    return [g for g in groups if g.time >= cutoff]


def regressions(groups: list[ChangePointGroup]) -> list[ChangePoint]:
    return [cp for g in groups for cp in g.changes if cp.direction_effect == Effect.REGRESSION]


# === RENDERERS === #

def _text_rows(groups, metrics) -> list[list[list[str]]]:
    table = []
    for group in groups:
        rows = []
        for cp in group.changes:
            scale = _scale_of(cp.metric, metrics)
            rows.append([
                cp.metric,
                format_value(cp.mean_before, scale),
                "->",
                format_value(cp.mean_after, scale),
                format_percent(cp.relative_change),
                f"p={format_pvalue(cp.p_value)}",
                cp.direction_effect.value,
            ])
        table.append(rows)
    return table


def _render_text(groups, metrics, series) -> str:
    table = _text_rows(groups, metrics)
    cells = [row for rows in table for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))] if cells else []

    rendered = []
    for group, rows in zip(groups, table):
        header = f"{format_time(group.time)}  index {group.index}"
        if series is not None:
            attributes = [f"{name}={values[group.index]}" for name, values in series.attributes.items()
                          if group.index < len(values)]
            if attributes:
                header += "  " + " ".join(attributes)
        lines = [
            # numbers right-aligned, words left-aligned
            "  ".join(v.rjust(w) if i in (1, 3, 4) else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths))).rstrip()
            for row in rows
        ]
        rendered.append({"header": header, "rows": lines})
    return templates.get_template("report.txt.j2").render(groups=rendered)


def change_point_record(cp: ChangePoint) -> dict:
    record = cp.model_dump(mode="json")
    record["relative_change"] = _finite_or_none(cp.relative_change)
    return record


def _render_csv(groups) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["time", "index", "metric", "mean_before", "mean_after", "stddev_before",
                     "stddev_after", "relative_change", "p_value", "effect"])
    for group in groups:
        for cp in group.changes:
            writer.writerow([
                format_time(cp.time), cp.index, cp.metric, repr(cp.mean_before), repr(cp.mean_after),
                repr(cp.stddev_before), repr(cp.stddev_after), repr(cp.relative_change),
                repr(cp.p_value), cp.direction_effect.value,
            ])
    return out.getvalue()


def _render_json(groups) -> str:
    points = [change_point_record(cp) for g in groups for cp in g.changes]
    return json.dumps({"change_points": points}, indent=2) + "\n"


def render_report(groups: list[ChangePointGroup], opts: Optional[ReportOptions] = None,
                  metrics: Optional[dict[str, MetricDef]] = None,
                  series: Optional[TimeSeries] = None) -> str:
    """
    Report of the change point groups in the requested format.
    Text output scales means by MetricDef.scale; csv and json carry raw values.
    """
    opts = opts or ReportOptions()
    groups = filter_recent(groups, opts.since_days, newest_time(groups, series))
    if opts.output_format == OutputFormat.CSV:
        return _render_csv(groups)
    if opts.output_format == OutputFormat.JSON:
        return _render_json(groups)
    return _render_text(groups, metrics, series)


def webhook_payload(groups: list[ChangePointGroup], opts: Optional[ReportOptions] = None,
                    test_name: str = "", reference_time: Optional[int] = None,
                    metrics: Optional[dict[str, MetricDef]] = None) -> dict:
    """
    Notification document for one test. Only change points within
    since_days (default 7) of reference_time, the newest data timestamp,
    are included.
    """
    since_days = (opts.since_days if opts else None) or WEBHOOK_SINCE_DAYS
    if reference_time is None:
        reference_time = newest_time(groups)
    recent = filter_recent(groups, since_days, reference_time)

    changes = []
    for group in recent:
        for cp in group.changes:
            scale = _scale_of(cp.metric, metrics)
            pct = _finite_or_none(cp.relative_change)
            changes.append({
                "time": format_time(cp.time),
                "metric": cp.metric,
                "before": cp.mean_before * scale,
                "after": cp.mean_after * scale,
                "change_pct": None if pct is None else pct * 100,
                "p_value": cp.p_value,
                "effect": cp.direction_effect.value,
            })

    text = templates.get_template("message.txt.j2").render(
        test=test_name,
        since_days=since_days,
        changes=[{
            "time": c["time"],
            "metric": c["metric"],
            "before": format_value(c["before"]),
            "after": format_value(c["after"]),
            "change": "inf" if c["change_pct"] is None else f"{c['change_pct']:+.1f}%",
            "p_value": format_pvalue(c["p_value"]),
            "effect": c["effect"],
        } for c in changes],
    )
    return {
        "test": test_name,
        "generated_at": None if reference_time is None else format_time(reference_time),
        "changes": changes,
        "text": text,
    }


def payload_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"
