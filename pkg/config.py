"""
YAML test definitions.

The file has four optional sections:

    graphite:   server url and the default metric suffixes
    templates:  named fragments tests can inherit from
    tests:      one entry per performance test (csv or graphite sourced)
    slack:      webhook notification settings

A test merges every template in its `inherit` list in order, then its own
fields. Later fields replace earlier ones, except `metrics`, which are
merged by metric name.
"""
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from models import MetricDef
from validation import WEBHOOK_SINCE_DAYS

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "shiftwatch.yaml"


class SourceKind(str, Enum):
    CSV = "csv"
    GRAPHITE = "graphite"


class GraphiteConfig(BaseModel):
    """
    Graphite server settings.
    Fields:
        - url: Base URL of the render API, e.g. http://graphite.local
        - suffixes: Path fragments placed between the test prefix and the metric name
    """

    model_config = ConfigDict(frozen=True)

    url: str = ""
    suffixes: list[str] = Field(default_factory=list)

    @field_validator("url")
    @classmethod
    def strip_trailing_slash(cls, v):
        return v.strip().rstrip("/")


class WebhookConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    url: Optional[str] = None
    since_days: int = Field(default=WEBHOOK_SINCE_DAYS, gt=0)
    enabled: bool = True


class TestConfig(BaseModel):
    """
    A resolved test definition.
    Fields:
        - name: Test name (the key under `tests`)
        - source: csv or graphite
        - metrics: Metric name -> MetricDef
        - path, time_column, delimiter, attributes: CSV options
        - prefix, tags, suffixes: Graphite options (suffixes default to the server's)
        - inherit: Templates the definition was built from
    """

    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    source: SourceKind
    metrics: dict[str, MetricDef]
    path: Optional[Path] = None
    time_column: str = "time"
    delimiter: str = ","
    attributes: Optional[list[str]] = None
    prefix: Optional[str] = None
    tags: list[str] = Field(default_factory=list)
    suffixes: Optional[list[str]] = None
    inherit: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_source(self):
        if not self.metrics:
            raise ValueError(f"test '{self.name}' defines no metrics")
        if self.source == SourceKind.CSV and self.path is None:
            raise ValueError(f"csv test '{self.name}' needs a file")
        if self.source == SourceKind.GRAPHITE and not self.prefix:
            raise ValueError(f"graphite test '{self.name}' needs a prefix")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")
        return self


class AppConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    graphite: Optional[GraphiteConfig] = None
    templates: dict[str, dict] = Field(default_factory=dict)
    tests: dict[str, TestConfig] = Field(default_factory=dict)
    slack: Optional[WebhookConfig] = None

    def get_test(self, name: str) -> TestConfig:
        if name not in self.tests:
            known = ", ".join(sorted(self.tests)) or "none"
            raise ConfigError(f"unknown test '{name}' (configured: {known})")
        return self.tests[name]


def _merge(base: dict, overlay: dict) -> dict:
    merged = dict(base)
    for key, value in overlay.items():
        if key == "inherit":
            continue
        if key == "metrics" and isinstance(merged.get(key), dict) and isinstance(value, dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def resolve_inheritance(body: dict, templates: dict[str, dict], chain: tuple[str, ...] = ()) -> dict:
    """Flatten `inherit` recursively; unknown or cyclic templates raise ConfigError."""
    if not isinstance(body, dict):
        where = f"template '{chain[-1]}'" if chain else "test definition"
        raise ConfigError(f"{where} must be a mapping, got {type(body).__name__}")
    inherit = body.get("inherit") or []
    if isinstance(inherit, str):
        inherit = [inherit]

    resolved: dict = {}
    for name in inherit:
        if name not in templates:
            raise ConfigError(f"unknown template '{name}'")
        if name in chain:
            raise ConfigError(f"template inheritance cycle: {' -> '.join([*chain, name])}")
        resolved = _merge(resolved, resolve_inheritance(templates[name] or {}, templates, (*chain, name)))
    return _merge(resolved, body)


def _metric_defs(raw) -> dict[str, MetricDef]:
    if raw is None:
        return {}
    if isinstance(raw, list):
        raw = {name: {} for name in raw}
    if not isinstance(raw, dict):
        raise ConfigError("metrics must be a mapping or a list of names")
    defs = {}
    for name, entry in raw.items():
        entry = entry or {}
        if not isinstance(entry, dict):
            raise ConfigError(f"metric '{name}' must be a mapping, got {type(entry).__name__}")
        if "name" in entry:
            raise ConfigError(f"metric '{name}': the name is the key, drop the 'name' field")
        defs[name] = MetricDef(name=name, **entry)
    return defs


def _source_of(name: str, fields: dict) -> SourceKind:
    if "type" in fields:
        try:
            return SourceKind(fields["type"])
        except ValueError:
            raise ConfigError(f"test '{name}': unknown type {fields['type']!r}")
    if "file" in fields or "path" in fields:
        return SourceKind.CSV
    if "prefix" in fields:
        return SourceKind.GRAPHITE
    raise ConfigError(f"test '{name}': cannot tell the data source (set type, file or prefix)")


def build_test_config(name: str, fields: dict, base_dir: Path = Path(".")) -> TestConfig:
    """Turn a resolved YAML test body into a TestConfig."""
    csv_options = fields.get("csv_options") or {}
    path = fields.get("file", fields.get("path"))
    if path is not None:
        path = Path(path)
        if not path.is_absolute():
            path = base_dir / path

    tags = fields.get("tags") or []
    try:
        return TestConfig(
            name=name,
            source=_source_of(name, fields),
            metrics=_metric_defs(fields.get("metrics")),
            path=path,
            time_column=fields.get("time_column", csv_options.get("time_column", "time")),
            delimiter=csv_options.get("delimiter", fields.get("delimiter", ",")),
            attributes=fields.get("attributes"),
            prefix=fields.get("prefix"),
            tags=[tags] if isinstance(tags, str) else tags,
            suffixes=fields.get("suffixes"),
            inherit=list(fields.get("inherit") or []),
        )
    except ValidationError as e:
        logger.warning(f"Invalid test definition '{name}': {e}")
        raise ConfigError(f"Invalid test definition '{name}': {e}") from e


def parse_config(document: dict, base_dir: Path = Path(".")) -> AppConfig:
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("config must be a YAML mapping")

    sections = {key: document.get(key) or {} for key in ("templates", "tests", "graphite", "slack")}
    for key, section in sections.items():
        if not isinstance(section, dict):
            raise ConfigError(f"'{key}' must be a mapping, got {type(section).__name__}")

    templates = {str(k): v or {} for k, v in sections["templates"].items()}
    tests = {}
    for name, body in sections["tests"].items():
        if body is not None and not isinstance(body, dict):
            raise ConfigError(f"test '{name}' must be a mapping, got {type(body).__name__}")
        # inherit is kept for reporting, resolution drops it
        resolved = resolve_inheritance(body or {}, templates)
        inherit = (body or {}).get("inherit") or []
        resolved["inherit"] = [inherit] if isinstance(inherit, str) else inherit
        tests[str(name)] = build_test_config(str(name), resolved, base_dir)

    try:
        graphite = GraphiteConfig(**sections["graphite"]) if sections["graphite"] else None
        slack = WebhookConfig(**sections["slack"]) if sections["slack"] else None
    except ValidationError as e:
        logger.warning(f"Invalid config section: {e}")
        raise ConfigError(f"Invalid config section: {e}") from e

    return AppConfig(graphite=graphite, templates=templates, tests=tests, slack=slack)


def load_config(path) -> AppConfig:
    """
    Read and resolve a YAML config file. Relative CSV paths are taken
    relative to the config file.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            document = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: malformed YAML: {e}") from e
    cfg = parse_config(document, path.parent)
    logger.debug(f"Loaded {len(cfg.tests)} tests from {path}")
    return cfg


def apply_env_overrides(cfg: AppConfig) -> AppConfig:
    """GRAPHITE_URL and WEBHOOK_URL take precedence over the file."""
    graphite_url = os.getenv("GRAPHITE_URL")
    webhook_url = os.getenv("WEBHOOK_URL")
    if graphite_url:
        graphite = cfg.graphite or GraphiteConfig()
        cfg = cfg.model_copy(update={"graphite": GraphiteConfig(url=graphite_url, suffixes=graphite.suffixes)})
    if webhook_url:
        slack = cfg.slack or WebhookConfig()
        cfg = cfg.model_copy(update={"slack": slack.model_copy(update={"url": webhook_url})})
    return cfg
