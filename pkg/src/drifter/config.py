"""YAML configuration: schema, line-anchored validation errors, env overrides."""
from __future__ import annotations

import os
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from drifter.drift import DriftRule
from drifter.engine import EngineConfig
from drifter.ingest import DEFAULT_WINDOW_MS, SourceConfig, WindowMode
from drifter.model import DEFAULT_BUCKET_COUNT
from drifter.sketches import DEFAULT_QUANTILES

ENV_PREFIX = "DRIFTER_"


class ConfigError(Exception):
    """Invalid configuration; ``str()`` is a user-facing, line-anchored message."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WindowSettings(_Strict):
    mode: Literal["by_count", "by_time", "hybrid"] = Field("by_time", description="window closing policy")
    count: Optional[int] = Field(None, ge=1, description="records per batch (by_count / hybrid)")
    interval_ms: int = Field(DEFAULT_WINDOW_MS, ge=1000, description="window length in ms (by_time / hybrid)")

    @model_validator(mode="after")
    def _count_needed(self):
        if self.mode in ("by_count", "hybrid") and self.count is None:
            raise ValueError(f"'count' is required for window mode {self.mode}")
        return self

    def to_mode(self) -> WindowMode:
        if self.mode == "by_count":
            return WindowMode.by_count(self.count)
        if self.mode == "hybrid":
            return WindowMode.hybrid(self.count, self.interval_ms)
        return WindowMode.by_time(self.interval_ms)


class SourceSettings(_Strict):
    path: str = Field("-", description="input file, or '-' for standard input")
    format: Literal["vw_like", "jsonl", "csv"] = "vw_like"
    compression: Literal["auto", "none", "gzip"] = Field("auto", description="'auto' sniffs gzip magic bytes")
    window: WindowSettings = Field(default_factory=WindowSettings)


class FeatureFilter(_Strict):
    allow: list[str] = Field(default_factory=lambda: ["*"], description="glob patterns to monitor")
    deny: list[str] = Field(default_factory=list, description="glob patterns to skip; wins over allow")


class EngineSettings(_Strict):
    bucket_count: int = Field(DEFAULT_BUCKET_COUNT, ge=2)
    hll_precision: int = Field(12, ge=4, le=16)
    histogram_bins: int = Field(64, ge=2)
    interaction_cap: int = Field(100, ge=0, description="max feature pairs ranked per window")
    contingency_width: int = Field(256, ge=2)
    ranking_seed: int = 0
    rank_every: int = Field(1, ge=1, description="rank every N-th window")
    quantiles: list[float] = Field(default_factory=lambda: list(DEFAULT_QUANTILES))
    max_features: int = Field(10_000, ge=1)
    series_capacity: Optional[int] = Field(None, ge=1, description="points per metric series; derived from rules if unset")
    rejected_budget: float = Field(0.5, ge=0.0, le=1.0, description="rejected-line fraction that raises a data-quality alert")
    features: FeatureFilter = Field(default_factory=FeatureFilter)

    @field_validator("quantiles")
    @classmethod
    def _q_range(cls, v):
        for q in v:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"quantile {q} outside [0, 1]")
        return sorted(set(v))


class RuleSettings(_Strict):
    kind: Literal["relative_delta", "absolute_delta", "stddev_outlier"]
    metric: str = "coverage"
    features: str = "*"
    threshold: float = Field(0.0, ge=0.0)
    offset_interval: Optional[int] = Field(None, gt=0, description="defaults to one window")
    eval_window: Optional[int] = Field(None, gt=0, description="defaults to one window")
    outlier_coefficient: float = Field(0.5, gt=0.0)


class ExportSettings(_Strict):
    host: str = "127.0.0.1"
    port: int = Field(9464, ge=1, le=65535)
    alert_log: Optional[str] = Field("alerts.jsonl", description="NDJSON alert log path; null disables")


def _default_rules() -> list[RuleSettings]:
    return [RuleSettings(kind="relative_delta", metric="coverage", threshold=25.0)]


class CliConfig(_Strict):
    source: SourceSettings = Field(default_factory=SourceSettings)
    engine: EngineSettings = Field(default_factory=EngineSettings)
    rules: list[RuleSettings] = Field(default_factory=_default_rules)
    export: ExportSettings = Field(default_factory=ExportSettings)

    @model_validator(mode="after")
    def _rule_windows(self):
        step = self.source.window.interval_ms if self.source.window.mode != "by_count" else None
        for i, r in enumerate(self.rules):
            if step is None and (r.eval_window is None or (r.kind != "stddev_outlier" and r.offset_interval is None)):
                raise ValueError(f"rules[{i}]: eval_window/offset_interval must be explicit with by_count windows")
            if r.eval_window is None:
                r.eval_window = step
            if r.offset_interval is None:
                r.offset_interval = r.eval_window if r.kind != "stddev_outlier" else step or r.eval_window
            if r.kind != "stddev_outlier" and r.offset_interval < r.eval_window:
                raise ValueError(f"rules[{i}]: offset_interval must be >= eval_window")
        return self

    def source_config(self, path: Optional[str] = None) -> SourceConfig:
        s = self.source
        return SourceConfig(path if path is not None else s.path, s.format, s.compression, s.window.to_mode())

    def engine_config(self) -> EngineConfig:
        e = self.engine
        rules = [DriftRule(r.kind, r.metric, r.threshold, r.offset_interval or 0, r.eval_window,
                           r.outlier_coefficient, r.features) for r in self.rules]
        return EngineConfig(
            bucket_count=e.bucket_count, hll_precision=e.hll_precision, histogram_bins=e.histogram_bins,
            interaction_cap=e.interaction_cap, contingency_width=e.contingency_width,
            ranking_seed=e.ranking_seed, rank_every=e.rank_every, quantiles=tuple(e.quantiles),
            rules=tuple(rules), window=self.source.window.to_mode(), allow=tuple(e.features.allow),
            deny=tuple(e.features.deny), max_features=e.max_features, series_capacity=e.series_capacity,
            rejected_budget=e.rejected_budget)

    def filter_conflicts(self) -> list[str]:
        f = self.engine.features
        return sorted(set(f.allow) & set(f.deny))


def _node_line(node, loc) -> Optional[int]:
    """Walk a composed YAML node along a pydantic error location."""
    best = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == part:
                    best = k.start_mark.line + 1
                    nxt = v
                    break
            if nxt is None:
                return best
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            best = node.start_mark.line + 1
        else:
            return best
    return best


def _set_path(tree: dict, path: list[str], value: Any) -> None:
    for key in path[:-1]:
        nxt = tree.get(key)
        if not isinstance(nxt, dict):
            nxt = tree[key] = {}
        tree = nxt
    tree[path[-1]] = value


def env_overrides(environ=None) -> dict[str, Any]:
    """``DRIFTER_EXPORT__PORT=9000`` becomes ``{"export.port": 9000}``."""
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX) or "__" not in key:
            continue
        path = key[len(ENV_PREFIX):].lower().replace("__", ".")
        out[path] = yaml.safe_load(raw) if raw != "" else None
    return out


def _format_errors(exc: ValidationError, where: str, root) -> str:
    lines = []
    for err in exc.errors():
        loc = [p for p in err["loc"] if p not in ("function-after",)]
        key = ".".join(str(p) for p in loc) or "<root>"
        line = _node_line(root, loc) if root is not None else None
        anchor = f"{where}:{line}" if line else where
        lines.append(f"{anchor}: {key}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None,
                environ=None) -> CliConfig:
    """Read ``path`` (or defaults), apply env then explicit overrides, validate."""
    where = path or "<defaults>"
    root = None
    data: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
        try:
            root = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark else ""
            raise ConfigError(f"{path}{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}:1: top level must be a mapping")
    merged = dict(env_overrides(environ))
    merged.update(overrides or {})
    for dotted, value in merged.items():
        if value is not None or dotted in (overrides or {}):
            _set_path(data, dotted.split("."), value)
    try:
        return CliConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, where, root)) from None


def describe_defaults() -> str:
    """Flattened ``key = default  (description)`` listing for ``--help``."""
    rows = []

    def walk(model: type[BaseModel], prefix: str):
        for name, f in model.model_fields.items():
            ann = f.annotation
            if isinstance(ann, type) and issubclass(ann, BaseModel):
                walk(ann, f"{prefix}{name}.")
                continue
            default = f.get_default(call_default_factory=True)
            if isinstance(default, list) and default and isinstance(default[0], BaseModel):
                default = [d.model_dump(exclude_none=True) for d in default]
            desc = f"  ({f.description})" if f.description else ""
            rows.append(f"  {prefix}{name} = {default!r}{desc}")

    walk(CliConfig, "")
    return "\n".join(rows)


def dump_config(cfg: CliConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
