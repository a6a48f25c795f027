"""Pipeline configuration: defaults, ``section.key = value`` files, overrides.

Example file::

    # reduced model for quick runs
    model.base_filters = 8
    model.filter_list = 8, 16, 16
    model.block_list = 1, 1, 1
    train.learning_rate = 1e-3
    train.epochs = 20
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from afbeat.net1d.config import Net1dConfig
from afbeat.preprocess import FilterSpec
from afbeat.trainer import TrainConfig


@dataclass(frozen=True)
class SegmentParams:
    length: int = 200
    skip_head: int = 10
    skip_tail: int = 5
    keep: str = "N"


@dataclass(frozen=True)
class FusionParams:
    group_size: int = 150
    trend_group_size: int = 20
    threshold: float = 0.5
    aggregation: str = "max_group"


@dataclass(frozen=True)
class EvalParams:
    threshold: float = 0.5
    window_s: float = 10.0
    calibration_bins: int = 10
    sweep_n: tuple[int, ...] = (1, 2, 5, 10, 20, 50, 100, 150)


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterSpec = field(default_factory=FilterSpec)
    segment: SegmentParams = field(default_factory=SegmentParams)
    model: Net1dConfig = field(default_factory=Net1dConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    evaluation: EvalParams = field(default_factory=EvalParams)

    def with_overrides(self, values: dict[str, Any]) -> "PipelineConfig":
        """Apply ``{"section.key": value}``; string values are parsed by field type."""
        sections: dict[str, dict[str, Any]] = {}
        for dotted, raw in values.items():
            section, _, key = dotted.partition(".")
            if section not in _SECTIONS or not key:
                raise ValueError(f"unknown config key {dotted!r}")
            current = getattr(self, section)
            fields = {f.name: f for f in dataclasses.fields(current)}
            if key not in fields:
                raise ValueError(f"unknown config key {dotted!r}")
            default = getattr(current, key)
            sections.setdefault(section, {})[key] = _coerce(raw, default, dotted)
        cfg = self
        for section, kv in sections.items():
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **kv)})
        if cfg.segment.length != cfg.model.beat_length and "model.beat_length" not in values:
            cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, beat_length=cfg.segment.length))
        return cfg

    def to_lines(self) -> list[str]:
        lines = []
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, tuple):
                    v = ", ".join(str(x) for x in v)
                lines.append(f"{section}.{f.name} = {v}")
        return lines


_SECTIONS = ("filter", "segment", "model", "train", "fusion", "evaluation")


def _coerce(raw: Any, default: Any, key: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {text!r}") from None
    return text


def read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the file, then ``overrides`` (flags win)."""
    cfg = PipelineConfig()
    if path is not None:
        cfg = cfg.with_overrides(read_config_file(path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
