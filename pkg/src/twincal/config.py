"""Experiment configuration: a single YAML (or JSON) document.

Example::

    schema_version: 1
    master_seed: 7
    replications: 20
    estimators: [integrated_II, klyshko_II]
    source: {nbar_peak: 1.0e-3, tau_coh: 1.0e-13, spatial_modes: 1, duration: 2.0e-5}
    detector1:
      eta: 0.8
      charge: {kind: gamma, mean: 1.0, excess_ratio: 2.0}
      pulse: {kind: rect, tau_p: 5.0e-10}
    detector2:
      eta: 0.6
      pulse: {kind: rect, tau_p: 5.0e-10}
    sweep: {param: detector2.eta, values: [0.3, 0.6, 0.9]}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .analytic import GAIN_THRESHOLD, OVERLAP_THRESHOLD
from .calib import ESTIMATORS
from .detector import RESOLUTION, ChargeModel, DetectorConfig, PulseShape
from .errors import ConfigError
from .source import SourceConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    """How simulated records are turned into estimates.

    Times are in seconds except ``guard`` and ``min_block`` (units of
    ``tau_p``). ``window=None`` picks the smallest window whose pulse
    autocorrelation tail is below 1e-3.
    """

    window: float | None = None
    max_lag: float | None = None
    guard: float = 10.0
    min_block: float = 50.0
    min_blocks: int = 32
    max_blocks: int = 256
    background_subtraction: bool = True
    window_cells: int = 1
    counting_blocks: int = 64
    declared_q1_excess: float | None = None
    klyshko_peak_window: float | None = None
    rel_tolerance: float | None = None
    save_correlations: bool = False
    overlap_threshold: float = OVERLAP_THRESHOLD
    gain_threshold: float = GAIN_THRESHOLD


@dataclass(frozen=True)
class Sweep:
    param: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ConfigError("sweep.values", "must not be empty")


@dataclass(frozen=True)
class ExperimentSpec:
    source: SourceConfig
    detector1: DetectorConfig
    detector2: DetectorConfig
    estimators: tuple = ()
    replications: int = 1
    sweep: Sweep | None = None
    output_dir: str = "out"
    master_seed: int = 0
    analysis: AnalysisConfig = AnalysisConfig()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        for i, name in enumerate(self.estimators):
            if name not in ESTIMATORS:
                raise ConfigError(f"estimators[{i}]", f"unknown estimator {name!r}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError("replications", "must be an integer >= 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {self.schema_version}")

    def points(self) -> list[tuple[Any, "ExperimentSpec"]]:
        """(sweep value, spec) for every sweep point; one point without a sweep."""
        if self.sweep is None:
            return [(None, self)]
        return [(v, set_param(self, self.sweep.param, v)) for v in self.sweep.values]


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    prefix = f"{path}." if path else ""
    if unknown:
        raise ConfigError(prefix + sorted(unknown)[0], "unknown field")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(prefix + exc.path.split(".")[-1], str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _detector(data: dict, path: str) -> DetectorConfig:
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    data = dict(data)
    if "charge" in data:
        data["charge"] = _build(ChargeModel, data["charge"], f"{path}.charge")
    if "pulse" in data:
        data["pulse"] = _build(PulseShape, data["pulse"], f"{path}.pulse")
    return _build(DetectorConfig, data, path)


def spec_from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    data = dict(data)
    for key in ("source", "detector1", "detector2"):
        if key not in data:
            raise ConfigError(key, "missing")
    data["source"] = _build(SourceConfig, data["source"], "source")
    data["detector1"] = _detector(data["detector1"], "detector1")
    data["detector2"] = _detector(data["detector2"], "detector2")
    if data.get("sweep") is not None:
        data["sweep"] = _build(Sweep, data["sweep"], "sweep")
    if "analysis" in data:
        data["analysis"] = _build(AnalysisConfig, data["analysis"] or {}, "analysis")
    return _build(ExperimentSpec, data, "")


def spec_to_dict(spec: ExperimentSpec) -> dict:
    out = asdict(spec)
    out["estimators"] = list(spec.estimators)
    if spec.sweep is not None:
        out["sweep"]["values"] = list(spec.sweep.values)
    return out


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None
    return spec_from_dict(data)


def dump_spec(spec: ExperimentSpec, path=None) -> str:
    text = yaml.safe_dump(spec_to_dict(spec), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def _set(obj, parts: list[str], value):
    head = parts[0]
    if not dataclasses.is_dataclass(obj) or head not in {f.name for f in fields(obj)}:
        raise ConfigError(head, "no such parameter")
    if len(parts) == 1:
        return replace(obj, **{head: value})
    changes = {head: _set(getattr(obj, head), parts[1:], value)}
    if isinstance(obj, DetectorConfig) and head == "pulse" and obj.dt == obj.pulse.tau_p / RESOLUTION:
        changes["dt"] = None  # keep the default sampling period tied to tau_p
    return replace(obj, **changes)


def set_param(spec: ExperimentSpec, param: str, value) -> ExperimentSpec:
    """Return a copy with ``param`` (dotted path) set; comma-separated paths all get ``value``."""
    for p in param.split(","):
        p = p.strip()
        try:
            spec = _set(spec, p.split("."), value)
        except TypeError as exc:
            raise ConfigError(p, f"bad value {value!r}: {exc}") from None
        except ConfigError as exc:
            if exc.path == p:
                raise
            raise ConfigError(p, str(exc).split(": ", 1)[-1]) from None
    return spec
