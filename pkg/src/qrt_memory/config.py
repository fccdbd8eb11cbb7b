"""Experiment configuration: YAML files validated against per-kind schemas.

Validation errors carry the line of the offending key, e.g.
``fig1.yaml:7: model.gamma: Input should be greater than 0``.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import (BaseModel, ConfigDict, Field, ValidationError, field_serializer,
                      field_validator, model_validator)
from pydantic_core import PydanticCustomError

from .instruments import AXES, STATE_LABELS
from .model import ModelParams

KINDS = ("landscape", "avg-heatmap", "divisibility-heatmap", "perturbation-sweep",
         "temperature-compare", "three-time-compare")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _fail(path: str, msg: str):
    """Validation error attached to ``path`` (dotted, relative to the model raising it)."""
    raise PydanticCustomError("config", "{detail}", {"detail": msg, "path": path})


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _parse_beta(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("inf", "infinity")):
        return math.inf
    return v


class Range(_Strict):
    """``num`` evenly spaced values from ``start`` to ``stop`` inclusive."""

    start: float
    stop: float
    num: int = Field(ge=1)

    def values(self) -> list[float]:
        return np.linspace(self.start, self.stop, self.num).tolist()


Axis = Union[float, list[float], Range]


def axis_values(axis: Axis) -> list[float]:
    if isinstance(axis, Range):
        return axis.values()
    if isinstance(axis, list):
        if not axis:
            raise ValueError("empty value list")
        return [float(x) for x in axis]
    return [float(axis)]


def _is_scalar(axis: Axis) -> bool:
    return not isinstance(axis, (list, Range)) or len(axis_values(axis)) == 1


class ModelSpec(_Strict):
    omega0: Axis = 4.5
    eta: float = Field(4.5, gt=0)
    gamma: Axis = 0.1
    lam: Axis = Field(0.1, alias="lambda")
    beta: float = math.inf
    n_max: int = Field(8, ge=1)

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    _beta = field_validator("beta", mode="before")(_parse_beta)

    @field_validator("beta")
    @classmethod
    def _positive_beta(cls, v):
        if not v > 0:
            raise ValueError("beta must be > 0 or 'inf'")
        return v

    @field_serializer("beta")
    def _ser_beta(self, v):
        return "inf" if math.isinf(v) else v

    @field_validator("omega0", "gamma", "lam")
    @classmethod
    def _check_values(cls, v, info):
        vals = axis_values(v)
        if info.field_name == "gamma" and min(vals) <= 0:
            raise ValueError("gamma values must be > 0")
        if info.field_name == "lam" and min(vals) < 0:
            raise ValueError("lambda values must be >= 0")
        return v

    def varying(self) -> list[str]:
        return [n for n in ("omega0", "gamma", "lam") if not _is_scalar(getattr(self, n))]

    def params(self, **overrides) -> ModelParams:
        base = dict(omega0=axis_values(self.omega0)[0], eta=self.eta,
                    gamma=axis_values(self.gamma)[0], lam=axis_values(self.lam)[0],
                    beta=self.beta, n_max=self.n_max)
        base.update(overrides)
        return ModelParams(**base)


class ProtocolSpec(_Strict):
    initial_state: str = "0"
    axes: list[str] = ["z", "z"]
    times: list[float] | None = None

    @field_validator("initial_state")
    @classmethod
    def _state(cls, v):
        if v not in STATE_LABELS:
            raise ValueError(f"unknown initial state {v!r}; expected one of {sorted(STATE_LABELS)}")
        return v

    @field_validator("axes")
    @classmethod
    def _axes(cls, v):
        bad = [a for a in v if a not in AXES]
        if bad:
            raise ValueError(f"unknown measurement axes {bad}; expected x, y or z")
        return v

    @model_validator(mode="after")
    def _times(self):
        if self.times is not None:
            if len(self.times) != len(self.axes):
                _fail("times", "need one time per measurement axis")
            if any(t < 0 for t in self.times) or any(b < a for a, b in zip(self.times, self.times[1:])):
                _fail("times", "times must be >= 0 and non-decreasing")
        return self


class ConvergenceSpec(_Strict):
    enabled: bool = True
    tol: float = Field(1e-6, gt=0)
    points: int = Field(3, ge=1)


class Numerics(_Strict):
    grid_n: int = Field(81, ge=2)
    quadrature_n: int = Field(121, ge=2)
    sphere_samples: int = Field(2048, ge=1)
    convergence: ConvergenceSpec = ConvergenceSpec()


class OutputSpec(_Strict):
    path: str | None = None
    format: Literal["csv", "json"] = "csv"


class TimeGrid(_Strict):
    t_max: float = Field(gt=0)
    grid_n: int = Field(ge=2)


class Temperature(_Strict):
    beta: float
    n_max: int = Field(ge=1)

    _beta = field_validator("beta", mode="before")(_parse_beta)
    _positive_beta = field_validator("beta")(ModelSpec._positive_beta.__func__)

    @field_serializer("beta")
    def _ser_beta(self, v):
        return "inf" if math.isinf(v) else v


class _Base(_Strict):
    version: Literal[1] = 1
    name: str = ""
    model: ModelSpec = ModelSpec()
    protocol: ProtocolSpec = ProtocolSpec()
    numerics: Numerics = Numerics()
    output: OutputSpec = OutputSpec()

    def _require_varying(self, allowed: set[str]):
        for name in sorted(set(self.model.varying()) - allowed):
            key = "lambda" if name == "lam" else name
            _fail(f"model.{key}", f"kind {self.kind!r} cannot sweep {key}")

    def _require_axes(self, n: int):
        if len(self.protocol.axes) != n:
            _fail("protocol.axes",
                  f"kind {self.kind!r} needs {n} measurement axes, got {len(self.protocol.axes)}")


class LandscapeConfig(_Base):
    kind: Literal["landscape"]
    times: TimeGrid

    @model_validator(mode="after")
    def _check(self):
        self._require_varying(set())
        self._require_axes(2)
        return self


class AvgHeatmapConfig(_Base):
    kind: Literal["avg-heatmap"]
    t_f: float = Field(10.0, gt=0)
    quantities: list[Literal["eps_avg", "n_avg"]] = ["eps_avg", "n_avg"]

    @model_validator(mode="after")
    def _check(self):
        self._require_varying({"omega0", "gamma"})
        self._require_axes(2)
        if not self.quantities:
            _fail("quantities", "quantities must not be empty")
        return self


class DivisibilityHeatmapConfig(_Base):
    kind: Literal["divisibility-heatmap"]
    t_f: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        self._require_varying({"omega0", "gamma"})
        return self


class PerturbationSweepConfig(_Base):
    kind: Literal["perturbation-sweep"]

    @model_validator(mode="after")
    def _check(self):
        self._require_varying({"lam"})
        self._require_axes(2)
        if self.protocol.times is None:
            _fail("protocol", "perturbation-sweep needs protocol.times [t1, t2]")
        return self


class TemperatureCompareConfig(_Base):
    kind: Literal["temperature-compare"]
    t_f: float = Field(10.0, gt=0)
    temperatures: list[Temperature]

    @model_validator(mode="after")
    def _check(self):
        self._require_varying({"omega0", "gamma"})
        self._require_axes(2)
        if not self.temperatures:
            _fail("temperatures", "temperatures must not be empty")
        return self


class ThreeTimeCompareConfig(_Base):
    kind: Literal["three-time-compare"]
    t_f: float = Field(10.0, gt=0)
    noncommuting_axes: list[str] = ["z", "x", "z"]

    @field_validator("noncommuting_axes")
    @classmethod
    def _axes(cls, v):
        return ProtocolSpec._axes(v)

    @model_validator(mode="after")
    def _check(self):
        self._require_varying({"omega0", "gamma"})
        self._require_axes(3)
        if len(self.noncommuting_axes) != 3:
            _fail("noncommuting_axes", "noncommuting_axes needs three axes")
        return self


ExperimentConfig = Annotated[
    Union[LandscapeConfig, AvgHeatmapConfig, DivisibilityHeatmapConfig, PerturbationSweepConfig,
          TemperatureCompareConfig, ThreeTimeCompareConfig],
    Field(discriminator="kind")]

_BY_KIND = {
    "landscape": LandscapeConfig,
    "avg-heatmap": AvgHeatmapConfig,
    "divisibility-heatmap": DivisibilityHeatmapConfig,
    "perturbation-sweep": PerturbationSweepConfig,
    "temperature-compare": TemperatureCompareConfig,
    "three-time-compare": ThreeTimeCompareConfig,
}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths in a composed YAML tree to 1-based line numbers."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key_path = path + (k.value,)
            out[key_path] = k.start_mark.line + 1
            _line_index(v, key_path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _locate(loc: tuple, lines: dict) -> int | None:
    # union branches add segments such as "list[float]" that are not in the file
    path = ()
    for x in loc:
        if path + (x,) in lines:
            path += (x,)
    return lines.get(path)


def parse_config(data: dict, source: str = "<config>", lines: dict | None = None):
    """Validate a config mapping; raise :class:`ConfigError` with line-precise messages."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    kind = data.get("kind")
    if kind not in _BY_KIND:
        line = lines.get(("kind",), 1)
        raise ConfigError(f"{source}:{line}: kind: must be one of {', '.join(KINDS)}, got {kind!r}")
    try:
        return _BY_KIND[kind].model_validate(data)
    except ValidationError as exc:
        messages = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            extra = (err.get("ctx") or {}).get("path")
            if extra:
                loc += tuple(extra.split("."))
            line = _locate(loc, lines)
            where = ".".join(str(x) for x in loc) or "<root>"
            prefix = f"{source}:{line}" if line else source
            messages.append(f"{prefix}: {where}: {err['msg'].removeprefix('Value error, ')}")
        raise ConfigError("\n".join(messages)) from None


def load_config_text(text: str, source: str = "<config>"):
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if node is None:
        raise ConfigError(f"{source}: empty configuration")
    return parse_config(data, source, _line_index(node))


def load_config(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return load_config_text(text, str(path))


def preset_names() -> list[str]:
    files = resources.files("qrt_memory").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml"))


def load_preset(name: str):
    res = resources.files("qrt_memory").joinpath("presets", f"{name}.yaml")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return load_config_text(res.read_text(encoding="utf-8"), f"preset:{name}")


def dump_config(cfg) -> dict:
    """Plain-data form of a validated config; ``parse_config`` inverts it."""
    return cfg.model_dump(mode="json", by_alias=True)
