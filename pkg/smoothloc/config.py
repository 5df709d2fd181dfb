"""Experiment configuration files: one `key = value` per line, `#` starts a comment."""

from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from smoothloc.errors import ConfigurationError
from smoothloc.util import truncate_message

Experiment = Literal[
    "estimate",
    "estimate-hd",
    "fisher-sweep",
    "coverage",
    "coverage-hd",
    "sawtooth-phase",
    "concentration",
]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment: Experiment
    model: str = "gaussian(0,1)"
    n: int = Field(default=10_000, ge=2)
    n_grid: list[int] = Field(default_factory=list)
    trials: int = Field(default=100, ge=1)
    delta: float = Field(default=0.1, gt=0, le=0.5)
    delta_grid: list[float] = Field(default_factory=lambda: [0.1, 0.01])
    r: Optional[float] = Field(default=None, gt=0)
    r_grid: list[float] = Field(default_factory=list)
    r_multiplier: float = Field(default=0.5, gt=0)
    eta: float = Field(default=0.25, gt=0, lt=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    out: Optional[str] = None
    width: float = Field(default=0.05, gt=0, le=0.5)
    slope: float = Field(default=4.0, ge=0)
    families: list[Literal["gaussian", "exponential", "rademacher", "score"]] = Field(
        default_factory=lambda: ["gaussian", "exponential"]  # type: ignore[arg-type]
    )
    d_grid: list[int] = Field(default_factory=lambda: [4, 16])
    lambda_true: float = 0.0
    radius_multiplier: float = Field(default=1.3, gt=0)
    min_samples_factor: float = Field(default=100.0, gt=0)

    @field_validator("n_grid", "delta_grid", "r_grid", "families", "d_grid", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("n_grid", "d_grid")
    @classmethod
    def _positive_ints(cls, value: list[int]) -> list[int]:
        if any(v < 1 for v in value):
            raise ValueError("grid entries must be positive")
        return value

    @field_validator("r_grid")
    @classmethod
    def _positive_radii(cls, value: list[float]) -> list[float]:
        if any(not v > 0 for v in value):
            raise ValueError("smoothing radii must be positive")
        return value

    @field_validator("delta_grid")
    @classmethod
    def _probabilities(cls, value: list[float]) -> list[float]:
        if any(not 0 < v < 1 for v in value):
            raise ValueError("failure probabilities must lie in (0, 1)")
        return value


def validate_config(values: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(truncate_message(f"invalid config: {problems}", 500)) from e


def parse_config(text: str, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """Parse config text; `overrides` (command-line values) win over file values."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected `key = value`, got {raw.strip()!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return validate_config({**values, **(overrides or {})})


def load_config(path: Path, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(text, overrides)


def _render(value: Any) -> str:
    if isinstance(value, list):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse_config(dump_config(cfg)) == cfg."""
    lines = []
    for name in ExperimentConfig.model_fields:
        value = getattr(cfg, name)
        if value is None:
            continue
        lines.append(f"{name} = {_render(value)}")
    return "\n".join(lines) + "\n"
