"""Run configuration: flat key=value files plus command-line overrides.

Every key has a default; unknown keys are rejected.  Booleans accept
true/false/1/0/yes/no.  Lines starting with '#' and blank lines are
ignored.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, fields

from .errors import ConfigError
from .forecaster import ModelConfig
from .transforms import TRANSFORM_KINDS


@dataclass(frozen=True)
class RunConfig:
    regions: str = ""
    panel: str = ""
    out: str = "stcast-out"
    alpha: float = 1.0
    post_onset_date: str = ""
    target_transform: str = "log1p-standardize"
    distribution: str = "gaussian"
    hidden_size: int = 32
    num_layers: int = 2
    context_len: int = 25
    horizon: int = 5
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 64
    grad_clip: float = 5.0
    num_samples: int = 100
    seed: int = 0
    no_spatial: bool = False
    no_factors: bool = False

    def __post_init__(self):
        if self.target_transform not in TRANSFORM_KINDS:
            raise ConfigError(
                f"target_transform must be one of {TRANSFORM_KINDS}, "
                f"got {self.target_transform!r}"
            )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_size=self.hidden_size,
            num_layers=self.num_layers,
            distribution=self.distribution,
            context_len=self.context_len,
            horizon=self.horizon,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            grad_clip=self.grad_clip,
            num_samples=self.num_samples,
            seed=self.seed,
            batch_size=self.batch_size,
        )

    def onset_date(self) -> dt.date:
        if not self.post_onset_date:
            raise ConfigError("post_onset_date is required")
        try:
            return dt.date.fromisoformat(self.post_onset_date)
        except ValueError:
            raise ConfigError(
                f"cannot parse post_onset_date '{self.post_onset_date}' "
                "(expected YYYY-MM-DD)"
            ) from None

    def items(self) -> list[tuple[str, str]]:
        return [(f.name, str(getattr(self, f.name))) for f in fields(self)]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key '{key}': cannot parse boolean '{raw}'")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse {kind} '{raw}'") from None
    return raw


def parse_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got '{stripped}'"
                )
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = _coerce(key, raw)
    return values


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge file values with overrides (overrides win)."""
    values = parse_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    return RunConfig(**values)
