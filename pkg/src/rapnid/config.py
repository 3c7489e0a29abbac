"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # loss
    tau: float = 0.1
    alpha: float = 1.0
    omega: float = 2.0
    momentum: float = 0.9
    eps_dist: float = 1e-6
    use_apdl: bool = True
    use_mixup: bool = True
    # optimization
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 5e-2
    grad_clip: float = 5.0
    warmup_epochs: int = 5
    early_stop_patience: int = 20
    val_fraction: float = 0.1
    embed_dim: int = 32
    seed: int = 0
    # clustering; k is an int, "truth" (task's total classes) or "estimate"
    k: int | str = "truth"
    kmeans_n_init: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError("tau: must be > 0")
        if self.alpha <= 0:
            raise ConfigError("alpha: must be > 0")
        if self.omega < 0:
            raise ConfigError("omega: must be >= 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError("momentum: must lie in [0, 1]")
        if self.eps_dist <= 0:
            raise ConfigError("eps_dist: must be > 0")
        for name in ("epochs", "warmup_epochs", "early_stop_patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        for name in ("batch_size", "embed_dim", "kmeans_n_init"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate: must be >= 0")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip: must be >= 0 (0 disables clipping)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction: must lie in [0, 1)")
        if isinstance(self.k, str):
            if self.k not in ("truth", "estimate"):
                raise ConfigError(f"k: expected an integer, 'truth' or 'estimate', got {self.k!r}")
        elif self.k < 1:
            raise ConfigError("k: must be >= 1")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict, base: TrainConfig | None = None) -> TrainConfig:
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _coerce(key, raw, getattr(base, key))
        return dataclasses.replace(base, **parsed)

    @classmethod
    def from_file(cls, path, base: TrainConfig | None = None) -> TrainConfig:
        return cls.from_mapping(parse_config_text(Path(path).read_text()), base)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if key == "k":
            return raw if raw in ("truth", "estimate") else int(raw)
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw
