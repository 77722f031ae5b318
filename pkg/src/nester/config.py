"""Dataclass configs for data generation and the three training stages,
plus flat key=value config file io."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    # structured SVM stage
    lambda_reg: float = 1e-4
    eta_cst: float = 0.05  # decayed by 1/sqrt(step)
    epochs_cst: int = 1
    # end-to-end fine-tuning stage
    eta_ft: float = 1e-4
    epochs_ft: int = 1
    update_structured_in_ft: bool = True
    # return the running average of the structured iterates instead of the
    # last one; single-epoch stochastic subgradient is noisy without it
    average_iterates: bool = True
    # shared
    mode: str = "soft"  # hard | soft relaxation of the network output
    seed: int = 0
    # glyph pretraining stage
    epochs_pretrain: int = 30
    batch_size: int = 64
    eta_pretrain: float = 1e-3
    # stage gates
    run_cst: bool = True
    run_finetune: bool = True

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        # zero is allowed for the step sizes: a frozen pass still emits records
        for name in ("eta_cst", "eta_ft"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.eta_pretrain <= 0:
            raise ConfigError(f"eta_pretrain must be > 0, got {self.eta_pretrain}")
        if self.mode not in ("hard", "soft"):
            raise ConfigError(f"mode must be 'hard' or 'soft', got {self.mode!r}")

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


def _parse_value(raw: str, kind):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def load_config(path) -> TrainConfig:
    """Read a flat key=value file; '#' starts a comment."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    pytypes = {"float": float, "int": int, "bool": bool, "str": str}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(raw, pytypes[kinds[key]])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
    return TrainConfig(**values)


def save_config(config: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        for f in fields(TrainConfig):
            fh.write(f"{f.name}={getattr(config, f.name)}\n")
