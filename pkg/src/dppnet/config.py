"""Run configuration: model dimensions, training schedule, paths, precision.

A resolved RunConfig is serialized into every checkpoint and output directory
so any run can be re-executed exactly from its artifacts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .hashing import DEFAULT_SEED_BUCKET, DEFAULT_SEED_SIGN, HashSpec
from .tensor import PRECISIONS

VARIANTS = ("dppnet", "concat", "cnn-fixed", "rand-gru")


@dataclass
class ModelConfig:
    variant: str = "dppnet"
    feature_dim: int | None = None  # adopted from data when None
    adapter_hidden: int = 96
    adapter_out: int = 64
    dyn_out: int = 32
    num_candidates: int = 512
    hidden_dim: int = 64
    embed_dim: int = 32
    num_answers: int | None = None  # adopted from data
    vocab_size: int | None = None  # adopted from data
    concat_hidden: int | None = None  # solved to match parameter counts when None
    gru_bias: bool = False
    seed_bucket: int = DEFAULT_SEED_BUCKET
    seed_sign: int = DEFAULT_SEED_SIGN
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        for name in ("adapter_hidden", "adapter_out", "dyn_out", "num_candidates",
                     "hidden_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def hash_spec(self) -> HashSpec:
        return HashSpec(
            out_dim=self.dyn_out,
            in_dim=self.adapter_out,
            num_candidates=self.num_candidates,
            seed_bucket=self.seed_bucket,
            seed_sign=self.seed_sign,
        )

    @property
    def resolved(self) -> bool:
        return None not in (self.feature_dim, self.num_answers, self.vocab_size)

    def require_resolved(self):
        if not self.resolved:
            raise ConfigError(
                "model config not resolved against data "
                "(feature_dim / num_answers / vocab_size missing)"
            )


@dataclass
class TrainSchedule:
    seed: int = 1
    max_epochs: int = 100
    patience: int = 5
    lr: float = 0.0015
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_threshold: float = 0.1
    batch_size: int = 32
    unfreeze_patience: int = 3
    overfit_gap: float = 0.30
    overfit_epochs: int = 2

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.clip_threshold <= 0:
            raise ConfigError("clip threshold must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 (batch norm needs 2 rows)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    precision: str = "f64"
    pretrained_encoder: str | None = None
    pretrained_policy: str = "optional"  # none | optional | required

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}")
        if self.pretrained_policy not in ("none", "optional", "required"):
            raise ConfigError("pretrained_policy must be none, optional or required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        model = ModelConfig(**data.pop("model", {}))
        train = TrainSchedule(**data.pop("train", {}))
        unknown = set(data) - {"precision", "pretrained_encoder", "pretrained_policy"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=model, train=train, **data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (TypeError, json.JSONDecodeError) as e:
            raise ConfigError(f"config file {path} invalid: {e}") from e

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def with_overrides(self, *, seed=None, precision=None, variant=None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, train=replace(out.train, seed=seed))
        if precision is not None:
            out = replace(out, precision=precision)
        if variant is not None:
            out = replace(out, model=replace(out.model, variant=variant))
        return out
