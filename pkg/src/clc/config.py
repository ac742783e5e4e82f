"""Run configuration: every knob the CLI and pipeline read, loaded from JSON."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .dialogue.injection import InjectionConfig
from .dialogue.sessions import SessionBuilderConfig
from .errors import ParseError
from .losses import LossConfig
from .tensor import MODES


@dataclass(frozen=True)
class RunConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    session: SessionBuilderConfig = field(default_factory=SessionBuilderConfig)
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    similarity_threshold: float = 0.9
    deletion_threshold: float = 0.5
    seed: int = 0
    mode: str = "verify"
    head_dim: int = 8
    hidden_dim: int | None = None
    dropout_rate: float = 0.1
    chunk_size: int | None = None
    mask_future: bool = False
    inject: bool = True
    l_asr: float = 0.0
    heads_checkpoint: str | None = None
    semantic_table: str | None = None
    rephrase_table: str | None = None
    input: str | None = None
    output: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParseError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ParseError("similarity_threshold must be in (0, 1]")
        if self.head_dim < 1:
            raise ParseError("head_dim must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        try:
            if "loss" in data:
                data["loss"] = LossConfig.from_dict(data["loss"])
            if "session" in data:
                data["session"] = SessionBuilderConfig(**data["session"])
            if "injection" in data:
                data["injection"] = InjectionConfig(**data["injection"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        cfg = cls.from_dict(data)
        # relative paths inside a config file resolve against that file
        base = os.path.dirname(os.path.abspath(path))
        updates = {}
        for name in ("heads_checkpoint", "semantic_table", "rephrase_table", "input", "output"):
            value = getattr(cfg, name)
            if value is not None and not os.path.isabs(value):
                updates[name] = os.path.join(base, value)
        return replace(cfg, **updates)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = self.loss.to_dict()
        out["injection"]["error_response_pool"] = list(self.injection.error_response_pool)
        return out

    def with_overrides(self, **overrides) -> "RunConfig":
        cfg = replace(self, **{k: v for k, v in overrides.items() if v is not None})
        # the global seed drives every stochastic step
        return replace(cfg, injection=replace(cfg.injection, rng_seed=cfg.seed))
