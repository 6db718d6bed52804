"""Experiment configuration schema; every field has the attack's published default."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SbmSpec(_Strict):
    blocks: int = Field(2, ge=1)
    nodes_per_block: int = Field(20, ge=2)
    p_in: float = Field(0.5, ge=0, le=1)
    p_out: float = Field(0.02, ge=0, le=1)
    feature_noise: float = Field(1.0, ge=0)


class DatasetSpec(_Strict):
    path: Optional[str] = None
    sbm: Optional[SbmSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.sbm is None):
            raise ValueError("dataset needs exactly one of 'path' or 'sbm'")
        return self


class DpSpec(_Strict):
    clip_norm: float = Field(10.0, gt=0)
    noise_multiplier: Optional[float] = Field(None, ge=0)
    target_epsilon: Optional[float] = Field(None, gt=0)
    delta: float = Field(1e-5, gt=0, lt=1)
    iterations: int = Field(200, ge=0)

    @model_validator(mode="after")
    def _one_noise(self):
        if (self.noise_multiplier is None) == (self.target_epsilon is None):
            raise ValueError("dp needs exactly one of 'noise_multiplier' or 'target_epsilon'")
        return self


class TargetSpec(_Strict):
    epochs: int = Field(200, ge=1)
    lr: float = Field(0.01, gt=0)
    hidden: int = Field(16, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    patience: Optional[int] = Field(20, ge=1)
    train_fraction: float = Field(0.1, gt=0, lt=1)
    val_fraction: float = Field(0.2, gt=0, lt=1)
    penultimate: Literal["propagated", "hidden"] = "propagated"
    # load this model instead of training (only valid without a defense)
    checkpoint: Optional[str] = None


class RlSpec(_Strict):
    gamma: float = Field(0.95, gt=0, lt=1)
    max_edges: Optional[int] = Field(None, ge=1)
    target_update: int = Field(10, ge=1)
    episodes: int = Field(10, ge=1)
    eps_start: float = Field(1.0, ge=0, le=1)
    eps_end: float = Field(0.05, ge=0, le=1)
    buffer_capacity: int = Field(10_000, ge=1)
    batch_size: int = Field(64, ge=1)
    embed_dim: int = Field(64, ge=1)
    q_hidden: int = Field(64, ge=1)
    lr: float = Field(0.01, gt=0)
    reward_scope: Literal["known", "all"] = "known"


class AttackSpec(_Strict):
    method: Literal["graphmi", "ge", "rl"] = "graphmi"
    alpha: float = Field(0.001, ge=0)
    beta: float = Field(0.0001, ge=0)
    lr: float = Field(0.1, gt=0)
    iterations: int = Field(100, ge=0)
    trials: int = Field(20, ge=1)
    label_fraction: float = Field(1.0, gt=0, le=1)
    use_gae: bool = True
    degree_eps: float = Field(1.0, gt=0)
    density: Optional[float] = Field(None, gt=0, le=1)
    mu: float = Field(0.01, gt=0)
    q: int = Field(100, ge=1)
    rl: RlSpec = RlSpec()


class DefenseSpec(_Strict):
    strategy: Literal["none", "dp", "rewire", "add", "flip"] = "none"
    p: Optional[float] = Field(None, gt=0, le=1)
    sweep: list[float] = []
    dp: Optional[DpSpec] = None

    @model_validator(mode="after")
    def _check(self):
        if self.strategy == "none" and (self.sweep or self.p is not None):
            raise ValueError("defense parameters given without a strategy")
        if self.strategy == "dp" and self.dp is None:
            raise ValueError("strategy 'dp' needs a 'dp' section")
        if self.strategy in ("rewire", "flip", "add") and self.p is None and not self.sweep:
            raise ValueError(f"strategy {self.strategy!r} needs 'p' or 'sweep'")
        for v in self.sweep:
            if self.strategy == "dp":
                if v <= 0:
                    raise ValueError("dp sweep values are target epsilons and must be positive")
            elif not 0 < v <= 1:
                raise ValueError(f"sweep value {v} outside (0, 1]")
        return self

    def points(self) -> list[Optional[float]]:
        if self.strategy == "none":
            return [None]
        if self.sweep:
            return list(self.sweep)
        return [self.p]


class EvalSpec(_Strict):
    graph_stats: bool = True
    influence: bool = False
    quantiles: int = Field(5, ge=2)
    embedding_baseline: bool = True


class ExperimentConfig(_Strict):
    dataset: DatasetSpec
    target: TargetSpec = TargetSpec()
    attack: AttackSpec = AttackSpec()
    defense: DefenseSpec = DefenseSpec()
    eval: EvalSpec = EvalSpec()
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    output_dir: str = "runs/experiment"

    @model_validator(mode="after")
    def _checkpoint_without_defense(self):
        if self.target.checkpoint is not None and self.defense.strategy != "none":
            raise ValueError("a fixed checkpoint cannot be combined with a training-time defense")
        return self


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(json.loads(Path(path).read_text()))


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Return a validated copy with dotted-path values replaced (``attack.rl.gamma`` style)."""
    data = cfg.model_dump()
    for dotted, value in overrides.items():
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            if node.get(k) is None:
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return ExperimentConfig.model_validate(data)


def numeric_fields(model: type[BaseModel] = ExperimentConfig, prefix: str = "") -> dict[str, type]:
    """Dotted path -> python type for every int/float leaf of the schema."""
    out: dict[str, type] = {}
    for name, info in model.model_fields.items():
        ann = info.annotation
        args = getattr(ann, "__args__", ())
        inner = next((a for a in args if a is not type(None)), ann) if args else ann
        path = f"{prefix}{name}"
        if isinstance(inner, type) and issubclass(inner, BaseModel):
            out.update(numeric_fields(inner, path + "."))
        elif inner in (int, float):
            out[path] = inner
    return out
