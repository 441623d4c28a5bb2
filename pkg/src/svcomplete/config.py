"""Model and training configuration.

Three named profiles bundle every constant: "pcn" and "shapenet55"
carry the published settings (projection distance 0.7/1.5 at 224x224,
merged cloud 512/1024, upsampling rates {4,8}/{2,4}, lr 1e-4 decayed by
0.7 every 40 epochs resp. 0.98 every 2); "desk" is a scaled-down profile
sized so training runs in minutes on one CPU core.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Optional


class ConfigError(ValueError):
    """Bad profile name, unknown key, or a value violating a precondition."""


@dataclass(frozen=True)
class ModelConfig:
    profile: str
    half_extent: float
    n_input: int
    n_gt: int
    n_views: int
    view_res: int
    view_distance: float
    fov_deg: Optional[float]  # None -> derived from half_extent/distance
    view_channels: tuple
    point_sa: tuple  # ((n_out, k, mlp_dims) ..., final entry n_out=None for global)
    fusion_embed: int
    n_coarse: int
    n_merged: int
    coarse_point_dim: int
    coarse_attn_dim: int
    partial_edgeconv: tuple  # ((k1, dims1), fps_to, (k2, dims2))
    refine_embed: int
    refine_decoder_hidden: tuple  # per refine stage: tuple of hidden attention widths
    refine_point_dim: int
    up_rates: tuple
    gamma: float = 0.2
    scale_attention_logits: bool = False

    @property
    def point_feat_dim(self) -> int:
        return self.point_sa[-1][2][-1]

    @property
    def shape_code_dim(self) -> int:
        return self.fusion_embed + self.point_feat_dim

    @property
    def partial_feat_dim(self) -> int:
        return self.partial_edgeconv[2][1][-1]

    def decoder_dims(self, stage: int) -> tuple:
        return (*self.refine_decoder_hidden[stage],
                self.refine_point_dim * self.up_rates[stage])

    @property
    def offset_mlp_dims(self) -> tuple:
        return (self.refine_point_dim, max(self.refine_point_dim // 2, 8), 3)

    @property
    def n_final(self) -> int:
        n = self.n_merged
        for r in self.up_rates:
            n *= r
        return n

    def validate(self) -> "ModelConfig":
        if self.n_views < 1:
            raise ConfigError("n_views must be >= 1")
        if self.view_res < 8:
            raise ConfigError("view_res must be >= 8")
        if self.view_distance <= 0:
            raise ConfigError("view_distance must be positive")
        if self.fov_deg is not None and not (0 < self.fov_deg < 180):
            raise ConfigError("fov_deg must be in (0, 180)")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if any(r < 1 for r in self.up_rates) or len(self.up_rates) != 2:
            raise ConfigError("up_rates must be two factors >= 1")
        if self.n_coarse < 1 or self.n_merged < 1:
            raise ConfigError("n_coarse and n_merged must be >= 1")
        if self.n_merged > self.n_coarse + self.n_input:
            raise ConfigError("n_merged cannot exceed n_coarse + n_input")
        if self.refine_embed % 2 != 0:
            raise ConfigError("refine_embed must be even (sinusoidal channel pairs)")
        return self


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 1.0
    lr_decay_every: int = 40  # epochs
    batch_size: int = 4
    epochs: int = 250
    steps: Optional[int] = None  # cap on optimizer steps; None -> epochs decide
    cd_variant: str = "l1"
    partial_matching: bool = False
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.cd_variant not in ("l1", "l2"):
            raise ConfigError("cd_variant must be 'l1' or 'l2'")
        return self


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    seed: int = 0


_PCN = ModelConfig(
    profile="pcn",
    half_extent=0.5,
    n_input=2048,
    n_gt=16384,
    n_views=3,
    view_res=224,
    view_distance=0.7,
    fov_deg=None,
    view_channels=(32, 64, 128, 256),
    point_sa=((512, 16, (64, 128)), (128, 16, (128, 256)), (None, 1, (512, 256))),
    fusion_embed=256,
    n_coarse=512,
    n_merged=512,
    coarse_point_dim=128,
    coarse_attn_dim=512,
    partial_edgeconv=((16, (64,)), 512, (8, (256,))),
    refine_embed=256,
    refine_decoder_hidden=((768,), (512,)),
    refine_point_dim=128,
    up_rates=(4, 8),
)

_SHAPENET55 = ModelConfig(
    profile="shapenet55",
    half_extent=1.0,
    n_input=2048,
    n_gt=8192,
    n_views=3,
    view_res=224,
    view_distance=1.5,
    fov_deg=None,
    view_channels=(32, 64, 128, 256),
    point_sa=((512, 16, (64, 128)), (128, 16, (128, 256)), (None, 1, (512, 256))),
    fusion_embed=256,
    n_coarse=1024,
    n_merged=1024,
    coarse_point_dim=128,
    coarse_attn_dim=512,
    partial_edgeconv=((16, (64,)), 512, (8, (256,))),
    refine_embed=256,
    refine_decoder_hidden=((), ()),  # one attention layer per decoder
    refine_point_dim=128,
    up_rates=(2, 4),
)

_DESK = ModelConfig(
    profile="desk",
    half_extent=0.5,
    n_input=512,
    n_gt=2048,
    n_views=3,
    view_res=64,
    view_distance=0.7,
    fov_deg=None,
    view_channels=(16, 32, 64, 128),
    point_sa=((128, 8, (32, 64)), (32, 8, (64, 128)), (None, 1, (128, 128))),
    fusion_embed=128,
    n_coarse=128,
    n_merged=128,
    coarse_point_dim=64,
    coarse_attn_dim=128,
    partial_edgeconv=((8, (32,)), 128, (8, (64,))),
    refine_embed=64,
    refine_decoder_hidden=((128,), (128,)),
    refine_point_dim=64,
    up_rates=(2, 2),
)

PROFILES = {"pcn": _PCN, "shapenet55": _SHAPENET55, "desk": _DESK}

_TRAIN_DEFAULTS = {
    "pcn": TrainConfig(lr=1e-4, lr_decay=0.7, lr_decay_every=40, batch_size=12,
                       epochs=400, cd_variant="l1"),
    "shapenet55": TrainConfig(lr=1e-4, lr_decay=0.98, lr_decay_every=2, batch_size=16,
                              epochs=300, cd_variant="l2", partial_matching=True),
    "desk": TrainConfig(lr=1e-4, lr_decay=1.0, lr_decay_every=40, batch_size=4,
                        epochs=250, cd_variant="l1"),
}


def profile(name: str) -> ModelConfig:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def train_defaults(name: str) -> TrainConfig:
    profile(name)
    return _TRAIN_DEFAULTS[name]


_MODEL_OVERRIDES = {
    "n_views", "view_res", "view_distance", "fov_deg", "up_rates", "n_coarse",
    "n_merged", "n_input", "n_gt", "gamma", "scale_attention_logits",
}
_TRAIN_OVERRIDES = {f.name for f in fields(TrainConfig)}


def _apply(section: dict, base, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    coerced = dict(section)
    for key in ("up_rates",):
        if key in coerced:
            coerced[key] = tuple(coerced[key])
    return replace(base, **coerced)


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from parsed JSON; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - {"profile", "seed", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {sorted(unknown)}")
    name = raw.get("profile", "desk")
    model = profile(name)
    train = train_defaults(name)
    if "model" in raw:
        model = _apply(raw["model"], model, _MODEL_OVERRIDES, "model")
    if "train" in raw:
        train = _apply(raw["train"], train, _TRAIN_OVERRIDES, "train")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    train = replace(train, seed=seed)
    return RunConfig(model=model.validate(), train=train.validate(), seed=seed)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
    return run_config_from_dict(raw)


def model_config_to_dict(cfg: ModelConfig) -> dict:
    out = {}
    for f in fields(ModelConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = _tuple_to_list(value)
        out[f.name] = value
    return out


def model_config_from_dict(raw: dict) -> ModelConfig:
    names = {f.name for f in fields(ModelConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in model config: {sorted(unknown)}")
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in raw:
            raise ConfigError(f"model config missing key {f.name!r}")
        value = raw[f.name]
        if isinstance(value, list):
            value = _list_to_tuple(value)
        kwargs[f.name] = value
    return ModelConfig(**kwargs).validate()


def _tuple_to_list(value):
    return [_tuple_to_list(v) if isinstance(v, tuple) else v for v in value]


def _list_to_tuple(value):
    return tuple(_list_to_tuple(v) if isinstance(v, list) else v for v in value)
