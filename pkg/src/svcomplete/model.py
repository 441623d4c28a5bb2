"""The full completion network: coarse stage followed by two refinement
stages, plus checkpoint glue and the end-to-end completion entry point.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .coarse import CoarseDecoder, PointEncoder, ViewEncoder, ViewFusion, merge_resample
from .config import ModelConfig, model_config_from_dict, model_config_to_dict
from .errors import DataError
from .layers import Module
from .projection import ViewSet, default_fov_deg, orthogonal_viewpoints, project_all
from .refine import PartialFeatureExtractor, RefineStage
from .tensor import Tensor


class CompletionModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.point_encoder = PointEncoder(rng, cfg)
        self.view_encoder = ViewEncoder(rng, cfg)
        self.fusion = ViewFusion(rng, self.view_encoder.out_dim, self.point_encoder.out_dim,
                                 cfg.fusion_embed, cfg.scale_attention_logits)
        self.coarse = CoarseDecoder(rng, cfg.shape_code_dim, cfg.n_coarse,
                                    cfg.coarse_point_dim, cfg.coarse_attn_dim,
                                    cfg.scale_attention_logits)
        self.partial_feats = PartialFeatureExtractor(rng, cfg)
        self.refine1 = RefineStage(rng, cfg, 0)
        self.refine2 = RefineStage(rng, cfg, 1)
        self.cfg = cfg

    def forward(self, partial: np.ndarray, views: ViewSet,
                cache: Optional[dict] = None) -> dict[str, Tensor]:
        """All pipeline stages for one prepared (n_input, 3) partial cloud.

        `cache`, when given, holds the input-dependent grouping geometry
        (FPS picks, neighbor indices) so repeated passes over the same
        cloud skip recomputing it.
        """
        cfg = self.cfg
        partial = np.ascontiguousarray(partial, dtype=np.float32)
        point_feat = self.point_encoder(
            partial, cache=None if cache is None else cache.setdefault("points", {}))
        view_feats = self.view_encoder(views)
        shape_code = self.fusion(view_feats, point_feat, views.vp)
        coarse_pts = self.coarse(shape_code)
        merged = merge_resample(coarse_pts, partial, cfg.n_merged)
        feats_in = self.partial_feats(
            partial, cache=None if cache is None else cache.setdefault("partial", {}))
        refined1 = self.refine1(merged, partial, shape_code, feats_in)
        refined2 = self.refine2(refined1, partial, shape_code, feats_in)
        return {"coarse": coarse_pts, "merged": merged,
                "refine1": refined1, "final": refined2}

    def attention_dumps(self) -> dict[str, np.ndarray]:
        """Cross-attention weight matrices of the two refinement stages."""
        dumps = {}
        for name, stage in (("stage1", self.refine1), ("stage2", self.refine2)):
            w = stage.similarity.last_weights
            if w is not None:
                dumps[f"cross_attn_{name}"] = w
        return dumps


def prepare_input(points: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Pad by random duplication or take a random subset to hit exactly n points."""
    rng = np.random.default_rng(seed)
    count = points.shape[0]
    if count == n:
        return points
    if count > n:
        keep = np.sort(rng.choice(count, size=n, replace=False))
        return points[keep]
    extra = rng.integers(0, count, size=n - count)
    return np.concatenate([points, points[extra]], axis=0)


def render_views(cloud: np.ndarray, cfg: ModelConfig) -> ViewSet:
    fov = cfg.fov_deg if cfg.fov_deg is not None else default_fov_deg(cfg.half_extent,
                                                                      cfg.view_distance)
    views = orthogonal_viewpoints(cfg.view_distance)[: cfg.n_views]
    return project_all(cloud, views, cfg.view_res, fov)


def complete_cloud(model: CompletionModel, raw_points: np.ndarray,
                   seed: int = 0) -> dict[str, np.ndarray]:
    """Prepare the input, self-project it, run the network; numpy outputs."""
    partial = prepare_input(raw_points, model.cfg.n_input, seed=seed)
    views = render_views(partial, model.cfg)
    with T.no_grad():
        stages = model.forward(partial, views)
    return {k: v.data.copy() for k, v in stages.items()}


# -- persistence --------------------------------------------------------------


def save_model(directory, model: CompletionModel,
               extras: Optional[dict[str, np.ndarray]] = None) -> None:
    named = {name: p.data for name, p in model.named_parameters()}
    if extras:
        named.update(extras)
    save_checkpoint(directory, named)
    with open(Path(directory) / "config.json", "w") as fh:
        json.dump(model_config_to_dict(model.cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(directory) -> tuple[CompletionModel, dict[str, np.ndarray]]:
    """Rebuild the model from config.json and stored weights.

    Returns the model and any non-parameter entries (optimizer state etc.).
    """
    directory = Path(directory)
    cfg_path = directory / "config.json"
    if not cfg_path.exists():
        raise DataError(f"checkpoint {directory}: missing config.json")
    with open(cfg_path) as fh:
        cfg = model_config_from_dict(json.load(fh))
    model = CompletionModel(cfg, seed=0)
    stored = load_checkpoint(directory)
    extras: dict[str, np.ndarray] = {}
    params = dict(model.named_parameters())
    for name, arr in stored.items():
        if name in params:
            target = params[name]
            if tuple(arr.shape) != tuple(target.shape):
                raise DataError(
                    f"checkpoint {directory}: {name} has shape {arr.shape}, expected {tuple(target.shape)}")
            target.data = arr.astype(target.data.dtype)
        else:
            extras[name] = arr
    missing = set(params) - set(stored)
    if missing:
        raise DataError(f"checkpoint {directory}: missing parameters {sorted(missing)[:3]}...")
    return model, extras
