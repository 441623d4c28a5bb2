"""Coarse completion stage: hierarchical point encoder, shared-weight
depth-map encoder, the view/point feature fusion that yields the global
shape code, and the decoder that regresses the first complete cloud.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import MLP, Conv2d, Linear, Module, SelfAttention, attention_core, _param
from .pointops import SetAbstraction, fps
from .projection import ViewSet
from .tensor import Tensor


class PointEncoder(Module):
    """Set-abstraction stack ending in one global feature vector."""

    def __init__(self, rng, cfg: ModelConfig):
        self.stages = []
        in_dim = 0
        for n_out, k, dims in cfg.point_sa:
            self.stages.append(SetAbstraction(rng, in_dim, tuple(dims),
                                              n_out=n_out, k=k))
            in_dim = dims[-1]
        self.out_dim = in_dim

    def __call__(self, points: np.ndarray, cache: Optional[dict] = None) -> Tensor:
        if points.shape[0] < 1:
            raise ValueError("encode_points: empty cloud")
        xyz, feats = points, None
        for i, stage in enumerate(self.stages):
            stage_cache = None if cache is None else cache.setdefault(f"sa{i}", {})
            xyz, feats = stage(xyz, feats, cache=stage_cache)
        return T.reshape(feats, (-1,))


class ViewEncoder(Module):
    """Shared-weight conv encoder: 4 strided 3x3 blocks, global average pool.

    Depth values are normalized by the far plane before the first block.
    """

    def __init__(self, rng, cfg: ModelConfig):
        chans = cfg.view_channels
        self.blocks = [Conv2d(rng, c_in, c_out)
                       for c_in, c_out in zip((1, *chans[:-1]), chans)]
        self.far_plane = cfg.view_distance + np.sqrt(3.0) * cfg.half_extent
        self.out_dim = chans[-1]

    def encode_one(self, depth: np.ndarray) -> Tensor:
        x = Tensor((depth / self.far_plane).astype(T.default_dtype())[None, :, :])
        for block in self.blocks:
            x = T.relu(block(x))
        c = x.shape[0]
        return T.mean_reduce(T.reshape(x, (c, -1)), axis=1)

    def __call__(self, views: ViewSet) -> Tensor:
        shapes = {m.depth.shape for m in views.maps}
        if len(shapes) != 1:
            raise ValueError(f"encode_views: depth maps disagree on resolution: {sorted(shapes)}")
        rows = [T.reshape(self.encode_one(m.depth), (1, -1)) for m in views.maps]
        return T.concat(rows, axis=0)


class ViewFusion(Module):
    """Attention over view tokens guided by the global point feature.

    Each view row is concatenated with the point feature, projected to
    q/k/v; a linear map of the camera position is added to q and k as the
    positional signal. The attended rows are max-pooled over views and
    concatenated with the point feature to form the shape code.
    """

    def __init__(self, rng, view_dim: int, point_dim: int, embed: int,
                 scale_logits: bool = False):
        tok = view_dim + point_dim
        self.wq = _param(rng, (tok, embed), tok)
        self.wk = _param(rng, (tok, embed), tok)
        self.wv = _param(rng, (tok, embed), tok)
        self.pos = Linear(rng, 3, embed)
        self.scale_logits = scale_logits
        self.out_dim = embed + point_dim
        self.last_weights: Optional[np.ndarray] = None

    def __call__(self, view_feats: Tensor, point_feat: Tensor, vp: np.ndarray) -> Tensor:
        n_views = view_feats.shape[0]
        if vp.shape[0] != n_views:
            raise T.ShapeError(
                f"feature_fusion: incompatible shapes {tuple(view_feats.shape)} vs {tuple(vp.shape)}")
        guide = T.reshape(point_feat, (1, -1))
        tokens = T.concat([view_feats, T.gather_rows(guide, np.zeros(n_views, dtype=np.int64))],
                          axis=1)
        pos = self.pos(Tensor(vp.astype(T.default_dtype())))
        q = T.matmul(tokens, self.wq) + pos
        k = T.matmul(tokens, self.wk) + pos
        v = T.matmul(tokens, self.wv)
        fused, weights = attention_core(q, k, v, self.scale_logits)
        self.last_weights = weights.data
        pooled = T.max_reduce(fused, axis=0)
        return T.concat([pooled, point_feat], axis=0)


class CoarseDecoder(Module):
    """Shape code -> point-wise features (1-D conv-transpose) -> coordinates.

    The conv-transpose kernel spans the whole output length, then a
    self-attention layer mixes the point features before the coordinate MLP.
    """

    def __init__(self, rng, code_dim: int, n_points: int, point_dim: int,
                 attn_dim: int, scale_logits: bool = False):
        self.kernel = _param(rng, (code_dim, point_dim, n_points), code_dim)
        self.lift = Linear(rng, point_dim, attn_dim)
        self.attn = SelfAttention(rng, attn_dim, scale_logits)
        self.head = MLP(rng, (attn_dim, attn_dim // 2, 3))
        self.n_points = n_points

    def __call__(self, shape_code: Tensor) -> Tensor:
        col = T.reshape(shape_code, (-1, 1))
        feats = T.transpose(T.conv_transpose_1d(col, self.kernel))
        x = self.attn(self.lift(feats))
        return self.head(x)


def merge_resample(coarse_pts: Tensor, partial: np.ndarray, n_out: int) -> Tensor:
    """Concatenate generated and input points, then FPS down to n_out.

    Every output row is one of the input rows; gradients flow to the
    generated points that survive the resampling.
    """
    total = coarse_pts.shape[0] + partial.shape[0]
    if n_out > total:
        raise ValueError(f"merge_resample: cannot keep {n_out} of {total} points")
    merged = T.concat([coarse_pts, Tensor(partial.astype(T.default_dtype()))], axis=0)
    keep = fps(merged.data, n_out)
    return T.gather_rows(merged, keep)
