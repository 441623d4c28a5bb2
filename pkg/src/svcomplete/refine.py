"""Dual-path refinement: upsample a coarse cloud by predicting per-point
coordinate offsets from two feature paths.

The structure-analysis path runs incompleteness-aware self-attention
over the coarse points (each point's nearest distance to the partial
input, scaled by 1/gamma, enters the q/k projections as a sinusoidal
embedding). The similarity-alignment path cross-attends the same
features against edge-conv features of the partial input so local
geometry can be copied from self-similar regions. Both are decoded,
concatenated, and regressed to r offsets per coarse point.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import AttentionDecoder, CrossAttention, Linear, MLP, Module, SelfAttention
from .pointops import EdgeConv, fps, knn, nearest_in_set
from .tensor import Tensor


def incompleteness_embedding(coarse_pts: Tensor, partial: np.ndarray,
                             gamma: float, channels: int) -> Tensor:
    """Sinusoidal embedding of each coarse point's distance to the partial input.

    Points coinciding with the partial input sit at position 0 and map to
    the row [0, 1, 0, 1, ...]; farther points get strictly larger positions.
    Differentiable in the coarse coordinates through the fixed nearest
    assignment.
    """
    if gamma <= 0:
        raise ValueError(f"incompleteness_embedding: gamma must be positive, got {gamma}")
    _, idx = nearest_in_set(coarse_pts.data, partial)
    anchor = Tensor(partial[idx].astype(coarse_pts.data.dtype))
    diff = coarse_pts - anchor
    dist = T.sqrt(T.sum_reduce(diff * diff, axis=1))
    return T.sinusoidal_encoding(dist * (1.0 / gamma), channels)


class StructureAnalysis(Module):
    """Incompleteness-aware self-attention over the coarse points, decoded."""

    def __init__(self, rng, code_dim: int, embed: int, decoder_dims,
                 gamma: float, scale_logits: bool = False):
        self.embed = Linear(rng, 3 + code_dim, embed)
        self.attn = SelfAttention(rng, embed, scale_logits)
        self.decoder = AttentionDecoder(rng, embed, decoder_dims, scale_logits)
        self.gamma = gamma
        self.width = embed

    def __call__(self, coarse_pts: Tensor, partial: np.ndarray,
                 shape_code: Tensor) -> tuple[Tensor, Tensor]:
        n = coarse_pts.shape[0]
        h = incompleteness_embedding(coarse_pts, partial, self.gamma, self.width)
        code_rows = T.gather_rows(T.reshape(shape_code, (1, -1)), np.zeros(n, dtype=np.int64))
        feats = self.embed(T.concat([coarse_pts, code_rows], axis=1))
        attended = self.attn(feats, qk_bias=h)
        return attended, self.decoder(attended)


class PartialFeatureExtractor(Module):
    """EdgeConv -> FPS -> EdgeConv features of the partial input.

    One instance is shared by both refinement stages, so the same input
    always yields the same features.
    """

    def __init__(self, rng, cfg: ModelConfig):
        (k1, dims1), n_mid, (k2, dims2) = cfg.partial_edgeconv
        self.ec1 = EdgeConv(rng, 3, tuple(dims1), k=k1)
        self.ec2 = EdgeConv(rng, dims1[-1], tuple(dims2), k=k2)
        self.n_mid = n_mid
        self.out_dim = dims2[-1]

    def __call__(self, partial: np.ndarray, cache: Optional[dict] = None) -> Tensor:
        if cache is not None and "nbr" in cache:
            nbr, keep = cache["nbr"], cache["keep"]
        else:
            nbr = knn(partial, partial, self.ec1.k).indices
            keep = fps(partial, min(self.n_mid, partial.shape[0]))
            if cache is not None:
                cache.update(nbr=nbr, keep=keep)
        feats = self.ec1(Tensor(partial.astype(T.default_dtype())), neighbor_idx=nbr)
        feats = T.gather_rows(feats, keep)
        return self.ec2(feats)


class SimilarityAlignment(Module):
    """Cross-attention from coarse-point features into partial-input features."""

    def __init__(self, rng, embed: int, ctx_dim: int, decoder_dims,
                 scale_logits: bool = False):
        self.attn = CrossAttention(rng, embed, ctx_dim, scale_logits)
        self.decoder = AttentionDecoder(rng, embed, decoder_dims, scale_logits)

    def __call__(self, feats: Tensor, partial_feats: Tensor) -> Tensor:
        return self.decoder(self.attn(feats, partial_feats))

    @property
    def last_weights(self) -> Optional[np.ndarray]:
        return self.attn.last_weights


class OffsetHead(Module):
    """Concatenated path features -> r coordinate offsets per coarse point.

    The regression layer starts near zero so refinement begins close to a
    pure r-fold upsampling while still passing gradients upstream.
    """

    def __init__(self, rng, path_dim: int, rate: int, point_dim: int, mlp_dims):
        self.up = Linear(rng, 2 * path_dim, rate * point_dim)
        self.head = MLP(rng, mlp_dims, final_scale=0.01)
        self.rate = rate
        self.point_dim = point_dim

    def __call__(self, structure_feats: Tensor, similarity_feats: Tensor) -> Tensor:
        n = structure_feats.shape[0]
        combined = T.concat([structure_feats, similarity_feats], axis=1)
        lifted = T.relu(self.up(combined))
        per_point = T.reshape(lifted, (n * self.rate, self.point_dim))
        return self.head(per_point)


class RefineStage(Module):
    """One refinement pass: offsets added onto the r-fold repeated parents."""

    def __init__(self, rng, cfg: ModelConfig, stage: int):
        rate = cfg.up_rates[stage]
        decoder_dims = cfg.decoder_dims(stage)
        self.structure = StructureAnalysis(rng, cfg.shape_code_dim, cfg.refine_embed,
                                           decoder_dims, cfg.gamma,
                                           cfg.scale_attention_logits)
        self.similarity = SimilarityAlignment(rng, cfg.refine_embed, cfg.partial_feat_dim,
                                              decoder_dims, cfg.scale_attention_logits)
        self.offsets = OffsetHead(rng, decoder_dims[-1], rate, cfg.refine_point_dim,
                                  cfg.offset_mlp_dims)
        self.rate = rate

    def __call__(self, prev_pts: Tensor, partial: np.ndarray, shape_code: Tensor,
                 partial_feats: Tensor) -> Tensor:
        attended, structure_feats = self.structure(prev_pts, partial, shape_code)
        similarity_feats = self.similarity(attended, partial_feats)
        offsets = self.offsets(structure_feats, similarity_feats)
        parents = T.gather_rows(prev_pts, np.repeat(np.arange(prev_pts.shape[0]), self.rate))
        return parents + offsets
