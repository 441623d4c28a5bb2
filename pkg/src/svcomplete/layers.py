"""Network building blocks: parameter containers, linear/MLP layers,
attention layers following the transformer recipe used throughout the
pipeline (z = h + Linear(h), h = b + f, b = softmax(q k^T) (f W_V)),
and a strided 3x3 convolution for the depth-map encoder.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: walks attributes in insertion order to collect parameters."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if prefix else name
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _param(rng, shape, fan_in) -> Tensor:
    # parameters follow the ambient precision (float32 for training,
    # float64 under the gradient-checking context)
    return Tensor(kaiming_uniform(rng, shape, fan_in), requires_grad=True,
                  dtype=T.default_dtype())


def _zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=T.default_dtype())


class Linear(Module):
    """Dense layer. init_scale shrinks the starting weights; residual output
    branches use 0 (identity at start) and offset regressors use a small
    scale so refinement starts close to a pure upsampling but still passes
    gradients to everything upstream."""

    def __init__(self, rng, in_dim: int, out_dim: int, bias: bool = True,
                 init_scale: float = 1.0):
        if init_scale == 0.0:
            self.weight = _zeros_param((in_dim, out_dim))
        else:
            self.weight = _param(rng, (in_dim, out_dim), in_dim)
            if init_scale != 1.0:
                self.weight.data *= self.weight.data.dtype.type(init_scale)
        self.bias = _zeros_param(out_dim) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, rng, dims: Sequence[int], final_act: bool = False,
                 final_scale: float = 1.0):
        self.layers = [Linear(rng, dims[i], dims[i + 1],
                              init_scale=final_scale if i == len(dims) - 2 else 1.0)
                       for i in range(len(dims) - 1)]
        self.final_act = final_act

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_act:
                x = T.relu(x)
        return x


def attention_core(q: Tensor, k: Tensor, v: Tensor, scale: bool) -> tuple[Tensor, Tensor]:
    """softmax(q k^T) v; returns (output, row-stochastic weight matrix)."""
    logits = T.matmul(q, T.transpose(k))
    if scale:
        logits = logits * (1.0 / np.sqrt(q.shape[1]))
    weights = T.softmax(logits, axis=1)
    return T.matmul(weights, v), weights


class SelfAttention(Module):
    """Single-head self-attention with residual and output linear.

    An optional per-token bias (the incompleteness embedding) is added to
    the query and key projections before the logits; with a zero bias the
    layer reduces exactly to the vanilla form.
    """

    def __init__(self, rng, dim: int, scale_logits: bool = False):
        self.wq = _param(rng, (dim, dim), dim)
        self.wk = _param(rng, (dim, dim), dim)
        self.wv = _param(rng, (dim, dim), dim)
        self.out = Linear(rng, dim, dim, init_scale=0.0)
        self.scale_logits = scale_logits
        self.last_weights: Optional[np.ndarray] = None

    def __call__(self, f: Tensor, qk_bias: Optional[Tensor] = None) -> Tensor:
        q = T.matmul(f, self.wq)
        k = T.matmul(f, self.wk)
        v = T.matmul(f, self.wv)
        if qk_bias is not None:
            if qk_bias.shape != q.shape:
                raise T.ShapeError(
                    f"attention bias: incompatible shapes {tuple(qk_bias.shape)} vs {tuple(q.shape)}"
                )
            q = q + qk_bias
            k = k + qk_bias
        b, weights = attention_core(q, k, v, self.scale_logits)
        self.last_weights = weights.data
        h = b + f
        return h + self.out(h)


class CrossAttention(Module):
    """Queries from one feature set, keys/values from another."""

    def __init__(self, rng, q_dim: int, ctx_dim: int, scale_logits: bool = False):
        self.wq = _param(rng, (q_dim, q_dim), q_dim)
        self.wk = _param(rng, (ctx_dim, q_dim), ctx_dim)
        self.wv = _param(rng, (ctx_dim, q_dim), ctx_dim)
        self.out = Linear(rng, q_dim, q_dim, init_scale=0.0)
        self.scale_logits = scale_logits
        self.last_weights: Optional[np.ndarray] = None

    def __call__(self, f: Tensor, context: Tensor) -> Tensor:
        q = T.matmul(f, self.wq)
        k = T.matmul(context, self.wk)
        v = T.matmul(context, self.wv)
        b, weights = attention_core(q, k, v, self.scale_logits)
        self.last_weights = weights.data
        h = b + f
        return h + self.out(h)


class AttentionDecoder(Module):
    """Width-changing decoder: Linear projection, then self-attention, per stage."""

    def __init__(self, rng, in_dim: int, dims: Sequence[int], scale_logits: bool = False):
        self.projs = []
        self.attns = []
        prev = in_dim
        for d in dims:
            self.projs.append(Linear(rng, prev, d))
            self.attns.append(SelfAttention(rng, d, scale_logits))
            prev = d

    def __call__(self, x: Tensor) -> Tensor:
        for proj, attn in zip(self.projs, self.attns):
            x = attn(proj(x))
        return x


def _im2col_indices(h: int, w: int, k: int, stride: int, pad: int):
    """Flat indices into a zero-padded (h+2p, w+2p) image, one row per output
    pixel, k*k columns; padding cells point at a trailing sentinel zero."""
    hp, wp = h + 2 * pad, w + 2 * pad
    out_h = (hp - k) // stride + 1
    out_w = (wp - k) // stride + 1
    rows = np.arange(out_h) * stride
    cols = np.arange(out_w) * stride
    r0 = rows[:, None, None, None] + np.arange(k)[None, None, :, None]
    c0 = cols[None, :, None, None] + np.arange(k)[None, None, None, :]
    rr = np.broadcast_to(r0, (out_h, out_w, k, k)) - pad
    cc = np.broadcast_to(c0, (out_h, out_w, k, k)) - pad
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    flat = np.where(inside, rr * w + cc, h * w)
    return flat.reshape(out_h * out_w, k * k), out_h, out_w


class Conv2d(Module):
    """3x3-style strided convolution on a single (C, H, W) image via im2col."""

    def __init__(self, rng, in_ch: int, out_ch: int, k: int = 3, stride: int = 2, pad: int = 1):
        fan_in = in_ch * k * k
        # weight rows ordered to match im2col output: patch offset major, channel minor
        self.weight = _param(rng, (k * k * in_ch, out_ch), fan_in)
        self.bias = _zeros_param(out_ch)
        self.k = k
        self.stride = stride
        self.pad = pad
        self._idx_cache: dict[tuple[int, int], tuple] = {}

    def __call__(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        key = (h, w)
        if key not in self._idx_cache:
            self._idx_cache[key] = _im2col_indices(h, w, self.k, self.stride, self.pad)
        idx, out_h, out_w = self._idx_cache[key]
        flat = T.reshape(x, (c, h * w))
        padded = T.concat([flat, Tensor(np.zeros((c, 1), dtype=x.dtype))], axis=1)
        cols = T.gather_rows(T.transpose(padded), idx.reshape(-1))
        cols = T.reshape(cols, (out_h * out_w, self.k * self.k * c))
        y = T.linear(cols, self.weight, self.bias)
        return T.transpose(T.reshape(y, (out_h, out_w, -1)), (2, 0, 1))
