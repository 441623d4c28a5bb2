"""Training: differentiable Chamfer losses over the three output stages,
the stepped learning-rate schedule, and a deterministic optimization
loop with incremental trace logging and resumable checkpoints.

Nearest-neighbor assignments inside the losses are recomputed each
forward pass and treated as fixed, giving the standard subgradient of
the min.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig, TrainConfig
from .data import SamplePair
from .errors import NumericalAbort
from .model import CompletionModel, render_views, save_model
from .pointops import fps, nearest_assignment
from .tensor import Adam, Tensor


def downsample_gt(gt: np.ndarray, n: int) -> np.ndarray:
    """FPS subset of the ground truth at the requested density."""
    if n > gt.shape[0]:
        raise ValueError(f"downsample_gt: target {n} exceeds cloud size {gt.shape[0]}")
    return gt[fps(gt, n)]


def chamfer_loss(pred: Tensor, target: np.ndarray, variant: str = "l1") -> Tensor:
    """Differentiable symmetric Chamfer distance to a fixed target cloud."""
    if variant not in ("l1", "l2"):
        raise ValueError(f"chamfer_loss: unknown variant {variant!r}")
    target = np.asarray(target)
    idx_pt = nearest_assignment(pred.data, target)
    idx_tp = nearest_assignment(target, pred.data)
    anchor = Tensor(target[idx_pt].astype(pred.data.dtype))
    diff_pt = pred - anchor
    sq_pt = T.sum_reduce(diff_pt * diff_pt, axis=1)
    matched = T.gather_rows(pred, idx_tp)
    diff_tp = Tensor(target.astype(pred.data.dtype)) - matched
    sq_tp = T.sum_reduce(diff_tp * diff_tp, axis=1)
    if variant == "l1":
        return (T.mean_reduce(T.sqrt(sq_pt)) + T.mean_reduce(T.sqrt(sq_tp))) * 0.5
    return T.mean_reduce(sq_pt) + T.mean_reduce(sq_tp)


def partial_matching_loss(pred: Tensor, partial: np.ndarray) -> Tensor:
    """One-sided loss: every input point must be covered by the prediction."""
    idx = nearest_assignment(partial, pred.data)
    matched = T.gather_rows(pred, idx)
    diff = Tensor(partial.astype(pred.data.dtype)) - matched
    return T.mean_reduce(T.sqrt(T.sum_reduce(diff * diff, axis=1)))


class GtCache:
    """FPS downsamples of ground-truth clouds, computed once per (pair, size)."""

    def __init__(self):
        self._store: dict[tuple[int, int], np.ndarray] = {}

    def get(self, key: int, gt: np.ndarray, n: int) -> np.ndarray:
        k = (key, n)
        if k not in self._store:
            self._store[k] = downsample_gt(gt, n)
        return self._store[k]


def total_loss(stages: dict[str, Tensor], gt: np.ndarray, variant: str = "l1",
               cache: Optional[GtCache] = None, cache_key: int = 0) -> Tensor:
    """CD(coarse) + CD(refine1) + CD(final), each against a matching-density gt."""
    terms = []
    for name in ("coarse", "refine1", "final"):
        pred = stages[name]
        if cache is not None:
            target = cache.get(cache_key, gt, pred.shape[0])
        else:
            target = downsample_gt(gt, pred.shape[0])
        terms.append(chamfer_loss(pred, target, variant))
    return terms[0] + terms[1] + terms[2]


def lr_at(epoch: int, tc: TrainConfig) -> float:
    return tc.lr * (tc.lr_decay ** (epoch // tc.lr_decay_every))


def train(model: CompletionModel, pairs: Sequence[SamplePair], run: RunConfig,
          out_dir, trace_path=None, start_step: int = 0,
          optimizer: Optional[Adam] = None) -> tuple[Adam, list[tuple[int, float, float]]]:
    """Run the optimization loop and save the final (resumable) checkpoint.

    Batches cycle the dataset in fixed index order; with the same seed,
    config, and starting state the loss trace is bit-reproducible.
    """
    tc = run.train
    params = model.named_parameters()
    if optimizer is None:
        optimizer = Adam([p for _, p in params], lr=tc.lr)
    steps_per_epoch = max(1, math.ceil(len(pairs) / tc.batch_size))
    total_steps = tc.steps if tc.steps is not None else tc.epochs * steps_per_epoch
    cache = GtCache()
    views = [render_views(p.partial, model.cfg) for p in pairs]
    geo_caches: list[dict] = [{} for _ in pairs]
    trace: list[tuple[int, float, float]] = []
    trace_fh = open(trace_path, "a") if trace_path is not None else None
    if trace_fh is not None and start_step == 0:
        trace_fh.write("step,loss,lr\n")
    try:
        for step in range(start_step, total_steps):
            epoch = step // steps_per_epoch
            lr = lr_at(epoch, tc)
            optimizer.zero_grad()
            batch = [(step * tc.batch_size + j) % len(pairs) for j in range(tc.batch_size)]
            losses = []
            for i in batch:
                pair = pairs[i]
                stages = model.forward(pair.partial, views[i], cache=geo_caches[i])
                loss = total_loss(stages, pair.complete, tc.cd_variant, cache, i)
                if tc.partial_matching:
                    loss = loss + partial_matching_loss(stages["final"], pair.partial)
                losses.append(loss)
            mean_loss = losses[0]
            for extra in losses[1:]:
                mean_loss = mean_loss + extra
            mean_loss = mean_loss / len(losses)
            value = mean_loss.item()
            if not np.isfinite(value):
                raise NumericalAbort(step, f"loss is {value}")
            mean_loss.backward()
            optimizer.step(lr=lr)
            trace.append((step, value, lr))
            if trace_fh is not None:
                trace_fh.write(f"{step},{value:.8g},{lr:.8g}\n")
                trace_fh.flush()
    finally:
        if trace_fh is not None:
            trace_fh.close()
    if out_dir is not None:
        save_model(out_dir, model, extras=optimizer_extras(optimizer, params,
                                                           step=total_steps))
    return optimizer, trace


def optimizer_extras(optimizer: Adam, named_params, step: int) -> dict[str, np.ndarray]:
    extras: dict[str, np.ndarray] = {}
    for (name, _), m, v in zip(named_params, optimizer.state.m, optimizer.state.v):
        extras[f"optim/m/{name}"] = m
        extras[f"optim/v/{name}"] = v
    extras["optim/t"] = np.array([float(optimizer.state.t)], dtype=np.float32)
    extras["meta/step"] = np.array([float(step)], dtype=np.float32)
    return extras


def restore_optimizer(model: CompletionModel, extras: dict[str, np.ndarray],
                      lr: float) -> tuple[Adam, int]:
    """Rebuild Adam state saved by optimizer_extras; returns (optimizer, next step)."""
    params = model.named_parameters()
    optimizer = Adam([p for _, p in params], lr=lr)
    for i, (name, p) in enumerate(params):
        m = extras.get(f"optim/m/{name}")
        v = extras.get(f"optim/v/{name}")
        if m is not None:
            optimizer.state.m[i] = m.astype(p.data.dtype)
        if v is not None:
            optimizer.state.v[i] = v.astype(p.data.dtype)
    optimizer.state.t = int(extras.get("optim/t", np.zeros(1))[0])
    step = int(extras.get("meta/step", np.zeros(1))[0])
    return optimizer, step
