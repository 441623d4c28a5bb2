"""Evaluation metrics for completed point clouds: Chamfer distance
(L1 and L2 conventions), density-aware Chamfer, F-score at a distance
threshold, and minimal matching distance against a reference corpus.

Conventions, fixed here:
  chamfer L1 = 0.5 * (mean nearest distance X->Y + mean nearest Y->X)
  chamfer L2 = mean squared nearest X->Y + mean squared Y->X (no 0.5)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pointops import check_cloud, nearest_in_set

DCD_ALPHA = 1000.0
FSCORE_TAU = 0.01


def chamfer(x, y, variant: str = "l1", use_grid: bool = False) -> float:
    """Symmetric Chamfer distance between two non-empty clouds."""
    x = check_cloud(x, "x")
    y = check_cloud(y, "y")
    d_xy, _ = nearest_in_set(x, y, use_grid=use_grid)
    d_yx, _ = nearest_in_set(y, x, use_grid=use_grid)
    if variant == "l1":
        return 0.5 * (float(np.mean(d_xy)) + float(np.mean(d_yx)))
    if variant == "l2":
        return float(np.mean(d_xy * d_xy)) + float(np.mean(d_yx * d_yx))
    raise ValueError(f"chamfer: unknown variant {variant!r} (expected 'l1' or 'l2')")


def dcd(x, y, alpha: float = DCD_ALPHA) -> float:
    """Density-aware Chamfer distance, bounded in [0, 1].

    Each point is matched to its nearest neighbor on the other side; the
    exponential kernel discounts the match by how many query points chose
    the same target, so density mismatch is penalized.
    """
    if alpha <= 0:
        raise ValueError(f"dcd: alpha must be positive, got {alpha}")
    x = check_cloud(x, "x")
    y = check_cloud(y, "y")
    term_x = _dcd_side(x, y, alpha)
    term_y = _dcd_side(y, x, alpha)
    return 0.5 * (term_x + term_y)


def _dcd_side(src: np.ndarray, dst: np.ndarray, alpha: float) -> float:
    dist, idx = nearest_in_set(src, dst)
    counts = np.bincount(idx, minlength=dst.shape[0])
    n_match = counts[idx].astype(np.float64)
    kernel = np.exp(-alpha * dist.astype(np.float64) ** 2)
    return float(np.mean(1.0 - kernel / n_match))


def fscore(pred, gt, tau: float = FSCORE_TAU) -> float:
    """F1 of precision (pred within tau of gt) and recall (gt within tau of pred)."""
    if tau <= 0:
        raise ValueError(f"fscore: tau must be positive, got {tau}")
    pred = check_cloud(pred, "pred")
    gt = check_cloud(gt, "gt")
    d_pg, _ = nearest_in_set(pred, gt)
    d_gp, _ = nearest_in_set(gt, pred)
    precision = float(np.mean(d_pg < tau))
    recall = float(np.mean(d_gp < tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def mmd(outputs: Sequence, references: Sequence, variant: str = "l1") -> float:
    """Mean over outputs of the smallest Chamfer distance to any reference."""
    if len(outputs) == 0:
        raise ValueError("mmd: output list is empty")
    if len(references) == 0:
        raise ValueError("mmd: reference list is empty")
    best = [min(chamfer(out, ref, variant) for ref in references) for out in outputs]
    return float(np.mean(best))


@dataclass
class MetricReport:
    """Per-pair metric rows plus per-category means."""

    ids: list[str] = field(default_factory=list)
    rows: list[dict[str, float]] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)

    def add(self, pair_id: str, values: dict[str, float], category: str = "all") -> None:
        self.ids.append(pair_id)
        self.rows.append(values)
        self.categories.append(category)

    def mean(self) -> dict[str, float]:
        if not self.rows:
            return {}
        keys = self.rows[0].keys()
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}

    def by_category(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        if not self.rows:
            return out
        keys = self.rows[0].keys()
        for cat in sorted(set(self.categories)):
            rows = [r for r, c in zip(self.rows, self.categories) if c == cat]
            out[cat] = {k: float(np.mean([r[k] for r in rows])) for k in keys}
        return out


def evaluate_pair(pred, gt, dcd_alpha: float = DCD_ALPHA, tau: float = FSCORE_TAU) -> dict[str, float]:
    return {
        "cd_l1": chamfer(pred, gt, "l1"),
        "cd_l2": chamfer(pred, gt, "l2"),
        "dcd": dcd(pred, gt, dcd_alpha),
        "f1": fscore(pred, gt, tau),
    }
