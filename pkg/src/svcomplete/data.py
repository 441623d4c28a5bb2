"""ASCII .xyz cloud files and the synthetic desk-scale dataset.

Each sample pair is a parametric primitive surface (sphere, cylinder,
box frame, two-plane chair) sampled to the profile's ground-truth size;
the partial input removes the points inside a random half-space or view
cone so that 25-75% survive, then resamples to the input size.
Everything is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import DataError

CATEGORIES = ("sphere", "cylinder", "box_frame", "chair")


# -- xyz files ----------------------------------------------------------------


def read_xyz(path) -> np.ndarray:
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                points.append([float(p) for p in parts])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not a number: {text!r}") from None
    if not points:
        raise DataError(f"{path}: no points")
    return np.asarray(points, dtype=np.float64)


def write_xyz(path, points: np.ndarray) -> None:
    # repr gives the shortest string that parses back to the same float,
    # so write/read round trips are value-exact
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        for x, y, z in points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


# -- primitive surfaces -------------------------------------------------------


def _unit(rng, n=3):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def _sample_sphere(rng, n, radius):
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * radius


def _sample_cylinder(rng, n, radius, half_h):
    lateral = 2.0 * np.pi * radius * 2.0 * half_h
    cap = np.pi * radius * radius
    probs = np.array([lateral, cap, cap])
    probs /= probs.sum()
    which = rng.choice(3, size=n, p=probs)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    on_side = which == 0
    pts[on_side, 0] = radius * np.cos(ang[on_side])
    pts[on_side, 2] = radius * np.sin(ang[on_side])
    pts[on_side, 1] = rng.uniform(-half_h, half_h, size=int(on_side.sum()))
    for cap_id, y in ((1, half_h), (2, -half_h)):
        m = which == cap_id
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=int(m.sum())))
        pts[m, 0] = r * np.cos(ang[m])
        pts[m, 2] = r * np.sin(ang[m])
        pts[m, 1] = y
    return pts


def _sample_box_frame(rng, n, half_sides):
    a, b, c = half_sides
    corners = np.array([[sx * a, sy * b, sz * c]
                        for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    edges = []
    for i in range(8):
        for j in range(i + 1, 8):
            if np.sum(corners[i] != corners[j]) == 1:
                edges.append((corners[i], corners[j]))
    lengths = np.array([np.linalg.norm(e1 - e0) for e0, e1 in edges])
    which = rng.choice(len(edges), size=n, p=lengths / lengths.sum())
    t = rng.uniform(0.0, 1.0, size=n)
    starts = np.stack([edges[w][0] for w in which])
    ends = np.stack([edges[w][1] for w in which])
    return starts + t[:, None] * (ends - starts)


def _sample_chair(rng, n, half_w, half_d, back_h):
    seat_area = (2 * half_w) * (2 * half_d)
    back_area = (2 * half_w) * back_h
    p_seat = seat_area / (seat_area + back_area)
    on_seat = rng.uniform(size=n) < p_seat
    pts = np.empty((n, 3))
    k = int(on_seat.sum())
    pts[on_seat, 0] = rng.uniform(-half_w, half_w, size=k)
    pts[on_seat, 1] = 0.0
    pts[on_seat, 2] = rng.uniform(-half_d, half_d, size=k)
    m = n - k
    pts[~on_seat, 0] = rng.uniform(-half_w, half_w, size=m)
    pts[~on_seat, 1] = rng.uniform(0.0, back_h, size=m)
    pts[~on_seat, 2] = -half_d
    pts[:, 1] -= back_h / 2.0  # recenter vertically
    return pts


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def sample_surface(category: str, rng: np.random.Generator, n: int, half_extent: float) -> np.ndarray:
    scale = half_extent * rng.uniform(0.55, 0.9)
    if category == "sphere":
        pts = _sample_sphere(rng, n, scale)
    elif category == "cylinder":
        pts = _sample_cylinder(rng, n, scale * rng.uniform(0.35, 0.6), scale)
    elif category == "box_frame":
        pts = _sample_box_frame(rng, n, scale * rng.uniform(0.5, 1.0, size=3))
    elif category == "chair":
        pts = _sample_chair(rng, n, scale * rng.uniform(0.6, 1.0), scale * rng.uniform(0.5, 0.9),
                            scale * rng.uniform(0.9, 1.4))
    else:
        raise ValueError(f"unknown category {category!r}")
    return pts @ _rot_y(rng.uniform(0.0, 2.0 * np.pi)).T


# -- occlusion ----------------------------------------------------------------


def occlude(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Keep an exact 25-75% fraction outside a random half-space or view cone."""
    n = points.shape[0]
    keep = int(round(n * rng.uniform(0.27, 0.73)))
    if rng.uniform() < 0.5:
        normal = _unit(rng)
        score = points @ normal
    else:
        apex = _unit(rng) * 3.0 * float(np.abs(points).max())
        axis = -apex / np.linalg.norm(apex)
        rel = points - apex
        rel /= np.linalg.norm(rel, axis=1, keepdims=True)
        score = rel @ axis  # cos of angle to the cone axis; larger = deeper inside
    order = np.argsort(score, kind="stable")[:keep]
    return points[np.sort(order)]


def resample(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    count = points.shape[0]
    if count == n:
        return points
    if count > n:
        return points[np.sort(rng.choice(count, size=n, replace=False))]
    extra = rng.integers(0, count, size=n - count)
    return np.concatenate([points, points[extra]], axis=0)


# -- dataset ------------------------------------------------------------------


@dataclass
class SamplePair:
    pair_id: str
    category: str
    partial: np.ndarray
    complete: np.ndarray
    seed: int


def synth_pair(pair_id: str, category: str, seed: int, cfg: ModelConfig) -> SamplePair:
    rng = np.random.default_rng(seed)
    complete = sample_surface(category, rng, cfg.n_gt, cfg.half_extent)
    partial = resample(occlude(complete, rng), cfg.n_input, rng)
    return SamplePair(pair_id=pair_id, category=category, partial=partial,
                      complete=complete, seed=seed)


def synth_dataset(count: int, seed: int, cfg: ModelConfig) -> list[SamplePair]:
    if count < 1:
        raise ValueError(f"synth_dataset: count must be >= 1, got {count}")
    seeds = np.random.SeedSequence(seed).generate_state(count)
    picker = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        category = CATEGORIES[int(picker.integers(0, len(CATEGORIES)))]
        pairs.append(synth_pair(f"{i:04d}", category, int(seeds[i]), cfg))
    return pairs


def write_dataset(directory, pairs: list[SamplePair], profile_name: str, seed: int) -> None:
    directory = Path(directory)
    (directory / "pairs").mkdir(parents=True, exist_ok=True)
    index = {"seed": seed, "profile": profile_name, "count": len(pairs), "pairs": []}
    for pair in pairs:
        write_xyz(directory / "pairs" / f"{pair.pair_id}.partial.xyz", pair.partial)
        write_xyz(directory / "pairs" / f"{pair.pair_id}.complete.xyz", pair.complete)
        index["pairs"].append({"id": pair.pair_id, "category": pair.category,
                               "seed": pair.seed})
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=1)
        fh.write("\n")


def load_dataset(directory) -> list[SamplePair]:
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise DataError(f"{directory}: missing index.json")
    with open(index_path) as fh:
        index = json.load(fh)
    pairs = []
    for entry in index["pairs"]:
        pid = entry["id"]
        pairs.append(SamplePair(
            pair_id=pid,
            category=entry.get("category", "all"),
            partial=read_xyz(directory / "pairs" / f"{pid}.partial.xyz"),
            complete=read_xyz(directory / "pairs" / f"{pid}.complete.xyz"),
            seed=int(entry.get("seed", 0)),
        ))
    if not pairs:
        raise DataError(f"{directory}: dataset is empty")
    return pairs
