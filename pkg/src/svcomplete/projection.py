"""Self-view augmentation: controllable viewpoints and z-buffered depth
rendering of a point cloud through a pinhole camera.

Depth is the Euclidean distance from the camera along the viewing ray;
pixels nobody covers stay 0. All 3-component dot products sum their
addends in sorted order, which makes rasters bit-identical when the
cloud and the camera are rotated together by a signed axis permutation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pointops import check_cloud


@dataclass
class Viewpoint:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if np.allclose(self.position, self.look_at):
            raise ValueError("viewpoint: position must differ from look_at")


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) float32, 0 = background
    view: Viewpoint
    fov_deg: float

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class ViewSet:
    maps: list[DepthMap]

    @property
    def vp(self) -> np.ndarray:
        """Camera positions, one row per view."""
        return np.stack([m.view.position for m in self.maps])

    def as_array(self) -> np.ndarray:
        """(N_V, 1, H, W) depth tensor."""
        return np.stack([m.depth for m in self.maps])[:, None, :, :]


def orthogonal_viewpoints(distance: float) -> list[Viewpoint]:
    """Cameras on the +x/+y/+z axes at the given distance, looking at the origin."""
    if distance <= 0:
        raise ValueError(f"viewpoint distance must be positive, got {distance}")
    origin = np.zeros(3)
    z_up = np.array([0.0, 0.0, 1.0])
    x_up = np.array([1.0, 0.0, 0.0])
    return [
        Viewpoint(np.array([distance, 0.0, 0.0]), origin, z_up),
        Viewpoint(np.array([0.0, distance, 0.0]), origin, z_up),
        Viewpoint(np.array([0.0, 0.0, distance]), origin, x_up),
    ]


def default_fov_deg(half_extent: float, distance: float) -> float:
    """Field of view that keeps the whole normalized shape in frame."""
    return float(np.degrees(2.0 * np.arctan(1.1 * half_extent / distance)))


def _dot3(v: np.ndarray, b: np.ndarray) -> np.ndarray:
    # sorted summation: invariant under signed permutations of both operands
    prods = np.sort(v * b[None, :], axis=1)
    return (prods[:, 0] + prods[:, 1]) + prods[:, 2]


def _norm3(v: np.ndarray) -> np.ndarray:
    sq = np.sort(v * v, axis=1)
    return np.sqrt((sq[:, 0] + sq[:, 1]) + sq[:, 2])


def camera_basis(view: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(right, up, forward) unit vectors; raises on a degenerate up vector."""
    forward = view.look_at - view.position
    forward = forward / _norm3(forward[None, :])[0]
    right = np.cross(forward, view.up)
    n = _norm3(right[None, :])[0]
    if n < 1e-12:
        raise ValueError("viewpoint: up vector is parallel to the view direction")
    right = right / n
    up = np.cross(right, forward)
    up = up / _norm3(up[None, :])[0]
    return right, up, forward


def render_depth(cloud, view: Viewpoint, res: int, fov_deg: float) -> DepthMap:
    """Project points through a pinhole camera and keep the nearest depth per pixel."""
    cloud = check_cloud(cloud).astype(np.float64, copy=False)
    if res < 8:
        raise ValueError(f"render_depth: resolution must be >= 8, got {res}")
    if not (0.0 < fov_deg < 180.0):
        raise ValueError(f"render_depth: fov must be in (0, 180), got {fov_deg}")
    right, up, forward = camera_basis(view)
    v = cloud - view.position
    x = _dot3(v, right)
    y = _dot3(v, up)
    z = _dot3(v, forward)
    depth = _norm3(v)
    tan_half = np.tan(np.radians(fov_deg) / 2.0)
    visible = z > 1e-12
    u_ndc = np.where(visible, x / np.where(visible, z, 1.0) / tan_half, 2.0)
    v_ndc = np.where(visible, y / np.where(visible, z, 1.0) / tan_half, 2.0)
    inside = visible & (np.abs(u_ndc) < 1.0) & (np.abs(v_ndc) < 1.0)
    px = np.floor((u_ndc[inside] + 1.0) * 0.5 * res).astype(np.int64)
    py = np.floor((1.0 - v_ndc[inside]) * 0.5 * res).astype(np.int64)
    np.clip(px, 0, res - 1, out=px)
    np.clip(py, 0, res - 1, out=py)
    img = np.full((res, res), np.inf, dtype=np.float64)
    np.minimum.at(img, (py, px), depth[inside])
    img[np.isinf(img)] = 0.0
    return DepthMap(depth=img.astype(np.float32), view=view, fov_deg=float(fov_deg))


def project_all(cloud, views: list[Viewpoint], res: int, fov_deg: float) -> ViewSet:
    return ViewSet(maps=[render_depth(cloud, v, res, fov_deg) for v in views])


def jitter_viewpoints(views: list[Viewpoint], rng: np.random.Generator,
                      max_angle_deg: float = 10.0, max_dist: float = 0.1) -> list[Viewpoint]:
    """Randomly perturb view directions (<= max_angle_deg) and distances (<= max_dist)."""
    out = []
    for view in views:
        pos = view.position
        d = float(np.linalg.norm(pos))
        axis = rng.normal(size=3)
        axis = axis / np.linalg.norm(axis)
        angle = np.radians(rng.uniform(0.0, max_angle_deg))
        unit = pos / d
        # Rodrigues rotation of the camera direction
        rotated = (unit * np.cos(angle)
                   + np.cross(axis, unit) * np.sin(angle)
                   + axis * np.dot(axis, unit) * (1.0 - np.cos(angle)))
        new_d = d + rng.uniform(-max_dist, max_dist)
        out.append(Viewpoint(rotated * new_d, view.look_at.copy(), view.up.copy()))
    return out


# -- raster file format ------------------------------------------------------


def write_raster(stem: Path, values: np.ndarray, meta: dict) -> None:
    """Raw little-endian float32 rows plus a JSON sidecar with at least width/height."""
    stem = Path(stem)
    arr = np.ascontiguousarray(values, dtype="<f4")
    stem.with_suffix(stem.suffix + ".depth").write_bytes(arr.tobytes())
    full = {"width": int(arr.shape[1]), "height": int(arr.shape[0]), **meta}
    with open(stem.with_suffix(stem.suffix + ".meta.json"), "w") as fh:
        json.dump(full, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_raster(stem: Path) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    with open(stem.with_suffix(stem.suffix + ".meta.json")) as fh:
        meta = json.load(fh)
    raw = stem.with_suffix(stem.suffix + ".depth").read_bytes()
    arr = np.frombuffer(raw, dtype="<f4").reshape(meta["height"], meta["width"])
    return arr.copy(), meta


def write_depth_map(stem: Path, dm: DepthMap) -> None:
    meta = {
        "position": [float(c) for c in dm.view.position],
        "look_at": [float(c) for c in dm.view.look_at],
        "up": [float(c) for c in dm.view.up],
        "fov_deg": dm.fov_deg,
        "background": 0.0,
    }
    write_raster(stem, dm.depth, meta)


def read_depth_map(stem: Path) -> DepthMap:
    arr, meta = read_raster(stem)
    view = Viewpoint(np.array(meta["position"]), np.array(meta["look_at"]), np.array(meta["up"]))
    return DepthMap(depth=arr, view=view, fov_deg=float(meta["fov_deg"]))
