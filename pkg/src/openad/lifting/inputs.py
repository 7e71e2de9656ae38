"""Turning a 2-D detection plus depth into converter inputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from ..core import Box2D, Box3D, CameraCalib
from ..geometry import DEFAULT_K_MIN, DepthMap, EmptyCloudError, PseudoPointCloud, backproject_depth, \
    refine_depth_with_lidar


@dataclass(frozen=True, eq=False)
class LiftingInput:
    """One detected object.

    ``depth``, ``mask`` and ``feature_map`` cover the crop of the image under
    the 2-D box; the crop's top-left pixel is ``origin = (u0, v0)`` in full
    image coordinates. ``feature_map`` is (H', W', C) and may be coarser than
    the crop.
    """

    box2d: Box2D
    calib: CameraCalib
    depth: DepthMap
    mask: np.ndarray
    origin: tuple = (0, 0)
    feature_map: Optional[np.ndarray] = None
    lidar: Optional[np.ndarray] = None
    label: str = "object"
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))
        if self.mask.shape != self.depth.depth.shape:
            raise ValueError("mask and depth crop shapes differ")
        if self.feature_map is not None:
            fm = np.asarray(self.feature_map, dtype=float)
            if fm.ndim != 3:
                raise ValueError("feature_map must be (H', W', C)")
            object.__setattr__(self, "feature_map", fm)

    @property
    def n_feature_channels(self) -> int:
        return 0 if self.feature_map is None else self.feature_map.shape[2]


@dataclass(frozen=True, eq=False)
class TrainingPair:
    input: LiftingInput
    target: Box3D


@dataclass(frozen=True, eq=False)
class PreparedObject:
    points: np.ndarray  # (N, 3 + C + 1): centered xyz, features, scaled depth
    grid: np.ndarray  # (G, G, 1 + C)
    centroid: np.ndarray
    cloud: PseudoPointCloud


def sample_bilinear(image: np.ndarray, rows, cols) -> np.ndarray:
    """Bilinear lookup in an (H, W, C) array at fractional (row, col); edges clamp."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    coords = np.stack([rows, cols])
    return np.stack([map_coordinates(image[..., c], coords, order=1, mode="nearest")
                     for c in range(image.shape[2])], axis=-1)


def resample_grid(image: np.ndarray, size: int) -> np.ndarray:
    """Resample an (H, W, C) array to (size, size, C), aligning pixel centers."""
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("degenerate patch: zero area")
    if (h, w) == (size, size):
        return np.asarray(image, dtype=float)
    r = (np.arange(size) + 0.5) * h / size - 0.5
    c = (np.arange(size) + 0.5) * w / size - 0.5
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return sample_bilinear(np.asarray(image, dtype=float), rr, cc)


def point_features(inp: LiftingInput, cloud: PseudoPointCloud) -> np.ndarray:
    """Feature-map channels interpolated at each point's pixel, (N, C)."""
    if inp.feature_map is None:
        return np.zeros((len(cloud), 0))
    fh, fw = inp.feature_map.shape[:2]
    h, w = inp.mask.shape
    col = cloud.pixels[:, 0] - inp.origin[0]
    row = cloud.pixels[:, 1] - inp.origin[1]
    return sample_bilinear(inp.feature_map, (row + 0.5) * fh / h - 0.5, (col + 0.5) * fw / w - 0.5)


def subsample(n: int, max_points: int) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    return np.round(np.linspace(0, n - 1, max_points)).astype(int)


def lift_cloud(inp: LiftingInput, k_min: int = DEFAULT_K_MIN) -> tuple[DepthMap, PseudoPointCloud]:
    """Optionally correct depth with LiDAR, then back-project the mask."""
    depth = inp.depth
    if inp.lidar is not None and len(inp.lidar):
        depth = refine_depth_with_lidar(depth, inp.lidar, inp.calib, inp.origin, k_min).depth
    mask = inp.mask & depth.valid
    if not mask.any():
        raise EmptyCloudError("empty pseudo cloud: mask has no valid depth")
    return depth, backproject_depth(inp.calib, depth, mask, inp.origin)


GRID_DEPTH_CLIP = 2.0


def grid_patch(inp: LiftingInput, depth: DepthMap, size: int, depth_scale: float) -> np.ndarray:
    """Depth (relative to the object's median depth, scaled and clipped)
    stacked with the feature map over the box crop, resampled to
    (size, size, 1 + C). Pixels without depth read as far background."""
    ref = float(np.median(depth.depth[inp.mask & depth.valid]))
    rel = np.clip((depth.depth - ref) * depth_scale, -GRID_DEPTH_CLIP, GRID_DEPTH_CLIP)
    rel = np.where(depth.valid, rel, GRID_DEPTH_CLIP)
    patch = resample_grid(rel[..., None], size)
    if inp.feature_map is not None:
        patch = np.concatenate([patch, resample_grid(inp.feature_map, size)], axis=-1)
    return patch


def prepare_input(inp: LiftingInput, grid_size: int = 32, max_points: int = 128,
                  depth_scale: float = 0.1, k_min: int = DEFAULT_K_MIN) -> PreparedObject:
    depth, cloud = lift_cloud(inp, k_min)
    feats = point_features(inp, cloud)
    cloud = PseudoPointCloud(cloud.points, np.concatenate([feats, cloud.features], axis=1), cloud.pixels)
    centroid = cloud.points.mean(axis=0)
    keep = subsample(len(cloud), max_points)
    per_point = np.concatenate([
        cloud.points[keep] - centroid,
        feats[keep],
        cloud.features[keep, -1:] * depth_scale,
    ], axis=1)
    return PreparedObject(per_point, grid_patch(inp, depth, grid_size, depth_scale), centroid, cloud)
