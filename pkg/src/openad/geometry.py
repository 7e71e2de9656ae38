"""Box overlap/distance measures, pinhole projection, depth back-projection,
LiDAR-guided depth correction and PCA oriented-box fitting.

Pixel ``(u, v)`` addresses column ``u`` and row ``v``; integer coordinates
are pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import Box2D, Box3D, CameraCalib

DEFAULT_K_MIN = 8


class EmptyCloudError(ValueError):
    pass


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        if depth.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        valid = depth > 0 if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != depth.shape:
            raise ValueError("valid mask shape differs from depth shape")
        if np.any(~(depth[valid] > 0)):
            raise ValueError("depth must be positive wherever valid")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True, eq=False)
class PseudoPointCloud:
    points: np.ndarray  # (N, 3) ego frame
    features: np.ndarray  # (N, C)
    pixels: Optional[np.ndarray] = None  # (N, 2) absolute (u, v)

    def __len__(self):
        return len(self.points)


# --------------------------------------------------------------------------
# overlap / distance
# --------------------------------------------------------------------------

def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix_2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) arrays of x_min, y_min, x_max, y_max."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return out


def center_distance_3d(a: Box3D, b: Box3D, use_z: bool = False) -> float:
    """Center distance on the ground plane (x, y), nuScenes style.

    ``use_z=True`` gives the full 3-D distance instead.
    """
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    dz = a.center[2] - b.center[2] if use_z else 0.0
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def center_distance_matrix(a: np.ndarray, b: np.ndarray, use_z: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    k = 3 if use_z else 2
    diff = a[:, None, :k] - b[None, :, :k]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def center_distance_2d(a: Box2D, b: Box2D) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def aligned_iou(a: Union[Box2D, Box3D], b: Union[Box2D, Box3D]) -> float:
    """IoU once both boxes share a center (and, in 3-D, a yaw)."""
    if isinstance(a, Box3D) and isinstance(b, Box3D):
        sa, sb = a.size, b.size
    elif isinstance(a, Box2D) and isinstance(b, Box2D):
        sa, sb = (a.width, a.height), (b.width, b.height)
    else:
        raise TypeError("aligned_iou needs two boxes of the same kind")
    inter = math.prod(min(x, y) for x, y in zip(sa, sb))
    return inter / (math.prod(sa) + math.prod(sb) - inter)


# --------------------------------------------------------------------------
# camera geometry
# --------------------------------------------------------------------------

def ego_to_camera(calib: CameraCalib, points) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    return p @ calib.rotation.T + calib.translation


def camera_to_ego(calib: CameraCalib, points) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    return (p - calib.translation) @ calib.rotation


def project_points(calib: CameraCalib, points) -> tuple[np.ndarray, np.ndarray]:
    """Project ego points to ``(u, v, depth)``.

    Returns the (N, 3) projections and a boolean mask of points in front of
    the camera. Rows with ``depth <= 0`` are behind the camera; their ``u, v``
    are NaN.
    """
    cam = ego_to_camera(calib, points)
    z = cam[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, calib.fx * cam[:, 0] / z + calib.cx, np.nan)
        v = np.where(in_front, calib.fy * cam[:, 1] / z + calib.cy, np.nan)
    return np.stack([u, v, z], axis=1), in_front


def pixel_rays(calib: CameraCalib, u, v) -> np.ndarray:
    """Camera-frame ray directions with unit z for pixel coordinates."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.stack([(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, np.ones_like(u)], axis=-1)


def backproject_depth(calib: CameraCalib, depth: DepthMap, mask, origin=(0, 0)) -> PseudoPointCloud:
    """Lift masked depth pixels to ego-frame points.

    ``depth`` may be a crop of the full image whose top-left pixel sits at
    ``origin = (u0, v0)``. ``mask`` is a boolean array of the crop's shape.
    The returned cloud carries per-point depth as its single feature column.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.depth.shape:
        raise ValueError(f"mask shape {mask.shape} differs from depth shape {depth.depth.shape}")
    if np.any(mask & ~depth.valid):
        raise ValueError("mask selects pixels without valid depth")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyCloudError("empty pseudo cloud: mask selects no pixels")
    u = cols + float(origin[0])
    v = rows + float(origin[1])
    z = depth.depth[rows, cols]
    cam = pixel_rays(calib, u, v) * z[:, None]
    return PseudoPointCloud(camera_to_ego(calib, cam), z[:, None].copy(), np.stack([u, v], axis=1))


@dataclass(frozen=True, eq=False)
class DepthRefinement:
    depth: DepthMap
    scale: float
    offset: float
    n_pairs: int
    skipped: bool


def _lidar_pairs(depth: DepthMap, lidar, calib: CameraCalib, origin):
    pts = np.asarray(lidar, dtype=float)
    if pts.size == 0:
        return np.empty(0), np.empty(0), np.empty(0, dtype=int)
    uvd, front = project_points(calib, pts[:, :3])
    uvd = uvd[front]
    cols = np.rint(uvd[:, 0]).astype(int) - int(origin[0])
    rows = np.rint(uvd[:, 1]).astype(int) - int(origin[1])
    inside = (cols >= 0) & (cols < depth.width) & (rows >= 0) & (rows < depth.height)
    cols, rows, lid = cols[inside], rows[inside], uvd[inside, 2]
    ok = depth.valid[rows, cols]
    cols, rows, lid = cols[ok], rows[ok], lid[ok]
    # keep the nearest return per pixel
    flat = rows * depth.width + cols
    order = np.lexsort((lid, flat))
    flat, lid = flat[order], lid[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, lid = flat[first], lid[first]
    est = depth.depth.reshape(-1)[flat]
    return est, lid, flat


def _linear_fit(x, y):
    design = np.stack([x, np.ones_like(x)], axis=1)
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(a), float(b)


def refine_depth_with_lidar(depth: DepthMap, lidar, calib: CameraCalib, origin=(0, 0),
                            k_min: int = DEFAULT_K_MIN) -> DepthRefinement:
    """Correct an estimated depth map with a linear fit against LiDAR depths.

    LiDAR points are projected into the (possibly cropped) map; at every hit
    pixel the pair (estimated, measured) depth is collected and
    ``measured ~ a * estimated + b`` is fitted by least squares. Pairs with a
    residual beyond two standard deviations are dropped and the fit is redone
    once. With fewer than ``k_min`` pairs, or a degenerate fit, the input is
    returned unchanged with ``skipped=True``.
    """
    est, lid, _ = _lidar_pairs(depth, lidar, calib, origin)
    n = len(est)
    unchanged = DepthRefinement(depth, 1.0, 0.0, n, True)
    if n < k_min or np.ptp(est) <= 1e-12 * max(1.0, float(np.max(np.abs(est)))):
        return unchanged
    a, b = _linear_fit(est, lid)
    resid = lid - (a * est + b)
    sigma = float(np.std(resid))
    if sigma > 1e-9 * max(1.0, float(np.mean(np.abs(lid)))):
        keep = np.abs(resid) <= 2.0 * sigma
        if keep.sum() >= 2 and np.ptp(est[keep]) > 0:
            a, b = _linear_fit(est[keep], lid[keep])
    if not (math.isfinite(a) and math.isfinite(b)) or a <= 0:
        return unchanged
    refined = np.where(depth.valid, a * depth.depth + b, 0.0)
    valid = depth.valid & (refined > 0)
    refined = np.where(valid, refined, 0.0)
    return DepthRefinement(DepthMap(refined, valid), a, b, n, False)


# --------------------------------------------------------------------------
# oriented box fitting
# --------------------------------------------------------------------------

def canonical_half_turn(yaw: float) -> float:
    """Wrap into (-pi/2, pi/2]."""
    yaw = math.remainder(yaw, math.pi)
    if yaw <= -math.pi / 2:
        yaw += math.pi
    return yaw


def pca_obb(points) -> Box3D:
    """Fit a gravity-aligned box by PCA on the ground-plane coordinates.

    The heading is the first principal axis of (x, y), canonicalised into
    (-pi/2, pi/2] with ``l >= w``; extents are the point min/max in the
    rotated frame and along z.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateCloudError(f"degenerate cloud: need at least 3 points, got {len(pts)}")
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    cov = xy.T @ xy / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or evals[0] <= 1e-12 * evals[1]:
        raise DegenerateCloudError("degenerate cloud: no planar spread in one direction")
    major = evecs[:, 1]
    yaw = canonical_half_turn(math.atan2(major[1], major[0]))

    c, s = math.cos(yaw), math.sin(yaw)
    lx = c * pts[:, 0] + s * pts[:, 1]
    ly = -s * pts[:, 0] + c * pts[:, 1]
    l = float(lx.max() - lx.min())
    w = float(ly.max() - ly.min())
    mid_x = 0.5 * (lx.max() + lx.min())
    mid_y = 0.5 * (ly.max() + ly.min())
    if w > l:
        l, w = w, l
        yaw = canonical_half_turn(yaw + math.pi / 2)
    cx = c * mid_x - s * mid_y
    cy = s * mid_x + c * mid_y
    z_lo, z_hi = float(pts[:, 2].min()), float(pts[:, 2].max())
    h = max(z_hi - z_lo, 1e-6)
    return Box3D((cx, cy, 0.5 * (z_lo + z_hi)), (w, l, h), yaw)
