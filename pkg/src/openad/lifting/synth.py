"""Procedural driving-like scenes with exact depth, masks and 2-D/3-D boxes.

A forward-looking pinhole camera sits above the ego origin. Boxes resting on
the ground are placed in front of it, mostly aligned with or across the lane
direction, and may occlude each other or leave the image. Every pixel ray is
intersected with every box (slab test) to get depth and visible instance
masks. A per-category code vector is painted into a feature map to stand in
for cached 2-D detector features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import binary_erosion

from ..core import Box2D, Box3D, CameraCalib, CameraView, Domain, GroundTruthObject, Scene, SemanticLabel
from ..geometry import DepthMap, camera_to_ego, iou_2d, pixel_rays, project_points, canonical_half_turn
from .inputs import LiftingInput

# ego x forward, y left, z up  ->  camera x right, y down, z forward
EGO_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

DEFAULT_CATEGORIES = (
    # name, (w, l, h) nominal meters
    ("car", (1.9, 4.6, 1.6)),
    ("pedestrian", (0.7, 0.8, 1.75)),
    ("truck", (2.5, 8.0, 3.2)),
    ("bus", (2.9, 11.5, 3.3)),
    ("traffic cone", (0.45, 0.5, 0.75)),
    ("barrier", (0.5, 2.4, 1.0)),
    ("cement block", (1.0, 1.5, 0.8)),
    ("bicycle", (0.6, 1.8, 1.3)),
)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 400
    height: int = 240
    focal: float = 260.0
    mount_height: float = 1.6
    depth_range: tuple = (6.0, 30.0)
    lateral_extent: float = 1.0  # fraction of the half field of view
    objects_per_scene: tuple = (3, 6)
    lane_aligned: float = 0.5  # share of objects heading along the lane
    crossing: float = 0.2  # share heading across it; the rest is uniform
    yaw_spread: float = 0.08
    allow_occlusion: bool = True
    allow_truncation: bool = True
    categories: tuple = DEFAULT_CATEGORIES
    size_jitter: float = 0.2
    feature_channels: int = 4
    depth_noise: float = 0.0
    mask_erosion: int = 0
    min_mask_pixels: int = 40
    max_attempts: int = 60
    source_dataset: str = "synthetic"

    def camera(self) -> CameraCalib:
        mount = np.array([0.0, 0.0, self.mount_height])
        return CameraCalib(self.focal, self.focal, self.width / 2.0 - 0.5, self.height / 2.0 - 0.5,
                           EGO_TO_CAMERA, -EGO_TO_CAMERA @ mount, self.width, self.height)


@dataclass(eq=False)
class SynthScene:
    scene: Scene
    inputs: list
    targets: list
    depth: np.ndarray  # full-image depth, 0 where no box is hit
    instance: np.ndarray  # full-image object index, -1 for background


def category_code(index: int, channels: int) -> np.ndarray:
    if channels == 0:
        return np.zeros(0)
    v = np.random.default_rng([7919, index]).standard_normal(channels)
    return v / np.linalg.norm(v)


def ray_box_depth(origin: np.ndarray, dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Ray parameter of the first hit with ``box`` for ego-frame rays, inf on miss.

    Rays are ``origin + t * dirs``; with camera-z-normalised directions ``t``
    is the camera depth.
    """
    o = box.to_local(origin[None])[0]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = np.stack([c * dirs[..., 0] + s * dirs[..., 1], -s * dirs[..., 0] + c * dirs[..., 1], dirs[..., 2]], -1)
    w, l, h = box.size
    half = np.array([l / 2, w / 2, h / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def render(calib: CameraCalib, boxes) -> tuple[np.ndarray, np.ndarray]:
    """Depth map (0 = nothing hit) and instance index map (-1 = background)."""
    v, u = np.mgrid[0:calib.height, 0:calib.width].astype(float)
    dirs = pixel_rays(calib, u, v) @ calib.rotation  # camera -> ego directions
    origin = camera_to_ego(calib, np.zeros(3))[0]
    depth = np.full(u.shape, np.inf)
    inst = np.full(u.shape, -1, dtype=int)
    for k, box in enumerate(boxes):
        t = ray_box_depth(origin, dirs, box)
        closer = t < depth
        depth[closer] = t[closer]
        inst[closer] = k
    depth[~np.isfinite(depth)] = 0.0
    return depth, inst


def projected_box(calib: CameraCalib, box: Box3D) -> Optional[Box2D]:
    uvd, front = project_points(calib, box.corners())
    if not front.all():
        return None
    return Box2D(float(uvd[:, 0].min()), float(uvd[:, 1].min()), float(uvd[:, 0].max()), float(uvd[:, 1].max()))


def _sample_box(rng: np.random.Generator, cfg: SynthConfig) -> tuple[int, Box3D]:
    cat = int(rng.integers(len(cfg.categories)))
    nominal = np.array(cfg.categories[cat][1])
    w, l, h = nominal * (1.0 + cfg.size_jitter * rng.uniform(-1, 1, 3))
    if w > l:
        w, l = l, w
    x = rng.uniform(*cfg.depth_range)
    half_fov = math.atan((cfg.width / 2) / cfg.focal)
    y = rng.uniform(-1, 1) * cfg.lateral_extent * x * math.tan(half_fov)
    kind = rng.uniform()
    if kind < cfg.lane_aligned:
        yaw = rng.normal(0.0, cfg.yaw_spread)
    elif kind < cfg.lane_aligned + cfg.crossing:
        yaw = math.pi / 2 + rng.normal(0.0, cfg.yaw_spread)
    else:
        yaw = rng.uniform(-math.pi, math.pi)
    yaw = canonical_half_turn(yaw)
    return cat, Box3D((x, y, h / 2), (w, l, h), yaw)


def _footprints_overlap(a: Box3D, b: Box3D) -> bool:
    """Conservative test on circumscribed circles of the ground footprints."""
    ra = math.hypot(a.size[0], a.size[1]) / 2
    rb = math.hypot(b.size[0], b.size[1]) / 2
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) < ra + rb


def _inside(calib: CameraCalib, b: Box2D) -> bool:
    return b.x_min >= 0 and b.y_min >= 0 and b.x_max <= calib.width - 1 and b.y_max <= calib.height - 1


def _clip(calib: CameraCalib, b: Box2D) -> Optional[Box2D]:
    """Intersection of a box with the image area, None if empty."""
    out = Box2D(max(b.x_min, 0.0), max(b.y_min, 0.0), min(b.x_max, calib.width - 1.0),
                min(b.y_max, calib.height - 1.0))
    return out if out.x_min < out.x_max and out.y_min < out.y_max else None


def _crop_bounds(b: Box2D, calib: CameraCalib) -> tuple[int, int, int, int]:
    u0 = max(int(math.floor(b.x_min)), 0)
    v0 = max(int(math.floor(b.y_min)), 0)
    u1 = min(int(math.ceil(b.x_max)), calib.width - 1)
    v1 = min(int(math.ceil(b.y_max)), calib.height - 1)
    return u0, v0, u1 + 1, v1 + 1


def synthesize_scene(seed: int, config: SynthConfig = SynthConfig(), scene_id: Optional[str] = None) -> SynthScene:
    """Generate one scene and the lifting inputs/targets of its objects."""
    rng = np.random.default_rng(seed)
    calib = config.camera()
    n_target = int(rng.integers(config.objects_per_scene[0], config.objects_per_scene[1] + 1))
    placed: list[tuple[int, Box3D, Box2D]] = []
    for _ in range(config.max_attempts):
        if len(placed) == n_target:
            break
        cat, box = _sample_box(rng, config)
        b2 = projected_box(calib, box)
        if b2 is None:
            continue
        if not _inside(calib, b2):
            b2 = _clip(calib, b2) if config.allow_truncation else None
        if b2 is None or b2.area < 4 * config.min_mask_pixels:
            continue
        if any(_footprints_overlap(box, o) for _, o, _ in placed):
            continue
        if not config.allow_occlusion and any(iou_2d(b2, other) > 0 for _, _, other in placed):
            continue
        placed.append((cat, box, b2))

    depth, inst = render(calib, [b for _, b, _ in placed])
    if config.depth_noise > 0:
        noise = 1.0 + config.depth_noise * rng.standard_normal(depth.shape)
        depth = np.where(depth > 0, np.maximum(depth * noise, 1e-3), 0.0)
    features = np.zeros((calib.height, calib.width, config.feature_channels))
    for k, (cat, _, _) in enumerate(placed):
        features[inst == k] = category_code(cat, config.feature_channels)

    scene_id = scene_id if scene_id is not None else f"synth-{seed:06d}"
    gts, inputs, targets = [], [], []
    for k, (cat, box, b2) in enumerate(placed):
        u0, v0, u1, v1 = _crop_bounds(b2, calib)
        mask = inst[v0:v1, u0:u1] == k
        if config.mask_erosion > 0:
            mask = binary_erosion(mask, iterations=config.mask_erosion)
        if mask.sum() < config.min_mask_pixels:
            continue
        name = config.categories[cat][0]
        gts.append(GroundTruthObject(
            id=f"{scene_id}/{len(gts)}", label=SemanticLabel(name), box3d=box, box2d={0: b2},
            seen={config.source_dataset: True}, domain=Domain.IN))
        crop = depth[v0:v1, u0:u1]
        inputs.append(LiftingInput(
            box2d=b2, calib=calib, depth=DepthMap(crop.copy()), mask=mask, origin=(u0, v0),
            feature_map=features[v0:v1, u0:u1].copy() if config.feature_channels else None,
            label=name))
        targets.append(box)
    scene = Scene(scene_id, config.source_dataset, [CameraView(calib, "")], gts)
    return SynthScene(scene, inputs, targets, depth, inst)


def synthesize_suite(seed: int, count: int, config: SynthConfig = SynthConfig()) -> list[SynthScene]:
    """``count`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2 ** 31, size=count)
    return [synthesize_scene(int(s), config, scene_id=f"synth-{seed}-{i:05d}") for i, s in enumerate(seeds)]
