"""Domain types shared across the toolkit, plus structural validation.

Frames: ego is x forward, y left, z up. Camera is x right, y down, z forward.
A camera calibration maps ego points into the camera frame with
``p_cam = rotation @ p_ego + translation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

UNIT_NORM_TOL = 1e-6
ORTHONORMAL_TOL = 1e-9


class Domain(str, Enum):
    IN = "in_domain"
    OUT = "out_domain"


class Task(str, Enum):
    D2 = "2d"
    D3 = "3d"


def as_task(task) -> Task:
    return task if isinstance(task, Task) else Task(str(task).lower())


def normalize_yaw(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    angle = float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"yaw must be finite, got {angle!r}")
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=float)


@dataclass(frozen=True)
class Box3D:
    """Gravity-aligned 7-DoF box.

    ``size`` is ``(w, l, h)``; ``l`` runs along the heading given by ``yaw``,
    ``w`` across it and ``h`` along the up axis. ``center`` is the volumetric
    center in ego coordinates.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", float(self.yaw))

    @classmethod
    def create(cls, center, size, yaw: float = 0.0) -> "Box3D":
        """Build a box with the yaw wrapped into (-pi, pi]."""
        return cls(tuple(center), tuple(size), normalize_yaw(yaw))

    @property
    def volume(self) -> float:
        w, l, h = self.size
        return w * l * h

    def corners(self) -> np.ndarray:
        """The 8 corners in ego coordinates, shape (8, 3)."""
        w, l, h = self.size
        sx = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (l / 2)
        sy = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * (w / 2)
        sz = np.array([-1, -1, -1, -1, 1, 1, 1, 1]) * (h / 2)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * sx - s * sy
        y = s * sx + c * sy
        return np.stack([x, y, sz], axis=1) + np.asarray(self.center)

    def to_local(self, points) -> np.ndarray:
        """Express ego points in the box frame (x along heading)."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * p[..., 0] + s * p[..., 1]
        y = -s * p[..., 0] + c * p[..., 1]
        return np.stack([x, y, p[..., 2]], axis=-1)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        local = self.to_local(points)
        w, l, h = self.size
        half = np.array([l / 2, w / 2, h / 2]) + margin
        return np.all(np.abs(local) <= half, axis=-1)


@dataclass(frozen=True, eq=False)
class CameraCalib:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def __eq__(self, other):
        if not isinstance(other, CameraCalib):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True)
class SemanticLabel:
    """A free-text category. ``embedding`` optionally names the entry to look
    up in an embedding table when it differs from ``text``."""

    text: str
    embedding: Optional[str] = None

    @property
    def key(self) -> str:
        return self.embedding if self.embedding is not None else self.text


@dataclass(frozen=True)
class GroundTruthObject:
    id: str
    label: SemanticLabel
    box3d: Optional[Box3D] = None
    box2d: Mapping[int, Box2D] = field(default_factory=dict)
    seen: Mapping[str, bool] = field(default_factory=dict)
    # None means "derive from the scene's source dataset vs. the training domain"
    domain: Optional[Domain] = None

    def __post_init__(self):
        object.__setattr__(self, "box2d", dict(self.box2d))
        object.__setattr__(self, "seen", dict(self.seen))
        if self.domain is not None and not isinstance(self.domain, Domain):
            object.__setattr__(self, "domain", Domain(self.domain))


@dataclass(frozen=True, eq=False)
class Prediction:
    label: SemanticLabel
    embedding: np.ndarray
    confidence: float
    model_id: str = ""
    box2d: Optional[Box2D] = None
    box3d: Optional[Box3D] = None
    camera: int = 0

    def __post_init__(self):
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=float).reshape(-1))
        object.__setattr__(self, "confidence", float(self.confidence))

    def __eq__(self, other):
        if not isinstance(other, Prediction):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.embedding, other.embedding)
            and self.confidence == other.confidence
            and self.model_id == other.model_id
            and self.box2d == other.box2d
            and self.box3d == other.box3d
            and self.camera == other.camera
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CameraView:
    calib: CameraCalib
    image: str = ""

    def __eq__(self, other):
        if not isinstance(other, CameraView):
            return NotImplemented
        return self.calib == other.calib and self.image == other.image

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    source_dataset: str
    cameras: Sequence[CameraView] = ()
    ground_truths: Sequence[GroundTruthObject] = ()
    lidar: Optional[np.ndarray] = None  # (N, 4): x, y, z, intensity in ego frame

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "ground_truths", tuple(self.ground_truths))
        if self.lidar is not None:
            object.__setattr__(self, "lidar", np.asarray(self.lidar, dtype=float).reshape(-1, 4))

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        if (self.lidar is None) != (other.lidar is None):
            return False
        return (
            self.scene_id == other.scene_id
            and self.source_dataset == other.source_dataset
            and self.cameras == other.cameras
            and self.ground_truths == other.ground_truths
            and (self.lidar is None or np.array_equal(self.lidar, other.lidar))
        )

    __hash__ = None


@dataclass
class MetricsReport:
    """Evaluation output. ``None`` marks a metric that is undefined for the
    data (no ground truths in the slice, or no true positives)."""

    task: Task
    ap: Optional[float]
    ar: Optional[float]
    ate: Optional[float]
    ase: Optional[float]
    ar_in_seen: Optional[float] = None
    ar_in_unseen: Optional[float] = None
    ar_out_seen: Optional[float] = None
    ar_out_unseen: Optional[float] = None
    breakdown: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "ap": self.ap,
            "ar": self.ar,
            "ate": self.ate,
            "ase": self.ase,
            "ar_in_seen": self.ar_in_seen,
            "ar_in_unseen": self.ar_in_unseen,
            "ar_out_seen": self.ar_out_seen,
            "ar_out_unseen": self.ar_out_unseen,
        }


@dataclass(frozen=True)
class Violation:
    object_id: str
    message: str

    def __str__(self):
        return f"{self.object_id}: {self.message}"


def _finite(*values) -> bool:
    return all(math.isfinite(float(v)) for v in values)


def box2d_violations(box: Box2D) -> list[str]:
    if not _finite(box.x_min, box.y_min, box.x_max, box.y_max):
        return ["box2d has non-finite coordinates"]
    out = []
    if not box.x_min < box.x_max:
        out.append("box2d x_min >= x_max")
    if not box.y_min < box.y_max:
        out.append("box2d y_min >= y_max")
    return out


def box3d_violations(box: Box3D) -> list[str]:
    if not _finite(*box.center, *box.size, box.yaw):
        return ["box3d has non-finite values"]
    out = []
    for name, s in zip("wlh", box.size):
        if s <= 0:
            out.append(f"box3d size {name} = {s} is not positive")
    if not -math.pi < box.yaw <= math.pi:
        out.append(f"box3d yaw {box.yaw} outside (-pi, pi]")
    return out


def calib_violations(calib: CameraCalib) -> list[str]:
    out = []
    if not _finite(calib.fx, calib.fy, calib.cx, calib.cy) or not np.all(np.isfinite(calib.rotation)) \
            or not np.all(np.isfinite(calib.translation)):
        return ["calibration has non-finite values"]
    if calib.fx <= 0 or calib.fy <= 0:
        out.append("focal lengths must be positive")
    r = calib.rotation
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
        out.append("rotation is not orthonormal")
    if not 0 < calib.cx < calib.width:
        out.append("principal point cx outside image")
    if not 0 < calib.cy < calib.height:
        out.append("principal point cy outside image")
    return out


def prediction_violations(pred: Prediction) -> list[str]:
    out = []
    if (pred.box2d is None) == (pred.box3d is None):
        out.append("prediction must carry exactly one of box2d/box3d")
    if pred.box2d is not None:
        out.extend(box2d_violations(pred.box2d))
    if pred.box3d is not None:
        out.extend(box3d_violations(pred.box3d))
    if not pred.label.text:
        out.append("label text is empty")
    if not (math.isfinite(pred.confidence) and 0.0 <= pred.confidence <= 1.0):
        out.append(f"confidence {pred.confidence} outside [0, 1]")
    norm = float(np.linalg.norm(pred.embedding)) if pred.embedding.size else 0.0
    if not abs(norm - 1.0) <= UNIT_NORM_TOL:
        out.append(f"embedding not unit norm (|e| = {norm:.6g})")
    return out


def validate_scene(scene: Scene, predictions: Sequence[Prediction] = (),
                   require_seen: bool = False) -> list[Violation]:
    """Check every type invariant in a scene (and optionally its predictions).

    Returns an empty list when everything holds. Violations are reported as
    data; nothing is raised.
    """
    violations: list[Violation] = []

    def add(obj_id, messages):
        violations.extend(Violation(str(obj_id), m) for m in messages)

    if not scene.scene_id:
        add("<scene>", ["scene_id is empty"])
    for i, cam in enumerate(scene.cameras):
        add(f"{scene.scene_id}/camera[{i}]", calib_violations(cam.calib))
    if scene.lidar is not None and not np.all(np.isfinite(scene.lidar)):
        add(f"{scene.scene_id}/lidar", ["lidar has non-finite points"])

    seen_ids = set()
    for gt in scene.ground_truths:
        msgs = []
        if gt.id in seen_ids:
            msgs.append("duplicate object id")
        seen_ids.add(gt.id)
        if gt.box3d is None and not gt.box2d:
            msgs.append("object has neither box2d nor box3d")
        for cam, box in gt.box2d.items():
            if scene.cameras and not 0 <= cam < len(scene.cameras):
                msgs.append(f"box2d references unknown camera {cam}")
            msgs.extend(box2d_violations(box))
        if gt.box3d is not None:
            msgs.extend(box3d_violations(gt.box3d))
        if not gt.label.text:
            msgs.append("label text is empty")
        if require_seen and not gt.seen:
            msgs.append("seen map is empty")
        add(gt.id, msgs)

    for i, pred in enumerate(predictions):
        add(f"{scene.scene_id}/prediction[{i}]", prediction_violations(pred))
    return violations


def validate_collection(scenes: Sequence[Scene]) -> list[Violation]:
    out = []
    ids = set()
    for scene in scenes:
        if scene.scene_id in ids:
            out.append(Violation(scene.scene_id, "duplicate scene_id in collection"))
        ids.add(scene.scene_id)
        out.extend(validate_scene(scene))
    return out
