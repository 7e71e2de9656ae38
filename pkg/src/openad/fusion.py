"""Ensembling a general (open-world) model with a specialized (closed-set) one.

Confidences of the general model are mapped onto the specialized model's
score distribution, the two prediction sets are concatenated, and duplicates
are removed by NMS that requires both positional overlap and semantic
agreement before suppressing.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import Prediction, Task, as_task
from .geometry import center_distance_matrix, iou_matrix_2d
from .semantics import similarity_matrix

CALIBRATION_METHODS = ("rank_quantile", "affine", "none")


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.6
    semantic_threshold: float = 0.8
    distance_threshold: float = 1.0
    calibration: str = "rank_quantile"

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in [0, 1]")
        if not -1.0 <= self.semantic_threshold <= 1.0:
            raise ValueError("semantic_threshold must lie in [-1, 1]")
        if self.distance_threshold < 0:
            raise ValueError("distance_threshold must be non-negative")
        if self.calibration not in CALIBRATION_METHODS:
            raise ValueError(f"calibration must be one of {CALIBRATION_METHODS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _rescore(predictions: Sequence[Prediction], scores) -> list[Prediction]:
    scores = np.clip(np.asarray(scores, dtype=float), 0.0, 1.0)
    return [dataclasses.replace(p, confidence=float(s)) for p, s in zip(predictions, scores)]


def align_confidences(reference: Sequence[Prediction], predictions: Sequence[Prediction],
                      method: str = "rank_quantile") -> list[Prediction]:
    """Rescore ``predictions`` onto the confidence scale of ``reference``.

    rank_quantile: each score's rank fraction (ties share their mean rank) is
    mapped to the reference quantile at that fraction, interpolating linearly
    between order statistics. affine: match mean and standard deviation.
    none: identity. Results are clamped to [0, 1]; ordering is preserved.
    """
    if method not in CALIBRATION_METHODS:
        raise ValueError(f"unknown calibration method {method!r}")
    predictions = list(predictions)
    if method == "none" or not predictions:
        return predictions
    if not reference:
        warnings.warn("empty reference set; confidences left unaligned", RuntimeWarning, stacklevel=2)
        return predictions
    ref = np.array([p.confidence for p in reference])
    src = np.array([p.confidence for p in predictions])
    if method == "rank_quantile":
        if len(src) == 1:
            frac = np.array([0.5])
        else:
            frac = (rankdata(src, method="average") - 1.0) / (len(src) - 1)
        return _rescore(predictions, np.quantile(ref, frac))
    src_std = src.std()
    gain = ref.std() / src_std if src_std > 0 else 1.0
    return _rescore(predictions, ref.mean() + gain * (src - src.mean()))


def _suppression_matrix(predictions: Sequence[Prediction], config: FusionConfig, task: Task) -> np.ndarray:
    emb = np.stack([p.embedding for p in predictions])
    similar = similarity_matrix(emb, emb) >= config.semantic_threshold
    if task is Task.D2:
        boxes = np.array([p.box2d.as_array() for p in predictions])
        cams = np.array([p.camera for p in predictions])
        overlap = (iou_matrix_2d(boxes, boxes) >= config.iou_threshold) & (cams[:, None] == cams[None, :])
    else:
        centers = np.array([p.box3d.center for p in predictions])
        overlap = center_distance_matrix(centers, centers) <= config.distance_threshold
    return overlap & similar


def dual_threshold_nms(predictions: Sequence[Prediction], config: FusionConfig = FusionConfig(),
                       task="2d") -> list[Prediction]:
    """Keep predictions in descending confidence unless an already kept one is
    both positionally overlapping and semantically similar."""
    task = as_task(task)
    predictions = list(predictions)
    if not predictions:
        return []
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].confidence, i))
    suppress = _suppression_matrix(predictions, config, task)
    kept: list[int] = []
    for i in order:
        if not any(suppress[k, i] for k in kept):
            kept.append(i)
    return [predictions[i] for i in kept]


def fuse(general: Sequence[Prediction], specialized: Sequence[Prediction],
         config: FusionConfig = FusionConfig(), task="2d") -> list[Prediction]:
    """Calibrate the general model against the specialized one, merge, and NMS.

    Specialized predictions come first in the merged list, so they win
    confidence ties. With no general predictions the specialized set is
    returned as is.
    """
    task = as_task(task)
    if not general:
        return list(specialized)
    rescored = align_confidences(specialized, general, config.calibration)
    return dual_threshold_nms(list(specialized) + rescored, config, task)
