"""Open-world detection metrics.

A prediction is a true positive only if it clears both a positional threshold
(IoU for 2-D boxes, ground-plane center distance for 3-D boxes) and a
semantic threshold (cosine similarity between label embeddings) against a
not-yet-matched ground truth. AP and AR are averaged over the full
(positional x semantic) threshold grid; ATE/ASE are measured on the true
positives of one operating pair; the domain/seen subgroup recalls fix the
semantic threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Box2D, Box3D, Domain, GroundTruthObject, MetricsReport, Prediction, Scene, Task, as_task
from .geometry import aligned_iou, center_distance_2d, center_distance_3d, center_distance_matrix, iou_matrix_2d
from .semantics import EmbeddingSpaceError, similarity_matrix

SEMANTIC_LEVELS = (0.5, 0.7, 0.9)
IOU_LEVELS_2D = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DISTANCE_LEVELS_3D = (0.5, 1.0, 2.0, 4.0)
MAX_DETECTIONS = 300
SUBGROUP_SEMANTIC = 0.9
RECALL_SAMPLES = np.arange(101) / 100.0
NUSC_MIN_RECALL = 0.1
NUSC_MIN_PRECISION = 0.1


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdGrid:
    positional: tuple
    semantic: tuple

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positional)
        sem = tuple(float(s) for s in self.semantic)
        if not pos or not sem:
            raise ValueError("threshold lists must be non-empty")
        if list(pos) != sorted(pos) or list(sem) != sorted(sem):
            raise ValueError("threshold lists must be ascending")
        object.__setattr__(self, "positional", pos)
        object.__setattr__(self, "semantic", sem)

    @classmethod
    def default(cls, task) -> "ThresholdGrid":
        task = as_task(task)
        return cls(IOU_LEVELS_2D if task is Task.D2 else DISTANCE_LEVELS_3D, SEMANTIC_LEVELS)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return [(p, s) for p in self.positional for s in self.semantic]


def default_operating_point(task) -> tuple[float, float]:
    return (0.5, 0.9) if as_task(task) is Task.D2 else (2.0, 0.9)


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (pred index, gt index, positional, semantic)
    unmatched_predictions: list = field(default_factory=list)
    unmatched_ground_truths: list = field(default_factory=list)

    @property
    def n_tp(self) -> int:
        return len(self.pairs)


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------

def _passes(pos: np.ndarray, threshold: float, task: Task) -> np.ndarray:
    return pos >= threshold if task is Task.D2 else pos <= threshold


def match_scores(pos: np.ndarray, sem: np.ndarray, pos_threshold: float, sem_threshold: float,
                 task, order: Optional[Sequence[int]] = None,
                 gt_subset: Optional[np.ndarray] = None) -> MatchResult:
    """Greedy dual-threshold assignment on precomputed score matrices.

    ``pos`` and ``sem`` are (n_pred, n_gt). Predictions are visited in
    ``order`` (highest confidence first); each takes the unmatched ground truth
    with the best positional score among those passing both thresholds, ties
    going to the lowest ground-truth index.
    """
    task = as_task(task)
    n_pred, n_gt = pos.shape
    order = range(n_pred) if order is None else order
    available = np.ones(n_gt, dtype=bool) if gt_subset is None else np.asarray(gt_subset, dtype=bool).copy()
    eligible_gts = np.flatnonzero(available)
    ok = _passes(pos, pos_threshold, task) & (sem >= sem_threshold)
    key = pos if task is Task.D2 else -pos
    result = MatchResult()
    for i in order:
        cand = ok[i] & available
        if not cand.any():
            result.unmatched_predictions.append(int(i))
            continue
        scores = np.where(cand, key[i], -np.inf)
        j = int(np.argmax(scores))
        available[j] = False
        result.pairs.append((int(i), j, float(pos[i, j]), float(sem[i, j])))
    result.unmatched_ground_truths = [int(j) for j in eligible_gts if available[j]]
    return result


def gt_instances(ground_truths: Sequence[GroundTruthObject], task) -> list[tuple[GroundTruthObject, int, object]]:
    """Flatten ground truths into matchable instances ``(gt, camera, box)``.

    In 3-D every object with a box3d is one instance (camera -1). In 2-D each
    (object, camera) box is its own instance.
    """
    task = as_task(task)
    out = []
    for gt in ground_truths:
        if task is Task.D3:
            if gt.box3d is not None:
                out.append((gt, -1, gt.box3d))
        else:
            for cam in sorted(gt.box2d):
                out.append((gt, cam, gt.box2d[cam]))
    return out


def positional_matrix(predictions: Sequence[Prediction], instances, task) -> np.ndarray:
    """IoU (2-D) or center distance (3-D); impossible pairs get -inf / +inf."""
    task = as_task(task)
    n_p, n_g = len(predictions), len(instances)
    if task is Task.D2:
        if n_p == 0 or n_g == 0:
            return np.zeros((n_p, n_g))
        pb = np.array([p.box2d.as_array() for p in predictions])
        gb = np.array([box.as_array() for _, _, box in instances])
        mat = iou_matrix_2d(pb, gb)
        same_cam = np.array([p.camera for p in predictions])[:, None] == np.array([c for _, c, _ in instances])[None, :]
        return np.where(same_cam, mat, -np.inf)
    if n_p == 0 or n_g == 0:
        return np.zeros((n_p, n_g))
    pc = np.array([p.box3d.center for p in predictions])
    gc = np.array([box.center for _, _, box in instances])
    return center_distance_matrix(pc, gc)


def _embedding_matrix(predictions: Sequence[Prediction], dim: int) -> np.ndarray:
    if not predictions:
        return np.zeros((0, dim))
    mat = np.stack([p.embedding for p in predictions])
    if mat.shape[1] != dim:
        raise EmbeddingSpaceError(
            f"prediction embeddings have dim {mat.shape[1]}, ground-truth space has dim {dim}")
    return mat


def _check_boxes(predictions: Sequence[Prediction], task: Task):
    for p in predictions:
        box = p.box2d if task is Task.D2 else p.box3d
        if box is None:
            raise EvaluationError(f"prediction without a {task.value} box in a {task.value} evaluation")


def match(predictions: Sequence[Prediction], ground_truths: Sequence[GroundTruthObject], pos_threshold: float,
          sem_threshold: float, task, provider) -> MatchResult:
    """Match one scene's predictions to its ground truths.

    Ground-truth indices in the result refer to :func:`gt_instances` order,
    which equals the input order when every object has exactly one box of the
    task's kind.
    """
    task = as_task(task)
    _check_boxes(predictions, task)
    instances = gt_instances(ground_truths, task)
    gt_emb = np.stack([provider.embed(gt.label.key) for gt, _, _ in instances]) if instances \
        else np.zeros((0, provider.dim))
    sem = similarity_matrix(_embedding_matrix(predictions, provider.dim), gt_emb)
    pos = positional_matrix(predictions, instances, task)
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].confidence, i))
    return match_scores(pos, sem, pos_threshold, sem_threshold, task, order)


# --------------------------------------------------------------------------
# precision / recall
# --------------------------------------------------------------------------

@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    n_gt: int

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def pr_curve(is_tp: Sequence[bool], n_gt: int) -> PRCurve:
    """Cumulative operating points for detections already sorted by confidence."""
    flags = np.asarray(is_tp, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    if n_gt <= 0:
        return PRCurve(np.zeros(0), np.zeros(0), max(n_gt, 0))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    return PRCurve(recall.astype(float), precision.astype(float), n_gt)


def _interp_precision(curve: PRCurve) -> np.ndarray:
    """Precision at the 101 recall samples by linear interpolation between
    operating points; at repeated recall the best precision is used, and
    samples beyond the final recall are zero."""
    rec, prec = curve.recall, curve.precision
    uniq, start = np.unique(rec, return_index=True)
    best = np.maximum.reduceat(prec, start)
    return np.interp(RECALL_SAMPLES, uniq, best, left=best[0], right=0.0)


def average_precision(curve: PRCurve, task) -> Optional[float]:
    """2-D: COCO 101-point interpolated AP over the precision envelope.
    3-D: nuScenes-style AP clipped at recall/precision 0.1 and renormalised.
    ``None`` when there are no ground truths."""
    task = as_task(task)
    if curve.n_gt == 0:
        return None
    if len(curve.recall) == 0:
        return 0.0
    if task is Task.D2:
        envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
        idx = np.searchsorted(curve.recall, RECALL_SAMPLES, side="left")
        q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
        return float(np.mean(q))
    sampled = _interp_precision(curve)[RECALL_SAMPLES > NUSC_MIN_RECALL + 1e-12]
    clipped = np.maximum(sampled, NUSC_MIN_PRECISION)
    ap = (float(np.mean(clipped)) - NUSC_MIN_PRECISION) / (1.0 - NUSC_MIN_PRECISION)
    return max(ap, 0.0)


# --------------------------------------------------------------------------
# full evaluation
# --------------------------------------------------------------------------

@dataclass
class _SceneData:
    scene_id: str
    predictions: list  # top-k, sorted by confidence then input index
    instances: list
    pos: np.ndarray
    sem: np.ndarray
    domain: list  # per instance, Domain or None
    seen: list  # per instance, bool or None


def _resolve_seen(gt: GroundTruthObject, training_domain: Optional[str]) -> Optional[bool]:
    if training_domain is not None:
        value = gt.seen.get(training_domain)
        return None if value is None else bool(value)
    if len(gt.seen) == 1:
        return bool(next(iter(gt.seen.values())))
    return None


def _resolve_domain(gt: GroundTruthObject, scene: Scene, training_domain: Optional[str]) -> Optional[Domain]:
    if gt.domain is not None:
        return gt.domain
    if training_domain is None:
        return None
    return Domain.IN if scene.source_dataset == training_domain else Domain.OUT


def top_k(predictions: Sequence[Prediction], k: int = MAX_DETECTIONS) -> list[Prediction]:
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].confidence, i))
    return [predictions[i] for i in order[:k]]


def _prepare(scenes, predictions, provider, task, training_domain, max_dets) -> list[_SceneData]:
    ids = [s.scene_id for s in scenes]
    unknown = sorted(set(predictions) - set(ids))
    if unknown:
        raise EvaluationError(f"predictions reference unknown scene(s): {', '.join(unknown)}")
    out = []
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        preds = top_k(list(predictions.get(scene.scene_id, ())), max_dets)
        _check_boxes(preds, task)
        instances = gt_instances(scene.ground_truths, task)
        gt_emb = np.stack([provider.embed(gt.label.key) for gt, _, _ in instances]) if instances \
            else np.zeros((0, provider.dim))
        sem = similarity_matrix(_embedding_matrix(preds, provider.dim), gt_emb)
        pos = positional_matrix(preds, instances, task)
        out.append(_SceneData(
            scene.scene_id, preds, instances, pos, sem,
            [_resolve_domain(gt, scene, training_domain) for gt, _, _ in instances],
            [_resolve_seen(gt, training_domain) for gt, _, _ in instances],
        ))
    return out


def _global_flags(data: Sequence[_SceneData], results: Sequence[MatchResult]) -> list[bool]:
    records = []
    for d, r in zip(data, results):
        tp = set(i for i, *_ in r.pairs)
        for i, p in enumerate(d.predictions):
            records.append((-p.confidence, d.scene_id, i, i in tp))
    records.sort(key=lambda rec: rec[:3])
    return [rec[3] for rec in records]


def _regression_errors(data, results, task: Task) -> tuple[list[float], list[float]]:
    trans, scale = [], []
    for d, r in zip(data, results):
        for i, j, _, _ in r.pairs:
            pred = d.predictions[i]
            gt_box = d.instances[j][2]
            if task is Task.D2:
                trans.append(center_distance_2d(pred.box2d, gt_box))
                scale.append(1.0 - aligned_iou(pred.box2d, gt_box))
            else:
                trans.append(center_distance_3d(pred.box3d, gt_box))
                scale.append(1.0 - aligned_iou(pred.box3d, gt_box))
    return trans, scale


def _subgroup_ar(data, task, positional, sem_threshold, domain: Domain, seen: bool) -> Optional[float]:
    masks = [np.array([dm == domain and sn is seen for dm, sn in zip(d.domain, d.seen)], dtype=bool)
             for d in data]
    total = int(sum(m.sum() for m in masks))
    if total == 0:
        return None
    recalls = []
    for thr in positional:
        tp = 0
        for d, m in zip(data, masks):
            if m.any():
                tp += match_scores(d.pos, d.sem, thr, sem_threshold, task, gt_subset=m).n_tp
        recalls.append(tp / total)
    return float(np.mean(recalls))


def subgroup_recall(scenes: Sequence[Scene], predictions: Mapping[str, Sequence[Prediction]], provider, task,
                    domain, seen: bool, positional: Optional[Sequence[float]] = None,
                    sem_threshold: float = SUBGROUP_SEMANTIC, training_domain: Optional[str] = None,
                    max_dets: int = MAX_DETECTIONS) -> Optional[float]:
    """Recall restricted to ground truths of one (domain, seen) group.

    Matching is rerun against the filtered ground truths only, so a prediction
    cannot be consumed by an object outside the group. Returns ``None`` when
    the group is empty.
    """
    task = as_task(task)
    positional = ThresholdGrid.default(task).positional if positional is None else tuple(positional)
    data = _prepare(scenes, predictions, provider, task, training_domain, max_dets)
    return _subgroup_ar(data, task, positional, sem_threshold, Domain(domain), bool(seen))


def evaluate(scenes: Sequence[Scene], predictions: Mapping[str, Sequence[Prediction]], provider, task,
             grid: Optional[ThresholdGrid] = None, training_domain: Optional[str] = None,
             max_dets: int = MAX_DETECTIONS, operating_point: Optional[tuple[float, float]] = None,
             subgroup_semantic: float = SUBGROUP_SEMANTIC) -> MetricsReport:
    """Run the full metric suite over a scene collection.

    ``predictions`` maps scene_id to that scene's predictions. Each scene keeps
    its ``max_dets`` most confident predictions. Metrics that are undefined
    (no ground truths, no true positives, empty subgroup) come back as None.
    """
    task = as_task(task)
    grid = ThresholdGrid.default(task) if grid is None else grid
    operating_point = default_operating_point(task) if operating_point is None else tuple(operating_point)
    data = _prepare(scenes, predictions, provider, task, training_domain, max_dets)
    n_gt = sum(len(d.instances) for d in data)
    order = [list(range(len(d.predictions))) for d in data]

    breakdown = []
    aps, ars = [], []
    for pos_thr, sem_thr in grid.pairs:
        results = [match_scores(d.pos, d.sem, pos_thr, sem_thr, task, o) for d, o in zip(data, order)]
        n_tp = sum(r.n_tp for r in results)
        curve = pr_curve(_global_flags(data, results), n_gt)
        ap = average_precision(curve, task)
        ar = n_tp / n_gt if n_gt else None
        breakdown.append({"positional": pos_thr, "semantic": sem_thr, "ap": ap, "ar": ar,
                          "tp": n_tp, "n_gt": n_gt})
        if ap is not None:
            aps.append(ap)
            ars.append(ar)

    op_results = [match_scores(d.pos, d.sem, operating_point[0], operating_point[1], task, o)
                  for d, o in zip(data, order)]
    trans, scale = _regression_errors(data, op_results, task)

    sub = {}
    for dom in (Domain.IN, Domain.OUT):
        for seen in (True, False):
            name = f"ar_{'in' if dom is Domain.IN else 'out'}_{'seen' if seen else 'unseen'}"
            sub[name] = _subgroup_ar(data, task, grid.positional, subgroup_semantic, dom, seen)

    metadata = {
        "task": task.value,
        "grid": {"positional": list(grid.positional), "semantic": list(grid.semantic)},
        "threshold_pairs": [list(p) for p in grid.pairs],
        "n_threshold_pairs": len(grid.pairs),
        "max_detections_per_scene": max_dets,
        "operating_point": {"positional": operating_point[0], "semantic": operating_point[1],
                            "n_tp": len(trans)},
        "subgroup_semantic_threshold": subgroup_semantic,
        "training_domain": training_domain,
        "embedding_space": getattr(provider, "space_id", None),
        "n_scenes": len(data),
        "n_ground_truths": n_gt,
        "n_predictions": sum(len(d.predictions) for d in data),
        "ap_method": "coco-101" if task is Task.D2 else "nuscenes-clipped",
    }
    return MetricsReport(
        task=task,
        ap=float(np.mean(aps)) if aps else None,
        ar=float(np.mean(ars)) if ars else None,
        ate=float(np.mean(trans)) if trans else None,
        ase=float(np.mean(scale)) if scale else None,
        breakdown=breakdown,
        metadata=metadata,
        **sub,
    )


def format_report(report: MetricsReport) -> str:
    """One-row table in the AP / AR / ATE / ASE / subgroup-AR layout."""
    def pct(x):
        return "   -  " if x is None else f"{100 * x:6.2f}"

    def err(x):
        return "   -  " if x is None else f"{x:6.3f}"

    header = f"{'AP':>6} {'AR':>6} {'ATE':>6} {'ASE':>6} {'InSeen':>6} {'InUns':>6} {'OutSn':>6} {'OutUn':>6}"
    row = " ".join([pct(report.ap), pct(report.ar), err(report.ate), err(report.ase),
                    pct(report.ar_in_seen), pct(report.ar_in_unseen),
                    pct(report.ar_out_seen), pct(report.ar_out_unseen)])
    return f"[{report.task.value}]\n{header}\n{row}"
