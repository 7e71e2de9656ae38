"""Fitting the converter on 2-D/3-D annotation pairs."""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np

from ..core import Box3D
from ..geometry import DegenerateCloudError, EmptyCloudError, center_distance_3d, pca_obb
from .inputs import PreparedObject, TrainingPair
from .model import ConverterConfig, ConverterModel, backward, box_loss, forward, init_params, \
    predict_prepared, stack_batch, targets_for

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingDivergedError(FloatingPointError):
    pass


def batch_loss(params: dict, cfg: ConverterConfig, objects: Sequence[PreparedObject],
               targets: np.ndarray) -> tuple[float, dict]:
    """Loss and parameter gradients for one batch of prepared objects."""
    pts, grids = stack_batch(objects, cfg)
    out, cache = forward(params, cfg, pts, grids)
    loss, dout = box_loss(out, targets)
    return loss, backward(params, cfg, cache, dout)


def _lr(cfg: ConverterConfig, step: int, total: int) -> float:
    floor = cfg.learning_rate * cfg.lr_final_ratio
    frac = step / max(total - 1, 1)
    return floor + 0.5 * (cfg.learning_rate - floor) * (1.0 + math.cos(math.pi * frac))


def train_converter(pairs: Sequence[TrainingPair], config: ConverterConfig = ConverterConfig(),
                    prepared: Optional[Sequence[PreparedObject]] = None):
    """Train a converter with mini-batch Adam.

    Returns ``(model, history)``: ``history[0]`` is the loss over the whole
    training set before the first update, then one mean training loss per
    epoch. Initialisation and shuffling depend only on ``config.seed``.
    """
    if not pairs:
        raise ValueError("need at least one training pair")
    model = ConverterModel(config, init_params(config))
    objects = list(prepared) if prepared is not None else [model.prepare(p.input) for p in pairs]
    targets = np.stack([targets_for(o, p.target) for o, p in zip(objects, pairs)])
    params = model.params
    moment1 = {k: np.zeros_like(v) for k, v in params.items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng([config.seed, 1])

    n = len(objects)
    bs = min(config.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total = steps_per_epoch * config.epochs
    history = [_full_loss(params, config, objects, targets)]
    b1, b2 = ADAM_BETAS
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = batch_loss(params, config, [objects[i] for i in idx], targets[idx])
            if not math.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}; parameter norms {norms}")
            step += 1
            lr = _lr(config, step - 1, total)
            for k in params:
                g = grads[k]
                moment1[k] = b1 * moment1[k] + (1 - b1) * g
                moment2[k] = b2 * moment2[k] + (1 - b2) * g * g
                m_hat = moment1[k] / (1 - b1 ** step)
                v_hat = moment2[k] / (1 - b2 ** step)
                params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            losses.append(loss * len(idx))
        history.append(sum(losses) / n)
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    return model, history


def _full_loss(params, cfg, objects, targets, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, len(objects), chunk):
        pts, grids = stack_batch(objects[start:start + chunk], cfg)
        out, _ = forward(params, cfg, pts, grids)
        loss, _ = box_loss(out, targets[start:start + chunk])
        total += loss * len(out)
    return total / len(objects)


def pca_boxes(objects: Sequence[PreparedObject]) -> list[Optional[Box3D]]:
    """PCA-decoded boxes; None where the pseudo cloud is degenerate."""
    out = []
    for o in objects:
        try:
            out.append(pca_obb(o.cloud.points))
        except (DegenerateCloudError, EmptyCloudError):
            out.append(None)
    return out


def center_recall(predicted: Sequence[Optional[Box3D]], targets: Sequence[Box3D], threshold: float = 2.0) -> float:
    """Fraction of targets whose predicted center lies within ``threshold`` m
    on the ground plane. Missing predictions count as misses."""
    if not targets:
        raise ValueError("no targets")
    hits = sum(p is not None and center_distance_3d(p, t) <= threshold for p, t in zip(predicted, targets))
    return hits / len(targets)


def mean_center_error(predicted: Sequence[Optional[Box3D]], targets: Sequence[Box3D]) -> float:
    """Mean ground-plane center error over objects with a prediction."""
    errs = [center_distance_3d(p, t) for p, t in zip(predicted, targets) if p is not None]
    return float(np.mean(errs)) if errs else math.inf


def evaluate_decoders(model: Optional[ConverterModel], objects: Sequence[PreparedObject],
                      targets: Sequence[Box3D], threshold: float = 2.0) -> dict:
    """Recall at ``threshold`` and mean center error for the MLP and PCA decoders."""
    out = {}
    pca = pca_boxes(objects)
    out["pca"] = {"recall": center_recall(pca, targets, threshold), "center_error": mean_center_error(pca, targets)}
    if model is not None:
        mlp = predict_prepared(list(objects), model)
        out["mlp"] = {"recall": center_recall(mlp, targets, threshold),
                      "center_error": mean_center_error(mlp, targets)}
    return out
