import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixtures import disjoint_fusion_fixture, vocab_provider
from openad import Box2D, Box3D, FusionConfig, Prediction, SemanticLabel, align_confidences, dual_threshold_nms, \
    evaluate, fuse
from openad.fusion import _suppression_matrix
from openad.core import Task


def p2(label, box, conf, model="m", cam=0):
    pv = vocab_provider()
    return Prediction(SemanticLabel(label), pv.embed(label), conf, model_id=model, box2d=Box2D(*box), camera=cam)


def p3(label, center, conf, model="m"):
    pv = vocab_provider()
    return Prediction(SemanticLabel(label), pv.embed(label), conf, model_id=model,
                      box3d=Box3D(center, (1.8, 4.5, 1.6), 0.0))


def confs(preds):
    return [p.confidence for p in preds]


# -- calibration -------------------------------------------------------------

def test_quantile_identity_on_same_scores():
    ref = [p3("car", (0, 0, 0), c) for c in (0.1, 0.4, 0.4, 0.9)]
    assert confs(align_confidences(ref, ref)) == pytest.approx([0.1, 0.4, 0.4, 0.9])


def test_quantile_example():
    ref = [p3("car", (0, 0, 0), c) for c in (0.5, 1.0)]
    src = [p3("car", (0, 0, 0), c) for c in (0.1, 0.2)]
    assert confs(align_confidences(ref, src)) == pytest.approx([0.5, 1.0])


def test_none_and_empty_reference():
    src = [p3("car", (0, 0, 0), c) for c in (0.1, 0.2)]
    assert confs(align_confidences([p3("car", (0, 0, 0), 0.9)], src, "none")) == [0.1, 0.2]
    with pytest.warns(RuntimeWarning):
        assert confs(align_confidences([], src)) == [0.1, 0.2]


def test_affine_matches_moments():
    ref = [p3("car", (0, 0, 0), c) for c in (0.5, 0.6, 0.7)]
    src = [p3("car", (0, 0, 0), c) for c in (0.1, 0.2, 0.3)]
    assert confs(align_confidences(ref, src, "affine")) == pytest.approx([0.5, 0.6, 0.7])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.lists(st.floats(0, 1), min_size=1, max_size=20),
       st.sampled_from(["rank_quantile", "affine"]))
def test_alignment_preserves_order_and_range(ref_c, src_c, method):
    ref = [p3("car", (0, 0, 0), c) for c in ref_c]
    src = [p3("car", (0, 0, 0), c) for c in src_c]
    out = confs(align_confidences(ref, src, method))
    assert all(0.0 <= c <= 1.0 for c in out)
    for i in range(len(src_c)):
        for j in range(len(src_c)):
            if src_c[i] < src_c[j]:
                assert out[i] <= out[j] + 1e-12


def test_bad_config():
    with pytest.raises(ValueError):
        FusionConfig(calibration="isotonic")
    with pytest.raises(ValueError):
        FusionConfig(iou_threshold=1.5)


# -- NMS ---------------------------------------------------------------------

def test_nms_examples():
    a = p2("car", (0, 0, 10, 10), 0.9)
    assert len(dual_threshold_nms([a, p2("car", (0, 0, 10, 10), 0.9)], task="2d")) == 1
    # same box, unrelated label
    assert len(dual_threshold_nms([a, p2("pedestrian", (0, 0, 10, 10), 0.8)], task="2d")) == 2
    # same label, disjoint box
    assert len(dual_threshold_nms([a, p2("car", (50, 50, 60, 60), 0.8)], task="2d")) == 2
    # different camera
    assert len(dual_threshold_nms([a, p2("car", (0, 0, 10, 10), 0.8, cam=1)], task="2d")) == 2


def test_nms_3d_distance():
    a, b = p3("car", (0.0, 0.0, 0.8), 0.9), p3("van", (0.9, 0.0, 0.8), 0.5)
    assert dual_threshold_nms([b, a], task="3d") == [a]
    c = p3("van", (1.1, 0.0, 0.8), 0.5)
    assert len(dual_threshold_nms([a, c], task="3d")) == 2


def random_preds(rng, n, task):
    labels = ["car", "van", "truck", "bus", "pedestrian"]
    out = []
    for _ in range(n):
        lab = labels[int(rng.integers(len(labels)))]
        if task == "2d":
            x, y = rng.uniform(0, 40, 2)
            out.append(p2(lab, (x, y, x + rng.uniform(5, 15), y + rng.uniform(5, 15)), float(rng.uniform())))
        else:
            out.append(p3(lab, (float(rng.uniform(0, 6)), float(rng.uniform(0, 6)), 0.8), float(rng.uniform())))
    return out


@pytest.mark.parametrize("task", ["2d", "3d"])
def test_nms_properties(task):
    rng = np.random.default_rng(4)
    cfg = FusionConfig()
    for _ in range(50):
        preds = random_preds(rng, int(rng.integers(1, 25)), task)
        once = dual_threshold_nms(preds, cfg, task)
        assert dual_threshold_nms(once, cfg, task) == once
        assert all(any(q is p for p in preds) for q in once)
        sup = _suppression_matrix(once, cfg, Task(task))
        np.fill_diagonal(sup, False)
        assert not sup.any()


# -- fuse --------------------------------------------------------------------

def test_fuse_empty_general():
    spec = [p3("car", (0, 0, 0.8), 0.7)]
    assert fuse([], spec, task="3d") == spec


def test_fuse_keeps_specialized_on_duplicate():
    spec = [p3("car", (0, 0, 0.8), 0.9, model="specialized"), p3("bus", (30, 0, 0.8), 0.2, model="specialized")]
    gen = [p3("car", (0.2, 0, 0.8), 0.3, model="general"), p3("truck", (60, 0, 0.8), 0.1, model="general")]
    out = fuse(gen, spec, task="3d")
    cars = [p for p in out if p.label.text == "car"]
    assert len(cars) == 1 and cars[0].model_id == "specialized"
    assert {p.model_id for p in out} == {"specialized", "general"}


@pytest.mark.parametrize("task", ["2d", "3d"])
def test_fuse_disjoint_recall(task):
    scenes, general, special, pv = disjoint_fusion_fixture(task)
    fused = {sid: fuse(general[sid], special[sid], task=task) for sid in general}
    ar = {name: evaluate(scenes, preds, pv, task).ar
          for name, preds in (("general", general), ("special", special), ("fused", fused))}
    assert ar["fused"] > max(ar["general"], ar["special"])
    # the halves are disjoint, so nothing is lost by merging
    assert ar["fused"] == pytest.approx(ar["general"] + ar["special"])
