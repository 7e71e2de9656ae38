import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fixtures import simple_calib, vocab_provider
from openad import (Box2D, Box3D, CameraView, GroundTruthObject, Prediction, Scene, SemanticLabel, normalize_yaw,
                    validate_scene)
from openad.core import Domain, Task, as_task, validate_collection


def good_scene():
    gts = [
        GroundTruthObject("a/0", SemanticLabel("car"), box3d=Box3D((10.0, 0.0, 0.8), (1.8, 4.5, 1.6), 0.1),
                          box2d={0: Box2D(10, 10, 50, 40)}, seen={"nus": True}),
        GroundTruthObject("a/1", SemanticLabel("bus"), box3d=Box3D((20.0, 3.0, 1.5), (2.9, 11.0, 3.0), 0.0)),
    ]
    return Scene("a", "nus", [CameraView(simple_calib())], gts)


def test_normalize_yaw_examples():
    assert normalize_yaw(0.0) == 0.0
    assert normalize_yaw(3 * math.pi) == math.pi
    assert normalize_yaw(-math.pi) == math.pi
    assert normalize_yaw(math.pi) == math.pi
    with pytest.raises(ValueError):
        normalize_yaw(float("nan"))


@given(st.floats(-1e4, 1e4))
def test_normalize_yaw_range_and_equivalence(a):
    y = normalize_yaw(a)
    assert -math.pi < y <= math.pi
    assert abs(math.remainder(y - a, 2 * math.pi)) < 1e-9


def test_well_formed_scene_has_no_violations():
    assert validate_scene(good_scene()) == []


def test_zero_height_box_flagged():
    s = good_scene()
    bad = GroundTruthObject("a/9", SemanticLabel("car"), box3d=Box3D((5.0, 0.0, 0.5), (1.0, 2.0, 0.0), 0.0))
    s = Scene(s.scene_id, s.source_dataset, s.cameras, list(s.ground_truths) + [bad])
    v = validate_scene(s)
    assert len(v) == 1 and v[0].object_id == "a/9"
    assert "h" in v[0].message


def test_embedding_norm_flagged():
    p = Prediction(SemanticLabel("car"), np.array([0.5, 0.0, 0.0]), 0.5, box3d=Box3D((1.0, 0.0, 0.5), (1, 1, 1), 0.0))
    v = validate_scene(good_scene(), [p])
    assert len(v) == 1
    assert "embedding not unit norm" in v[0].message


def test_other_invariants():
    pv = vocab_provider()
    box = Box3D((1.0, 0.0, 0.5), (1, 1, 1), 0.0)
    both = Prediction(SemanticLabel("car"), pv.embed("car"), 0.5, box2d=Box2D(0, 0, 1, 1), box3d=box)
    conf = Prediction(SemanticLabel("car"), pv.embed("car"), 1.5, box3d=box)
    inverted = GroundTruthObject("x", SemanticLabel("car"), box2d={0: Box2D(5, 0, 1, 1)})
    nobox = GroundTruthObject("y", SemanticLabel("car"))
    badcam = GroundTruthObject("z", SemanticLabel("car"), box2d={3: Box2D(0, 0, 1, 1)})
    s = Scene("s", "d", [CameraView(simple_calib())], [inverted, nobox, badcam])
    ids = {v.object_id for v in validate_scene(s, [both, conf])}
    assert ids == {"x", "y", "z", "s/prediction[0]", "s/prediction[1]"}
    assert validate_scene(Scene("s", "d", [], [GroundTruthObject("q", SemanticLabel("car"), box3d=box)]),
                          require_seen=True)[0].message == "seen map is empty"


def test_duplicate_ids():
    s = good_scene()
    dup = Scene("a", "nus", s.cameras, list(s.ground_truths) + [s.ground_truths[0]])
    assert any("duplicate object id" in v.message for v in validate_scene(dup))
    assert any("duplicate scene_id" in v.message for v in validate_collection([s, s]))


def test_bad_calibration():
    c = simple_calib()
    skew = type(c)(c.fx, c.fy, c.cx, c.cy, c.rotation * 1.1, c.translation, c.width, c.height)
    off = type(c)(c.fx, c.fy, -5.0, c.cy, c.rotation, c.translation, c.width, c.height)
    for calib in (skew, off):
        assert validate_scene(Scene("s", "d", [CameraView(calib)], []))


def test_validate_is_pure():
    s = good_scene()
    assert validate_scene(s) == validate_scene(s)
    assert s == good_scene()


def test_box3d_geometry():
    b = Box3D((1.0, 2.0, 0.5), (2.0, 4.0, 1.0), math.pi / 2)
    c = b.corners()
    assert c.shape == (8, 3)
    # length runs along yaw (+y here)
    assert np.ptp(c[:, 1]) == pytest.approx(4.0)
    assert np.ptp(c[:, 0]) == pytest.approx(2.0)
    assert b.volume == pytest.approx(8.0)
    assert b.contains(np.array([[1.0, 3.9, 0.5], [2.5, 2.0, 0.5]])).tolist() == [True, False]
    assert Box3D.create((0, 0, 0), (1, 1, 1), 3 * math.pi).yaw == math.pi


def test_box2d_properties():
    b = Box2D(1, 2, 5, 4)
    assert (b.width, b.height, b.area, b.center) == (4, 2, 8, (3.0, 3.0))


def test_task_and_domain():
    assert as_task("3d") is Task.D3
    assert as_task(Task.D2) is Task.D2
    assert Domain("in_domain") is Domain.IN
    with pytest.raises(ValueError):
        as_task("4d")
