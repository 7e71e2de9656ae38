"""Shared builders for small evaluation and fusion fixtures."""

import numpy as np

from openad import (Box2D, Box3D, CameraCalib, CameraView, EmbeddingTable, GroundTruthObject, Prediction, Scene,
                    SemanticLabel, TableProvider)

# dot products between these are 0, 0.6, 0.8, 0.96 or 1: never on a grid level
VOCAB = {
    "car": (1.0, 0.0, 0.0),
    "van": (0.8, 0.6, 0.0),
    "truck": (0.6, 0.8, 0.0),
    "bus": (0.0, 1.0, 0.0),
    "pedestrian": (0.0, 0.0, 1.0),
    "cyclist": (0.0, 0.6, 0.8),
}


def vocab_provider() -> TableProvider:
    entries = {k: np.array(v) / np.linalg.norm(v) for k, v in VOCAB.items()}
    return TableProvider(EmbeddingTable("test-vocab", 3, entries))


def simple_calib(width=200, height=100) -> CameraCalib:
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return CameraCalib(100.0, 100.0, width / 2 - 0.5, height / 2 - 0.5, rot, np.array([0.0, 1.5, 0.0]),
                       width, height)


def random_box2d(rng, extent=12):
    x0, y0 = rng.integers(0, extent, 2)
    w, h = rng.integers(1, 6, 2)
    return (int(x0), int(y0), int(x0 + w), int(y0 + h))


def random_center(rng):
    return (float(rng.integers(0, 9)) * 0.5, float(rng.integers(0, 9)) * 0.5, 0.75)


def micro_case(rng, task, max_preds=10, max_gts=5):
    """Random scenes (1-3) with at most ``max_preds`` predictions and
    ``max_gts`` ground truths in total. Returns (scenes, preds, oracle_scenes).

    Predictions are often jittered copies of ground truths so that matches
    occur at several thresholds; confidences come from a coarse set to make
    ties common.
    """
    labels = list(VOCAB)
    n_scenes = int(rng.integers(1, 4))
    n_gt_total = int(rng.integers(1, max_gts + 1))
    n_pred_total = int(rng.integers(0, max_preds + 1))
    gt_split = np.bincount(rng.integers(0, n_scenes, n_gt_total), minlength=n_scenes)
    pred_split = np.bincount(rng.integers(0, n_scenes, n_pred_total), minlength=n_scenes)
    provider = vocab_provider()
    scenes, preds, oracle_scenes = [], {}, []
    for s in range(n_scenes):
        sid = f"s{s}"
        gts, o_gts = [], []
        for k in range(gt_split[s]):
            label = labels[int(rng.integers(len(labels)))]
            cam = int(rng.integers(0, 2))
            if task == "2d":
                box = random_box2d(rng)
                gt = GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box2d={cam: Box2D(*box)})
            else:
                box = random_center(rng)
                gt = GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box3d=Box3D(box, (1.0, 2.0, 1.5), 0.0))
                cam = -1
            gts.append(gt)
            o_gts.append({"box": box, "emb": tuple(provider.embed(label)), "camera": cam})
        plist, o_preds = [], []
        for _ in range(pred_split[s]):
            label = labels[int(rng.integers(len(labels)))]
            conf = float(rng.choice([0.2, 0.4, 0.5, 0.7, 0.9, 1.0]))
            cam = int(rng.integers(0, 2))
            if task == "2d":
                if o_gts and rng.uniform() < 0.7:
                    src = o_gts[int(rng.integers(len(o_gts)))]
                    cam = src["camera"] if rng.uniform() < 0.8 else cam
                    box = tuple(int(v + rng.integers(-1, 2)) for v in src["box"])
                    if box[2] <= box[0] or box[3] <= box[1]:
                        box = src["box"]
                else:
                    box = random_box2d(rng)
                p = Prediction(SemanticLabel(label), provider.embed(label), conf, box2d=Box2D(*box), camera=cam)
            else:
                if o_gts and rng.uniform() < 0.7:
                    src = o_gts[int(rng.integers(len(o_gts)))]["box"]
                    box = (src[0] + 0.5 * float(rng.integers(-4, 5)), src[1] + 0.5 * float(rng.integers(-4, 5)), 0.75)
                else:
                    box = random_center(rng)
                p = Prediction(SemanticLabel(label), provider.embed(label), conf, box3d=Box3D(box, (1.0, 2.0, 1.5), 0.0))
            plist.append(p)
            o_preds.append({"box": box, "emb": tuple(provider.embed(label)), "conf": conf, "camera": cam})
        cams = [CameraView(simple_calib()), CameraView(simple_calib())]
        scenes.append(Scene(sid, "synthetic", cams, gts))
        if plist:
            preds[sid] = plist
        oracle_scenes.append((sid, o_preds, o_gts))
    return scenes, preds, oracle_scenes


def perfect_fixture(task, n_scenes=3, per_scene=4, seed=0):
    """Predictions that copy every ground truth exactly (label and box)."""
    rng = np.random.default_rng(seed)
    labels = list(VOCAB)
    provider = vocab_provider()
    scenes, preds = [], {}
    for s in range(n_scenes):
        sid = f"perfect-{s}"
        gts, plist = [], []
        for k in range(per_scene):
            label = labels[k % len(labels)]
            if task == "2d":
                x = 40 * k + 2.0
                b2 = Box2D(x, 10.0, x + 30.0, 60.0)
                gts.append(GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box2d={0: b2}))
                plist.append(Prediction(SemanticLabel(label), provider.embed(label), float(rng.uniform(0.1, 1.0)),
                                        box2d=b2, camera=0))
            else:
                b3 = Box3D((10.0 + 5 * k, float(rng.uniform(-5, 5)), 0.8), (1.8, 4.5, 1.6), float(rng.uniform(-3, 3)))
                gts.append(GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box3d=b3))
                plist.append(Prediction(SemanticLabel(label), provider.embed(label), float(rng.uniform(0.1, 1.0)),
                                        box3d=b3))
        scenes.append(Scene(sid, "synthetic", [CameraView(simple_calib(400, 100))], gts))
        preds[sid] = plist
    return scenes, preds, provider


def disjoint_fusion_fixture(task, seed=0, n_scenes=4, per_scene=6):
    """Ground truths split between a 'general' model (odd indices) and a
    'specialized' model (even indices), each detecting only its half, with
    different confidence scales. Returns (scenes, general, specialized, provider)."""
    rng = np.random.default_rng(seed)
    labels = list(VOCAB)
    provider = vocab_provider()
    scenes, general, special = [], {}, {}
    for s in range(n_scenes):
        sid = f"fuse-{s}"
        gts, g_list, s_list = [], [], []
        for k in range(per_scene):
            label = labels[int(rng.integers(len(labels)))]
            if task == "2d":
                x = 32.0 * k + float(rng.integers(0, 4))
                box = Box2D(x, 10.0, x + 24.0, 50.0)
                gts.append(GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box2d={0: box}))
                jitter = Box2D(box.x_min + 1, box.y_min + 1, box.x_max + 1, box.y_max)
                make = dict(box2d=jitter, camera=0)
            else:
                box = Box3D((8.0 + 6 * k, float(rng.uniform(-4, 4)), 0.8), (1.8, 4.5, 1.6), 0.0)
                gts.append(GroundTruthObject(f"{sid}/{k}", SemanticLabel(label), box3d=box))
                make = dict(box3d=Box3D((box.center[0] + 0.3, box.center[1], 0.8), box.size, 0.0))
            if k % 2:
                g_list.append(Prediction(SemanticLabel(label), provider.embed(label),
                                         float(rng.uniform(0.05, 0.3)), model_id="general", **make))
            else:
                s_list.append(Prediction(SemanticLabel(label), provider.embed(label),
                                         float(rng.uniform(0.5, 0.99)), model_id="specialized", **make))
        scenes.append(Scene(sid, "synthetic", [CameraView(simple_calib(400, 100))], gts))
        general[sid], special[sid] = g_list, s_list
    return scenes, general, special, provider


def random_calib(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    width, height = int(rng.integers(200, 2000)), int(rng.integers(200, 1500))
    return CameraCalib(rng.uniform(200, 2000), rng.uniform(200, 2000), rng.uniform(0.3, 0.7) * width,
                       rng.uniform(0.3, 0.7) * height, rot, rng.uniform(-3, 3, 3), width, height)
