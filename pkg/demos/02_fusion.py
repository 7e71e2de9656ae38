# %% [markdown]
# Fusing a broad open-vocabulary detector with a narrow specialist.
#
# The specialist is confident and accurate on the common classes; the
# general model is low-confidence but sees the rare ones. Its scores are
# mapped onto the specialist's scale by rank quantiles, then both sets go
# through NMS that only suppresses boxes which overlap *and* agree in meaning.

# %%
import numpy as np

from openad import (Box2D, CameraCalib, CameraView, FusionConfig, GroundTruthObject, LexicalProvider, Prediction,
                    Scene, SemanticLabel, align_confidences, evaluate, fuse)

provider = LexicalProvider()
rng = np.random.default_rng(3)
calib = CameraCalib(800.0, 800.0, 639.5, 359.5, np.array([[0., -1, 0], [0, 0, -1], [1, 0, 0]]),
                    np.zeros(3), 1280, 720)

common, rare = ["car", "pedestrian"], ["wheelchair", "traffic cone"]
scenes, general, special = [], {}, {}
for s in range(5):
    gts, g, sp = [], [], []
    for k in range(8):
        name = (common + rare)[k % 4]
        x = 150.0 * k + float(rng.integers(0, 20))
        box = Box2D(x, 300.0, x + 100.0, 420.0)
        gts.append(GroundTruthObject(f"{s}/{k}", SemanticLabel(name), box2d={0: box}))
        shifted = Box2D(box.x_min + 3, box.y_min + 2, box.x_max + 3, box.y_max)
        # both see the common classes, only the general model sees rare ones
        g.append(Prediction(SemanticLabel(name), provider.embed(name), float(rng.uniform(0.05, 0.35)),
                            box2d=shifted, camera=0, model_id="general"))
        if name in common:
            sp.append(Prediction(SemanticLabel(name), provider.embed(name), float(rng.uniform(0.6, 0.95)),
                                 box2d=box, camera=0, model_id="specialized"))
    sid = f"s{s}"
    scenes.append(Scene(sid, "demo", [CameraView(calib)], gts))
    general[sid], special[sid] = g, sp

# %%
cfg = FusionConfig()
fused = {sid: fuse(general[sid], special[sid], cfg, task="2d") for sid in general}
for name, p in (("general", general), ("specialized", special), ("fused", fused)):
    r = evaluate(scenes, p, provider, "2d")
    print(f"{name:12s} AP {r.ap:.3f}  AR {r.ar:.3f}  detections {sum(map(len, p.values()))}")

# %%
raw = [p.confidence for p in general["s0"]]
mapped = [p.confidence for p in align_confidences(special["s0"], general["s0"], "rank_quantile")]
print("general confidences before / after alignment")
for a, b in sorted(zip(raw, mapped)):
    print(f"  {a:.3f} -> {b:.3f}")
