import json
import subprocess
import sys

import numpy as np
import pytest

from fixtures import disjoint_fusion_fixture, perfect_fixture
from openad import EmbeddingTable
from openad.cli import main
from openad.io import load_predictions, save_predictions, save_scenes, write_embeddings
from fixtures import VOCAB


def write_vocab(path):
    table = EmbeddingTable("test-vocab", 3, {k: np.array(v) / np.linalg.norm(v) for k, v in VOCAB.items()})
    write_embeddings(table, path)
    return str(path)


@pytest.fixture
def perfect_files(tmp_path):
    scenes, preds, pv = perfect_fixture("3d")
    save_scenes(scenes, tmp_path / "scenes.json")
    save_predictions(preds, tmp_path / "preds.jsonl", inline_embedding=False)
    write_vocab(tmp_path / "emb.bin")
    return tmp_path


def test_eval_perfect_fixture(perfect_files, capsys):
    d = perfect_files
    code = main(["eval", "--task", "3d", "--scenes", str(d / "scenes.json"), "--preds", str(d / "preds.jsonl"),
                 "--embeddings", str(d / "emb.bin"), "--out", str(d / "report.json")])
    assert code == 0
    report = json.loads((d / "report.json").read_text())
    assert report["metrics"]["ap"] == 1.0 and report["metrics"]["ar"] == 1.0
    assert report["metadata"]["n_threshold_pairs"] == 12
    assert report["config"]["operating_point"] == [2.0, 0.9]
    assert report["config"]["embeddings"]["space_id"] == "test-vocab"
    assert "100.00" in capsys.readouterr().out


def test_eval_is_deterministic(perfect_files):
    d = perfect_files
    outs = []
    for name in ("r1.json", "r2.json"):
        main(["eval", "--task", "3d", "--scenes", str(d / "scenes.json"), "--preds", str(d / "preds.jsonl"),
              "--embeddings", str(d / "emb.bin"), "--out", str(d / name)])
        outs.append((d / name).read_bytes())
    assert outs[0] == outs[1]


def test_eval_2d_grid_and_custom_grid(tmp_path):
    scenes, preds, pv = perfect_fixture("2d")
    save_scenes(scenes, tmp_path / "s.json")
    save_predictions(preds, tmp_path / "p.jsonl")
    args = ["eval", "--task", "2d", "--scenes", str(tmp_path / "s.json"), "--preds", str(tmp_path / "p.jsonl"),
            "--embeddings", write_vocab(tmp_path / "e.bin")]
    assert main(args + ["--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["metadata"]["n_threshold_pairs"] == 30
    (tmp_path / "g.json").write_text(json.dumps({"positional": [0.5, 0.75], "semantic": [0.9]}))
    assert main(args + ["--grid", str(tmp_path / "g.json"), "--out", str(tmp_path / "r2.json")]) == 0
    assert json.loads((tmp_path / "r2.json").read_text())["metadata"]["threshold_pairs"] == [[0.5, 0.9], [0.75, 0.9]]


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["eval", "--task", "3d"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    assert main(["validate", str(tmp_path / "nope.json")]) == 1
    assert main(["lift", "--inputs", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 1


def test_validate_exit_codes(tmp_path, perfect_files):
    assert main(["validate", str(perfect_files / "scenes.json")]) == 0
    doc = json.loads((perfect_files / "scenes.json").read_text())
    doc["scenes"][0]["ground_truths"][0]["box3d"]["size"][2] = 0.0
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert main(["validate", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["validate", str(tmp_path / "broken.json")]) == 2


def test_eval_error_codes(perfect_files, tmp_path):
    d = perfect_files
    # labels missing from the embedding table
    (tmp_path / "p.jsonl").write_text(json.dumps({
        "scene_id": "perfect-0", "task": "3d", "label": "zeppelin", "confidence": 0.5,
        "box": {"center": [0, 0, 0], "size": [1, 1, 1], "yaw": 0}}) + "\n")
    base = ["eval", "--task", "3d", "--scenes", str(d / "scenes.json"), "--embeddings", str(d / "emb.bin"),
            "--out", str(tmp_path / "r.json")]
    assert main(base + ["--preds", str(tmp_path / "p.jsonl")]) == 2
    # predictions for a scene not in the collection
    (tmp_path / "q.jsonl").write_text(json.dumps({
        "scene_id": "elsewhere", "task": "3d", "label": "car", "confidence": 0.5,
        "box": {"center": [0, 0, 0], "size": [1, 1, 1], "yaw": 0}}) + "\n")
    assert main(base + ["--preds", str(tmp_path / "q.jsonl")]) == 3


def test_fuse_then_eval_improves_recall(tmp_path):
    scenes, general, special, pv = disjoint_fusion_fixture("3d")
    save_scenes(scenes, tmp_path / "s.json")
    save_predictions(general, tmp_path / "g.jsonl")
    save_predictions(special, tmp_path / "sp.jsonl")
    assert main(["fuse", "--general", str(tmp_path / "g.jsonl"), "--specialized", str(tmp_path / "sp.jsonl"),
                 "--out", str(tmp_path / "f.jsonl")]) == 0
    ar = {}
    for name in ("g", "sp", "f"):
        main(["eval", "--task", "3d", "--scenes", str(tmp_path / "s.json"), "--preds", str(tmp_path / f"{name}.jsonl"),
              "--embeddings", write_vocab(tmp_path / "e.bin"), "--out", str(tmp_path / f"{name}.json")])
        ar[name] = json.loads((tmp_path / f"{name}.json").read_text())["metrics"]["ar"]
    assert ar["f"] > max(ar["g"], ar["sp"])
    fused = load_predictions(tmp_path / "f.jsonl")
    assert {p.model_id for ps in fused.values() for p in ps} == {"general", "specialized"}


def test_fuse_bad_config(tmp_path):
    _, general, special, _ = disjoint_fusion_fixture("3d")
    save_predictions(general, tmp_path / "g.jsonl")
    save_predictions(special, tmp_path / "sp.jsonl")
    (tmp_path / "c.json").write_text(json.dumps({"calibration": "magic"}))
    assert main(["fuse", "--general", str(tmp_path / "g.jsonl"), "--specialized", str(tmp_path / "sp.jsonl"),
                 "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "f.jsonl")]) == 2


def test_synth_train_lift_pipeline(tmp_path):
    out = tmp_path / "suite"
    assert main(["synth", "--seed", "3", "--count", "3", "--out", str(out)]) == 0
    assert (out / "scenes.json").exists() and (out / "lifting.json").exists()
    assert main(["validate", str(out / "scenes.json")]) == 0
    (tmp_path / "cfg.json").write_text(json.dumps({"feature_channels": 4, "epochs": 2, "point_hidden": [8, 16],
                                                   "conv_channels": [4, 8], "head_hidden": 16, "max_points": 32,
                                                   "grid_size": 16}))
    ckpts = []
    for name in ("a.ckpt", "b.ckpt"):
        assert main(["train-converter", "--pairs", str(out / "lifting.json"), "--config", str(tmp_path / "cfg.json"),
                     "--out", str(tmp_path / name)]) == 0
        ckpts.append((tmp_path / name).read_bytes())
    assert ckpts[0] == ckpts[1]
    for decoder in ("mlp", "pca"):
        assert main(["lift", "--inputs", str(out / "lifting.json"), "--model", str(tmp_path / "a.ckpt"),
                     "--decoder", decoder, "--out", str(tmp_path / f"{decoder}.jsonl")]) == 0
        assert main(["eval", "--task", "3d", "--scenes", str(out / "scenes.json"),
                     "--preds", str(tmp_path / f"{decoder}.jsonl"), "--out", str(tmp_path / f"{decoder}.json")]) == 0
    assert main(["lift", "--inputs", str(out / "lifting.json"), "--decoder", "mlp",
                 "--out", str(tmp_path / "x.jsonl")]) == 1
    (tmp_path / "bad.json").write_text(json.dumps({"epochz": 3}))
    assert main(["train-converter", "--pairs", str(out / "lifting.json"), "--config", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "c.ckpt")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "openad.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "openad" in r.stdout
