"""File formats.

Metadata lives in JSON (scenes, lifting manifests, reports) or JSON Lines
(predictions); bulky arrays go to little-endian binary blobs referenced by
path relative to the JSON file:

* LiDAR points: ``u32 count`` then ``float32[count, 4]`` (x, y, z, intensity).
* Depth maps: ``u32 width, u32 height`` then ``float32[height, width]``, 0 = invalid.
* Feature maps: ``u32 H, u32 W, u32 C`` then ``float32[H, W, C]``.
* Embedding tables: ``u16 len, utf8 space_id, u32 dim, u32 count`` then per
  record ``u16 len, utf8 label, float32[dim]``.
* Converter checkpoints: ``b"OACK"``, ``u32 version``, ``u32 header length``,
  a JSON header (config, parameter names and shapes), then each parameter as
  ``float64`` in header order.

Masks are run-length encoded over the box crop in row-major order, starting
with a run of zeros.
"""

from __future__ import annotations

import json
import math
import os
import re
import struct
import warnings
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Box2D, Box3D, CameraCalib, CameraView, Domain, GroundTruthObject, MetricsReport, Prediction, \
    Scene, SemanticLabel, Task, Violation, as_task, validate_collection
from .geometry import DepthMap
from .semantics import EmbeddingTable, MissingEmbeddingError

SCHEMA_VERSION = "1.0"
SUPPORTED_SCHEMAS = {"1.0"}
CHECKPOINT_MAGIC = b"OACK"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Malformed input; ``location`` names the file position or JSON path."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class SceneValidationError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = "\n".join(f"  {v}" for v in self.violations[:20])
        more = f"\n  ... {len(self.violations) - 20} more" if len(self.violations) > 20 else ""
        super().__init__(f"{len(self.violations)} violation(s):\n{lines}{more}")


def _read_json(path) -> object:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, f"{path}:{e.lineno}:{e.colno}") from None


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _get(d, key, where, default=...):
    if not isinstance(d, dict):
        raise FormatError("expected an object", where)
    if key not in d:
        if default is ...:
            raise FormatError(f"missing field {key!r}", where)
        return default
    return d[key]


def _floats(values, n, where) -> tuple:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise FormatError("expected a list of numbers", where) from None
    if len(out) != n:
        raise FormatError(f"expected {n} numbers, got {len(out)}", where)
    return out


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


# --------------------------------------------------------------------------
# binary blobs
# --------------------------------------------------------------------------

def write_points(points: np.ndarray, path) -> None:
    pts = np.asarray(points, dtype="<f4").reshape(-1, 4)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(pts)))
        f.write(pts.tobytes())


def read_points(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError("truncated point blob", str(path))
    (n,) = struct.unpack_from("<I", data)
    if len(data) != 4 + 16 * n:
        raise FormatError(f"point blob size mismatch for {n} points", str(path))
    return np.frombuffer(data, dtype="<f4", offset=4).reshape(n, 4).astype(float)


def write_depth(depth, path) -> None:
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth)
    valid = depth.valid if isinstance(depth, DepthMap) else d > 0
    arr = np.where(valid, d, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


def read_depth(path) -> DepthMap:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError("truncated depth blob", str(path))
    w, h = struct.unpack_from("<II", data)
    if len(data) != 8 + 4 * w * h:
        raise FormatError(f"depth blob size mismatch for {w}x{h}", str(path))
    arr = np.frombuffer(data, dtype="<f4", offset=8).reshape(h, w).astype(float)
    return DepthMap(arr, arr > 0)


def write_features(features: np.ndarray, path) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError("feature map must be (H, W, C)")
    with open(path, "wb") as f:
        f.write(struct.pack("<III", *arr.shape))
        f.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("truncated feature blob", str(path))
    h, w, c = struct.unpack_from("<III", data)
    if len(data) != 12 + 4 * h * w * c:
        raise FormatError(f"feature blob size mismatch for {h}x{w}x{c}", str(path))
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, c).astype(float)


def encode_mask(mask: np.ndarray) -> dict:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    counts = []
    current, run = False, 0
    for value in flat:
        if value == current:
            run += 1
        else:
            counts.append(run)
            current, run = value, 1
    counts.append(run)
    return {"shape": list(np.shape(mask)), "counts": counts}


def decode_mask(rle: dict, where: str = "mask") -> np.ndarray:
    shape = tuple(int(x) for x in _get(rle, "shape", where))
    counts = [int(c) for c in _get(rle, "counts", where)]
    if any(c < 0 for c in counts) or sum(counts) != math.prod(shape):
        raise FormatError("run lengths do not cover the mask", where)
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(shape)


def write_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "wb") as f:
        sid = table.space_id.encode("utf-8")
        f.write(struct.pack("<H", len(sid)) + sid)
        f.write(struct.pack("<II", table.dim, len(table.entries)))
        for label, vec in table.entries.items():
            raw = label.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def read_embeddings(path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("truncated embedding file", f"{path}@{pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (slen,) = struct.unpack("<H", take(2))
    space_id = take(slen).decode("utf-8")
    dim, count = struct.unpack("<II", take(8))
    entries = {}
    for _ in range(count):
        (llen,) = struct.unpack("<H", take(2))
        label = take(llen).decode("utf-8")
        vec = np.frombuffer(take(4 * dim), dtype="<f4").astype(float)
        norm = float(np.linalg.norm(vec))
        if norm == 0:
            raise FormatError(f"zero vector for label {label!r}", str(path))
        if abs(norm - 1.0) > 1e-3:
            warnings.warn(f"embedding for {label!r} has norm {norm:.4f}; renormalising", RuntimeWarning)
        entries[label] = vec / norm
    if pos != len(data):
        raise FormatError("trailing bytes after embedding records", f"{path}@{pos}")
    return EmbeddingTable(space_id, dim, entries)


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def calib_to_dict(c: CameraCalib) -> dict:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "rotation": c.rotation.tolist(),
            "translation": c.translation.tolist(), "width": c.width, "height": c.height}


def calib_from_dict(d, where="calib") -> CameraCalib:
    rot = _get(d, "rotation", where)
    try:
        rot = np.array(rot, dtype=float)
    except (TypeError, ValueError):
        raise FormatError("rotation must be numeric", where) from None
    if rot.shape != (3, 3):
        raise FormatError("rotation must be 3x3", where)
    return CameraCalib(
        float(_get(d, "fx", where)), float(_get(d, "fy", where)), float(_get(d, "cx", where)),
        float(_get(d, "cy", where)), rot, np.array(_floats(_get(d, "translation", where), 3, where)),
        int(_get(d, "width", where)), int(_get(d, "height", where)))


def box3d_to_dict(b: Box3D) -> dict:
    return {"center": list(b.center), "size": list(b.size), "yaw": b.yaw}


def box3d_from_dict(d, where="box3d") -> Box3D:
    return Box3D(_floats(_get(d, "center", where), 3, where), _floats(_get(d, "size", where), 3, where),
                 float(_get(d, "yaw", where, 0.0)))


def box2d_to_list(b: Box2D) -> list:
    return [b.x_min, b.y_min, b.x_max, b.y_max]


def box2d_from_list(v, where="box2d") -> Box2D:
    return Box2D(*_floats(v, 4, where))


def _gt_to_dict(gt: GroundTruthObject) -> dict:
    return {
        "id": gt.id,
        "label": {"text": gt.label.text, "embedding": gt.label.embedding},
        "box3d": None if gt.box3d is None else box3d_to_dict(gt.box3d),
        "box2d": {str(cam): box2d_to_list(b) for cam, b in sorted(gt.box2d.items())},
        "seen": dict(gt.seen),
        "domain": None if gt.domain is None else gt.domain.value,
    }


def _gt_from_dict(d, where) -> GroundTruthObject:
    label = _get(d, "label", where)
    if isinstance(label, str):
        label = {"text": label}
    b3 = _get(d, "box3d", where, None)
    b2 = _get(d, "box2d", where, {}) or {}
    try:
        box2d = {int(cam): box2d_from_list(v, f"{where}.box2d[{cam}]") for cam, v in b2.items()}
    except ValueError as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError("box2d camera keys must be integers", where) from None
    domain = _get(d, "domain", where, None)
    if domain is not None and domain not in {m.value for m in Domain}:
        raise FormatError(f"unknown domain {domain!r}", where)
    seen = _get(d, "seen", where, {}) or {}
    if not isinstance(seen, dict):
        raise FormatError("seen must be an object", where)
    return GroundTruthObject(
        id=str(_get(d, "id", where)),
        label=SemanticLabel(str(_get(label, "text", where)), _get(label, "embedding", where, None)),
        box3d=None if b3 is None else box3d_from_dict(b3, f"{where}.box3d"),
        box2d=box2d,
        seen={str(k): bool(v) for k, v in seen.items()},
        domain=None if domain is None else Domain(domain),
    )


def read_scenes(path) -> list[Scene]:
    """Parse a scene file without checking invariants."""
    path = Path(path)
    doc = _read_json(path)
    version = _get(doc, "schema_version", str(path))
    if version not in SUPPORTED_SCHEMAS:
        raise FormatError(f"unsupported schema_version {version!r}", str(path))
    scenes = []
    for i, s in enumerate(_get(doc, "scenes", str(path))):
        where = f"{path}:scenes[{i}]"
        cameras = [CameraView(calib_from_dict(_get(c, "calib", f"{where}.cameras[{k}]"), f"{where}.cameras[{k}]"),
                              str(_get(c, "image", f"{where}.cameras[{k}]", "")))
                   for k, c in enumerate(_get(s, "cameras", where, []))]
        lidar = None
        ref = _get(s, "lidar", where, None)
        if ref is not None:
            blob = path.parent / str(_get(ref, "path", f"{where}.lidar"))
            if not blob.exists():
                raise FormatError(f"lidar blob {blob} not found", f"{where}.lidar")
            lidar = read_points(blob)
        gts = [_gt_from_dict(g, f"{where}.ground_truths[{k}]")
               for k, g in enumerate(_get(s, "ground_truths", where, []))]
        scenes.append(Scene(str(_get(s, "scene_id", where)), str(_get(s, "source_dataset", where, "")),
                            cameras, gts, lidar))
    return scenes


def load_scenes(path) -> list[Scene]:
    """Parse and strictly validate a scene file."""
    scenes = read_scenes(path)
    violations = validate_collection(scenes)
    if violations:
        raise SceneValidationError(violations)
    return scenes


def save_scenes(scenes: Sequence[Scene], path) -> None:
    path = Path(path)
    blob_dir = path.parent / f"{path.stem}_blobs"
    out = []
    for s in scenes:
        rec = {
            "scene_id": s.scene_id,
            "source_dataset": s.source_dataset,
            "cameras": [{"calib": calib_to_dict(c.calib), "image": c.image} for c in s.cameras],
            "lidar": None,
            "ground_truths": [_gt_to_dict(g) for g in s.ground_truths],
        }
        if s.lidar is not None:
            blob_dir.mkdir(parents=True, exist_ok=True)
            blob = blob_dir / f"{_safe_name(s.scene_id)}.lidar.bin"
            write_points(s.lidar, blob)
            rec["lidar"] = {"path": os.path.relpath(blob, path.parent)}
        out.append(rec)
    _write_json({"schema_version": SCHEMA_VERSION, "scenes": out}, path)


# --------------------------------------------------------------------------
# predictions
# --------------------------------------------------------------------------

def prediction_to_record(scene_id: str, p: Prediction, inline_embedding: bool = True) -> dict:
    task = Task.D2 if p.box2d is not None else Task.D3
    rec = {
        "scene_id": scene_id,
        "task": task.value,
        "box": box2d_to_list(p.box2d) if task is Task.D2 else box3d_to_dict(p.box3d),
        "label": p.label.text,
        "confidence": p.confidence,
        "model_id": p.model_id,
    }
    if task is Task.D2:
        rec["camera"] = p.camera
    if inline_embedding and p.embedding.size:
        rec["embedding"] = p.embedding.tolist()
    return rec


def save_predictions(predictions: Mapping[str, Sequence[Prediction]], path, inline_embedding: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for scene_id in predictions:
            for p in predictions[scene_id]:
                f.write(json.dumps(prediction_to_record(scene_id, p, inline_embedding), sort_keys=True) + "\n")


def load_predictions(path, provider=None) -> dict[str, list[Prediction]]:
    """Read a JSON Lines prediction file, grouped by scene in file order.

    Records without an inline ``embedding`` are embedded from their label via
    ``provider``; every unresolvable label is reported together.
    """
    path = Path(path)
    out: dict[str, list[Prediction]] = {}
    missing = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(e.msg, f"{where}:{e.colno}") from None
            task = as_task(_get(rec, "task", where))
            conf = float(_get(rec, "confidence", where))
            if not (math.isfinite(conf) and 0.0 <= conf <= 1.0):
                raise FormatError(f"confidence {conf} outside [0, 1]", where)
            label = str(_get(rec, "label", where))
            if not label:
                raise FormatError("empty label", where)
            box = _get(rec, "box", where)
            b2 = box2d_from_list(box, where) if task is Task.D2 else None
            b3 = box3d_from_dict(box, where) if task is Task.D3 else None
            if "embedding" in rec:
                emb = np.asarray(rec["embedding"], dtype=float)
                norm = np.linalg.norm(emb)
                if emb.ndim != 1 or norm == 0 or not np.isfinite(norm):
                    raise FormatError("embedding must be a non-zero vector", where)
                emb = emb / norm
            elif provider is None:
                missing.append(label)
                continue
            else:
                try:
                    emb = provider.embed(label)
                except MissingEmbeddingError:
                    missing.append(label)
                    continue
            out.setdefault(str(_get(rec, "scene_id", where)), []).append(Prediction(
                label=SemanticLabel(label), embedding=emb, confidence=conf,
                model_id=str(rec.get("model_id", "")), box2d=b2, box3d=b3, camera=int(rec.get("camera", 0))))
    if missing:
        raise MissingEmbeddingError(missing)
    return out


# --------------------------------------------------------------------------
# lifting manifests
# --------------------------------------------------------------------------

def save_lifting_manifest(records: Sequence[dict], path) -> None:
    """Write lifting inputs. Each record holds ``scene_id`` and ``input``
    (a LiftingInput); optional ``target`` (Box3D)."""
    path = Path(path)
    blob_dir = path.parent / f"{path.stem}_blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for i, rec in enumerate(records):
        inp = rec["input"]
        stem = f"{i:06d}_{_safe_name(rec['scene_id'])}"
        depth_path = blob_dir / f"{stem}.depth.bin"
        write_depth(inp.depth, depth_path)
        entry = {
            "scene_id": rec["scene_id"],
            "label": inp.label,
            "confidence": inp.confidence,
            "box2d": box2d_to_list(inp.box2d),
            "calib": calib_to_dict(inp.calib),
            "origin": list(inp.origin),
            "depth": os.path.relpath(depth_path, path.parent),
            "mask": encode_mask(inp.mask),
            "features": None,
            "lidar": None,
            "target": None if rec.get("target") is None else box3d_to_dict(rec["target"]),
        }
        if inp.feature_map is not None:
            fpath = blob_dir / f"{stem}.features.bin"
            write_features(inp.feature_map, fpath)
            entry["features"] = os.path.relpath(fpath, path.parent)
        if inp.lidar is not None:
            lpath = blob_dir / f"{stem}.lidar.bin"
            lid = np.asarray(inp.lidar, dtype=float)
            if lid.shape[1] == 3:
                lid = np.concatenate([lid, np.zeros((len(lid), 1))], axis=1)
            write_points(lid, lpath)
            entry["lidar"] = os.path.relpath(lpath, path.parent)
        out.append(entry)
    _write_json({"schema_version": SCHEMA_VERSION, "objects": out}, path)


def load_lifting_manifest(path) -> list[dict]:
    """Inverse of :func:`save_lifting_manifest`: records with ``scene_id``,
    ``input`` and ``target`` (None when absent)."""
    from .lifting.inputs import LiftingInput

    path = Path(path)
    doc = _read_json(path)
    version = _get(doc, "schema_version", str(path))
    if version not in SUPPORTED_SCHEMAS:
        raise FormatError(f"unsupported schema_version {version!r}", str(path))
    out = []
    for i, d in enumerate(_get(doc, "objects", str(path))):
        where = f"{path}:objects[{i}]"

        def blob(key):
            ref = _get(d, key, where, None)
            if ref is None:
                return None
            p = path.parent / str(ref)
            if not p.exists():
                raise FormatError(f"blob {p} not found", f"{where}.{key}")
            return p

        depth = read_depth(blob("depth"))
        mask = decode_mask(_get(d, "mask", where), f"{where}.mask")
        if mask.shape != depth.depth.shape:
            raise FormatError("mask shape differs from depth crop", where)
        fpath, lpath = blob("features"), blob("lidar")
        inp = LiftingInput(
            box2d=box2d_from_list(_get(d, "box2d", where), where),
            calib=calib_from_dict(_get(d, "calib", where), f"{where}.calib"),
            depth=depth, mask=mask, origin=tuple(int(x) for x in _get(d, "origin", where, [0, 0])),
            feature_map=None if fpath is None else read_features(fpath),
            lidar=None if lpath is None else read_points(lpath)[:, :3],
            label=str(_get(d, "label", where, "object")),
            confidence=float(_get(d, "confidence", where, 1.0)),
        )
        target = _get(d, "target", where, None)
        out.append({"scene_id": str(_get(d, "scene_id", where)), "input": inp,
                    "target": None if target is None else box3d_from_dict(target, f"{where}.target")})
    return out


# --------------------------------------------------------------------------
# converter checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model, path, extra: Optional[dict] = None) -> None:
    names = list(model.params)
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        f.write(raw)
        for n in names:
            f.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    from .lifting.model import ConverterConfig, ConverterModel, parameter_shapes

    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a converter checkpoint", str(path))
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", str(path))
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    config = ConverterConfig.from_dict(header["config"])
    expected = parameter_shapes(config)
    pos = 12 + hlen
    params = {}
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise FormatError(f"parameter {name} has shape {shape}, config implies {expected.get(name)}", str(path))
        n = math.prod(shape)
        if pos + 8 * n > len(data):
            raise FormatError("truncated checkpoint", str(path))
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if set(params) != set(expected) or pos != len(data):
        raise FormatError("checkpoint parameters do not match its config", str(path))
    return ConverterModel(config, params)


# --------------------------------------------------------------------------
# reports and configs
# --------------------------------------------------------------------------

def report_to_dict(report: MetricsReport, config: Optional[dict] = None) -> dict:
    return {"metrics": report.summary(), "breakdown": report.breakdown, "metadata": report.metadata,
            "config": config or {}}


def save_report(report: MetricsReport, path, config: Optional[dict] = None) -> None:
    _write_json(report_to_dict(report, config), path)


def load_grid(path):
    from .evaluation import ThresholdGrid

    d = _read_json(path)
    try:
        return ThresholdGrid(tuple(_get(d, "positional", str(path))), tuple(_get(d, "semantic", str(path))))
    except (TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(str(e), str(path)) from None


def load_json_config(path) -> dict:
    d = _read_json(path)
    if not isinstance(d, dict):
        raise FormatError("config must be a JSON object", str(path))
    return d
