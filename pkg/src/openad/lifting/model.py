"""The 2-D to 3-D box converter network, in plain NumPy.

Two branches feed a small MLP head:

* point branch: a per-point MLP shared across points, then a channel-wise
  max over points (PointNet style, permutation invariant);
* grid branch: two stride-2 3x3 convolutions over the (depth | features)
  patch, then global average pooling.

The head regresses 8 numbers per object: center offset from the pseudo-cloud
centroid (3), log size (3), and yaw as (sin, cos).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Box3D, normalize_yaw
from ..geometry import pca_obb
from .inputs import LiftingInput, PreparedObject, lift_cloud, prepare_input, resample_grid

N_OUTPUTS = 8
LOG_SIZE_LIMIT = 8.0


@dataclass(frozen=True)
class ConverterConfig:
    feature_channels: int = 0
    point_hidden: tuple = (64, 128)
    conv_channels: tuple = (8, 16)
    head_hidden: int = 128
    grid_size: int = 32
    max_points: int = 128
    use_point_branch: bool = True
    use_grid_branch: bool = True
    depth_scale: float = 0.1
    learning_rate: float = 2e-3
    lr_final_ratio: float = 0.01
    epochs: int = 40
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "point_hidden", tuple(int(x) for x in self.point_hidden))
        object.__setattr__(self, "conv_channels", tuple(int(x) for x in self.conv_channels))
        if not (self.use_point_branch or self.use_grid_branch):
            raise ValueError("at least one feature branch must be enabled")
        if len(self.point_hidden) != 2 or len(self.conv_channels) != 2:
            raise ValueError("point_hidden and conv_channels take exactly two sizes")
        if self.grid_size % 4:
            raise ValueError("grid_size must be divisible by 4")

    @property
    def point_input_dim(self) -> int:
        return 3 + self.feature_channels + 1

    @property
    def grid_input_channels(self) -> int:
        return 1 + self.feature_channels

    @property
    def head_input_dim(self) -> int:
        return (self.point_hidden[1] if self.use_point_branch else 0) + \
            (self.conv_channels[1] if self.use_grid_branch else 0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["point_hidden"] = list(self.point_hidden)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConverterConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown converter settings: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(cfg: ConverterConfig) -> dict[str, tuple]:
    shapes = {}
    if cfg.use_point_branch:
        h1, h2 = cfg.point_hidden
        shapes.update({"point.w1": (cfg.point_input_dim, h1), "point.b1": (h1,),
                       "point.w2": (h1, h2), "point.b2": (h2,)})
    if cfg.use_grid_branch:
        c1, c2 = cfg.conv_channels
        shapes.update({"grid.k1": (9 * cfg.grid_input_channels, c1), "grid.b1": (c1,),
                       "grid.k2": (9 * c1, c2), "grid.b2": (c2,)})
    shapes.update({"head.w1": (cfg.head_input_dim, cfg.head_hidden), "head.b1": (cfg.head_hidden,),
                   "head.w2": (cfg.head_hidden, N_OUTPUTS), "head.b2": (N_OUTPUTS,)})
    return shapes


def init_params(cfg: ConverterConfig) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases, drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) * math.sqrt(2.0 / shape[0])
    params["head.w2"] *= 0.1
    return params


@dataclass
class ConverterModel:
    config: ConverterConfig
    params: dict

    @classmethod
    def initialize(cls, config: ConverterConfig = ConverterConfig()) -> "ConverterModel":
        return cls(config, init_params(config))

    def prepare(self, inp: LiftingInput) -> PreparedObject:
        c = self.config
        if inp.n_feature_channels != c.feature_channels:
            raise ValueError(f"input has {inp.n_feature_channels} feature channels, "
                             f"model expects {c.feature_channels}")
        return prepare_input(inp, c.grid_size, c.max_points, c.depth_scale)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    """3x3, stride 2, pad 1 patches of an NHWC tensor -> (B, Ho, Wo, 9 * C)."""
    b, h, w, c = x.shape
    ho, wo = (h - 1) // 2 + 1, (w - 1) // 2 + 1
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = [xp[:, ki:ki + 2 * ho:2, kj:kj + 2 * wo:2, :] for ki in range(3) for kj in range(3)]
    return np.concatenate(cols, axis=-1)


def _col2im(dcols: np.ndarray, shape: tuple) -> np.ndarray:
    b, h, w, c = shape
    ho, wo = dcols.shape[1:3]
    dxp = np.zeros((b, h + 2, w + 2, c))
    k = 0
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + 2 * ho:2, kj:kj + 2 * wo:2, :] += dcols[..., k * c:(k + 1) * c]
            k += 1
    return dxp[:, 1:-1, 1:-1, :]


def forward(params: dict, cfg: ConverterConfig, points: np.ndarray, grids: np.ndarray):
    """Batched forward pass.

    ``points`` is (B, N, point_input_dim); ``grids`` is (B, G, G, C_in).
    Returns the raw (B, 8) head output and a cache for :func:`backward`.
    """
    cache = {}
    feats = []
    if cfg.use_point_branch:
        pre1 = points @ params["point.w1"] + params["point.b1"]
        h1 = np.maximum(pre1, 0.0)
        pre2 = h1 @ params["point.w2"] + params["point.b2"]
        h2 = np.maximum(pre2, 0.0)
        arg = np.argmax(h2, axis=1)
        f_p = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
        cache.update(points=points, pre1=pre1, h1=h1, pre2=pre2, arg=arg, n_points=points.shape[1])
        feats.append(f_p)
    if cfg.use_grid_branch:
        cols1 = _im2col(grids)
        a1 = cols1 @ params["grid.k1"] + params["grid.b1"]
        r1 = np.maximum(a1, 0.0)
        cols2 = _im2col(r1)
        a2 = cols2 @ params["grid.k2"] + params["grid.b2"]
        r2 = np.maximum(a2, 0.0)
        f_c = r2.mean(axis=(1, 2))
        cache.update(grid_shape=grids.shape, cols1=cols1, a1=a1, r1_shape=r1.shape, cols2=cols2, a2=a2)
        feats.append(f_c)
    z = np.concatenate(feats, axis=1)
    hpre = z @ params["head.w1"] + params["head.b1"]
    hid = np.maximum(hpre, 0.0)
    out = hid @ params["head.w2"] + params["head.b2"]
    cache.update(z=z, hpre=hpre, hid=hid)
    return out, cache


def backward(params: dict, cfg: ConverterConfig, cache: dict, dout: np.ndarray) -> dict:
    grads = {}
    grads["head.w2"] = cache["hid"].T @ dout
    grads["head.b2"] = dout.sum(axis=0)
    dh = (dout @ params["head.w2"].T) * (cache["hpre"] > 0)
    grads["head.w1"] = cache["z"].T @ dh
    grads["head.b1"] = dh.sum(axis=0)
    dz = dh @ params["head.w1"].T

    offset = 0
    if cfg.use_point_branch:
        dp = cfg.point_hidden[1]
        df_p = dz[:, offset:offset + dp]
        offset += dp
        b, n = df_p.shape[0], cache["n_points"]
        dh2 = np.zeros((b, n, dp))
        np.put_along_axis(dh2, cache["arg"][:, None, :], df_p[:, None, :], axis=1)
        dpre2 = dh2 * (cache["pre2"] > 0)
        grads["point.w2"] = np.einsum("bni,bnj->ij", cache["h1"], dpre2)
        grads["point.b2"] = dpre2.sum(axis=(0, 1))
        dpre1 = (dpre2 @ params["point.w2"].T) * (cache["pre1"] > 0)
        grads["point.w1"] = np.einsum("bni,bnj->ij", cache["points"], dpre1)
        grads["point.b1"] = dpre1.sum(axis=(0, 1))
    if cfg.use_grid_branch:
        dc = cfg.conv_channels[1]
        df_c = dz[:, offset:offset + dc]
        a2 = cache["a2"]
        ho, wo = a2.shape[1:3]
        da2 = np.broadcast_to(df_c[:, None, None, :] / (ho * wo), a2.shape) * (a2 > 0)
        c2 = cache["cols2"]
        grads["grid.k2"] = c2.reshape(-1, c2.shape[-1]).T @ da2.reshape(-1, dc)
        grads["grid.b2"] = da2.sum(axis=(0, 1, 2))
        dr1 = _col2im(da2 @ params["grid.k2"].T, cache["r1_shape"])
        da1 = dr1 * (cache["a1"] > 0)
        c1 = cache["cols1"]
        grads["grid.k1"] = c1.reshape(-1, c1.shape[-1]).T @ da1.reshape(-1, da1.shape[-1])
        grads["grid.b1"] = da1.sum(axis=(0, 1, 2))
    return grads


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def targets_for(prepared: PreparedObject, box: Box3D) -> np.ndarray:
    """(offset xyz, log size, yaw) regression target."""
    return np.concatenate([np.asarray(box.center) - prepared.centroid, np.log(box.size), [box.yaw]])


def box_loss(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of L1(center) + L1(log size) + (1 - cos(yaw error)).

    Returns the loss and its gradient with respect to ``out``.
    """
    b = out.shape[0]
    d_off = out[:, :3] - target[:, :3]
    d_size = out[:, 3:6] - target[:, 3:6]
    s, c = out[:, 6], out[:, 7]
    sg, cg = np.sin(target[:, 6]), np.cos(target[:, 6])
    r = np.sqrt(s * s + c * c + 1e-12)
    cos_err = (c * cg + s * sg) / r
    loss = (np.abs(d_off).sum() + np.abs(d_size).sum() + (1.0 - cos_err).sum()) / b
    grad = np.zeros_like(out)
    grad[:, :3] = np.sign(d_off)
    grad[:, 3:6] = np.sign(d_size)
    num = c * cg + s * sg
    grad[:, 6] = -(sg / r - num * s / r ** 3)
    grad[:, 7] = -(cg / r - num * c / r ** 3)
    return float(loss), grad / b


# --------------------------------------------------------------------------
# single-object feature extraction and decoding
# --------------------------------------------------------------------------

def _pad_points(points: np.ndarray, n: int) -> np.ndarray:
    # repetition leaves the max-pool unchanged
    return points[np.arange(n) % len(points)]


def stack_batch(objects, cfg: ConverterConfig) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(o.points) for o in objects)
    pts = np.stack([_pad_points(o.points, n) for o in objects])
    grids = np.stack([o.grid for o in objects])
    return pts, grids


def _rowwise_dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit product-sum: each row is reduced in the same order wherever it
    # sits in x, which BLAS blocking does not promise
    return (x[:, :, None] * w[None, :, :]).sum(axis=1) + b


def extract_point_features(per_point: np.ndarray, model: ConverterModel) -> np.ndarray:
    """Max-pooled point-branch feature for one object's (N, D) per-point
    inputs; bitwise invariant to point order and multiplicity."""
    per_point = np.asarray(per_point, dtype=float)
    if per_point.ndim != 2 or len(per_point) == 0:
        raise ValueError("empty pseudo cloud")
    p = model.params
    h1 = np.maximum(_rowwise_dense(per_point, p["point.w1"], p["point.b1"]), 0.0)
    h2 = np.maximum(_rowwise_dense(h1, p["point.w2"], p["point.b2"]), 0.0)
    return h2.max(axis=0)


def extract_grid_features(depth_patch: np.ndarray, feature_patch: Optional[np.ndarray],
                          model: ConverterModel) -> np.ndarray:
    """Conv + global-average-pool feature of a (H, W) depth patch and an
    optional (H, W, C) feature patch; both are resampled to the model grid."""
    depth_patch = np.asarray(depth_patch, dtype=float)
    if depth_patch.ndim != 2 or depth_patch.size == 0:
        raise ValueError("degenerate patch: zero area")
    size = model.config.grid_size
    chans = [resample_grid(depth_patch[..., None], size)]
    if feature_patch is not None:
        chans.append(resample_grid(np.asarray(feature_patch, dtype=float), size))
    grid = np.concatenate(chans, axis=-1)[None]
    if grid.shape[-1] != model.config.grid_input_channels:
        raise ValueError(f"patch has {grid.shape[-1]} channels, model expects {model.config.grid_input_channels}")
    p = model.params
    r1 = np.maximum(_im2col(grid) @ p["grid.k1"] + p["grid.b1"], 0.0)
    r2 = np.maximum(_im2col(r1) @ p["grid.k2"] + p["grid.b2"], 0.0)
    return r2.mean(axis=(1, 2))[0]


def decode(raw: np.ndarray, centroid: np.ndarray) -> Box3D:
    raw = np.asarray(raw, dtype=float)
    size = np.exp(np.clip(raw[3:6], -LOG_SIZE_LIMIT, LOG_SIZE_LIMIT))
    yaw = math.atan2(float(raw[6]), float(raw[7]))
    return Box3D(tuple(np.asarray(centroid) + raw[:3]), tuple(size), normalize_yaw(yaw))


def predict_prepared(objects, model: ConverterModel, batch_size: int = 256) -> list[Box3D]:
    boxes = []
    for start in range(0, len(objects), batch_size):
        chunk = objects[start:start + batch_size]
        pts, grids = stack_batch(chunk, model.config)
        out, _ = forward(model.params, model.config, pts, grids)
        boxes.extend(decode(o, obj.centroid) for o, obj in zip(out, chunk))
    return boxes


def predict_box(inp: LiftingInput, model: Optional[ConverterModel], decoder: str = "mlp") -> Box3D:
    """Lift one 2-D detection to a 3-D box with the MLP head or by PCA fitting."""
    if decoder == "pca":
        _, cloud = lift_cloud(inp)
        return pca_obb(cloud.points)
    if decoder != "mlp":
        raise ValueError(f"unknown decoder {decoder!r}")
    if model is None:
        raise ValueError("the mlp decoder needs a model")
    return predict_prepared([model.prepare(inp)], model)[0]
