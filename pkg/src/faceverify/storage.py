"""On-disk containers.

Three little-endian binary formats, each opened by a four-byte magic:

  JVNT  network checkpoint: magic, version u32, length-prefixed text
        spec, then all parameters as float64 in layer order
        (conv: weights then bias; prelu: slopes; dense: weights then
        bias), each array flattened row-major.
  JVFE  feature matrix: magic, dim u32, count u64, count*dim float32;
        a text sidecar at <path>.ids maps row -> media id, one per line.
  JVJB  joint Bayes model: magic, dim u32, M (dim^2), B (dim^2), b,
        all float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from faceverify.metric import JointBayesModel
from faceverify.micronet.network import LayerSpec, Network, NetworkSpec

__all__ = [
    "write_checkpoint",
    "read_checkpoint",
    "write_features",
    "read_features",
    "write_metric_model",
    "read_metric_model",
]

CHECKPOINT_MAGIC = b"JVNT"
CHECKPOINT_VERSION = 1
FEATURE_MAGIC = b"JVFE"
METRIC_MAGIC = b"JVJB"

_LAYER_FIELDS = {
    "conv3x3": ("in_channels", "out_channels"),
    "prelu": ("in_channels",),
    "lrn": ("size", "alpha", "beta", "k"),
    "maxpool2x2s2": (),
    "avgpool_global": (),
    "dropout": ("rate",),
    "fully_connected": ("in_channels", "out_channels"),
    "softmax_xent": (),
}


def _spec_to_text(net: Network) -> str:
    lines = [
        "input=" + ",".join(str(v) for v in net.spec.input_shape),
        f"num_classes={net.spec.num_classes}",
        f"input_mean={net.input_mean!r}",
    ]
    for spec in net.spec.layers:
        parts = [f"layer={spec.kind}"]
        if spec.name:
            parts.append(f"name={spec.name}")
        for f in _LAYER_FIELDS[spec.kind]:
            parts.append(f"{f}={getattr(spec, f)!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def _spec_from_text(text: str) -> tuple[NetworkSpec, float]:
    input_shape = None
    num_classes = None
    input_mean = 0.0
    layers: list[LayerSpec] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("input="):
            input_shape = tuple(int(v) for v in line.split("=", 1)[1].split(","))
        elif line.startswith("num_classes="):
            num_classes = int(line.split("=", 1)[1])
        elif line.startswith("input_mean="):
            input_mean = float(line.split("=", 1)[1])
        elif line.startswith("layer="):
            fields = dict(part.split("=", 1) for part in line.split(" "))
            kind = fields.pop("layer")
            kwargs = {"kind": kind, "name": fields.pop("name", "")}
            for key, raw in fields.items():
                target = "in_channels" if key == "in" else "out_channels" if key == "out" else key
                caster = int if target in ("in_channels", "out_channels", "size") else float
                kwargs[target] = caster(raw)
            layers.append(LayerSpec(**kwargs))
        else:
            raise ValueError(f"unrecognized checkpoint spec line: {line!r}")
    if input_shape is None or num_classes is None or not layers:
        raise ValueError("incomplete checkpoint spec text")
    return NetworkSpec(tuple(layers), input_shape, num_classes), input_mean


def write_checkpoint(path, net: Network) -> None:
    spec_bytes = _spec_to_text(net).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(spec_bytes)))
        fh.write(spec_bytes)
        for _, _, value, _, _ in net.param_items():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def read_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (spec_len,) = struct.unpack("<I", fh.read(4))
        spec, input_mean = _spec_from_text(fh.read(spec_len).decode("utf-8"))
        net = Network(spec)
        net.input_mean = input_mean
        for _, _, value, _, _ in net.param_items():
            raw = fh.read(value.size * 8)
            if len(raw) != value.size * 8:
                raise ValueError(f"{path}: truncated parameter data")
            value[...] = np.frombuffer(raw, dtype="<f8").reshape(value.shape)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameters")
    return net


def _ids_path(path) -> Path:
    return Path(str(path) + ".ids")


def write_features(path, features: np.ndarray, media_ids: list[str]) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {features.shape}")
    if features.shape[0] != len(media_ids):
        raise ValueError("row count does not match id count")
    count, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", count))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
    with open(_ids_path(path), "w", encoding="utf-8") as fh:
        for m in media_ids:
            fh.write(m + "\n")


def read_features(path) -> tuple[np.ndarray, list[str]]:
    """Returns (float64 matrix, media ids); values are float32 on disk."""
    with open(path, "rb") as fh:
        if fh.read(4) != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        (dim,) = struct.unpack("<I", fh.read(4))
        (count,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(count * dim * 4)
        if len(raw) != count * dim * 4:
            raise ValueError(f"{path}: truncated feature data")
        feats = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
    with open(_ids_path(path), "r", encoding="utf-8") as fh:
        media_ids = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    if len(media_ids) != count:
        raise ValueError(f"{path}: sidecar lists {len(media_ids)} ids for {count} rows")
    return feats, media_ids


def write_metric_model(path, model: JointBayesModel) -> None:
    d = model.dim
    with open(path, "wb") as fh:
        fh.write(METRIC_MAGIC)
        fh.write(struct.pack("<I", d))
        fh.write(np.ascontiguousarray(model.M, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.B, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", model.b))


def read_metric_model(path) -> JointBayesModel:
    with open(path, "rb") as fh:
        if fh.read(4) != METRIC_MAGIC:
            raise ValueError(f"{path}: not a joint Bayes model file")
        (d,) = struct.unpack("<I", fh.read(4))
        m = np.frombuffer(fh.read(d * d * 8), dtype="<f8").reshape(d, d).copy()
        b_mat = np.frombuffer(fh.read(d * d * 8), dtype="<f8").reshape(d, d).copy()
        (bias,) = struct.unpack("<d", fh.read(8))
    return JointBayesModel(m, b_mat, bias)
