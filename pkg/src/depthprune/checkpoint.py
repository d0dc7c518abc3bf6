"""Checkpoint files: a JSON manifest plus a raw little-endian float32 blob.

The blob holds, per layer in declaration order: weights, bias, mask, and the
PReLU slopes when present.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Activation, Layer, Network

FORMAT = "depthprune-checkpoint"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _blob_path(manifest: Path) -> Path:
    return manifest.with_suffix(".bin")


def save_checkpoint(net: Network, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = []
    layers = []
    for layer in net.layers:
        arrays = [layer.weights, layer.bias, layer.mask]
        entry = layer.describe()
        entry["weights_shape"] = list(layer.weights.shape)
        if layer.activation.alpha is not None:
            arrays.append(layer.activation.alpha)
            entry["alpha"] = True
        layers.append(entry)
        chunks.extend(np.ascontiguousarray(a, dtype=_LE_F32).ravel() for a in arrays)
    blob = np.concatenate(chunks) if chunks else np.zeros(0, _LE_F32)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "blob": _blob_path(path).name,
        "n_floats": int(blob.size),
        "layers": layers,
    }
    if extra:
        manifest["extra"] = extra
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _blob_path(path).write_bytes(blob.tobytes())
    return path


def load_checkpoint(path: str | Path) -> Network:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} manifest")
    raw = (path.parent / manifest["blob"]).read_bytes()
    blob = np.frombuffer(raw, dtype=_LE_F32)
    if blob.size != manifest["n_floats"]:
        raise CheckpointError(f"blob holds {blob.size} floats, manifest declares {manifest['n_floats']}")
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        if pos + size > blob.size:
            raise CheckpointError("blob is shorter than the manifest layout")
        out = blob[pos : pos + size].astype(np.float32).reshape(shape)
        pos += size
        return out

    layers = []
    for entry in manifest["layers"]:
        shape = tuple(entry["weights_shape"])
        w = take(shape)
        b = take((shape[0],))
        m = take(shape)
        act_d = entry["activation"]
        act = Activation(act_d["kind"], slope=act_d.get("slope", 0.01))
        if entry.get("alpha"):
            act.alpha = take((shape[0],))
        layers.append(
            Layer(entry["kind"], w, b, m, act, entry.get("stride", 1), entry.get("pad", 0))
        )
    if pos != blob.size:
        raise CheckpointError("blob has trailing data")
    return Network(layers)
