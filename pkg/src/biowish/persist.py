"""Model container: magic + version, JSON manifest, little-endian float64 blob.

Layout::

    b"BIOWISH\\0"            8 bytes
    version                 uint32 LE
    manifest length         uint64 LE
    manifest                UTF-8 JSON (sorted keys)
    blob                    float64 LE arrays, concatenated in manifest order

The manifest's ``arrays`` entry lists ``[name, shape]`` pairs in blob order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .neural import Network
from .svm import SvmModel

MAGIC = b"BIOWISH\0"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _pack(manifest: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    manifest = dict(manifest)
    manifest["arrays"] = [[name, list(np.shape(a))] for name, a in arrays]
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<IQ", VERSION, len(text)) + text + blob


def _unpack(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:8] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    version, length = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version}")
    manifest = json.loads(raw[20:20 + length].decode())
    offset = 20 + length
    arrays = {}
    for name, shape in manifest["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ModelFileError("truncated parameter blob")
        arrays[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ModelFileError("trailing bytes after parameter blob")
    return manifest, arrays


def network_bytes(net: Network, training: str | None = None, seed: int | None = None,
                  hyperparameters: dict | None = None, extra: dict | None = None) -> bytes:
    manifest = {
        "kind": "network",
        "architecture": net.arch,
        "network": net.spec(),
        "training": training,
        "seed": seed,
        "hyperparameters": hyperparameters or {},
    }
    if extra:
        manifest.update(extra)
    return _pack(manifest, list(net.named_arrays()))


def svm_bytes(model: SvmModel, extra: dict | None = None) -> bytes:
    manifest = {"kind": "svm-rbf", "gamma": model.gamma, "C": model.C, "bias": model.bias,
                "n_iter": model.n_iter}
    if extra:
        manifest.update(extra)
    arrays = [("support_vectors", model.support_vectors), ("dual_coef", model.dual_coef),
              ("mean", model.mean), ("scale", model.scale)]
    return _pack(manifest, arrays)


def gallery_bytes(references: np.ndarray, extra: dict) -> bytes:
    return _pack({"kind": "gallery", **extra}, [("references", references)])


def save(path, data: bytes) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_manifest(path) -> dict:
    manifest, _ = _unpack(Path(path).read_bytes())
    return manifest


def load(path):
    """Return ``(object, manifest)``; the object is a Network, SvmModel or reference array."""
    manifest, arrays = _unpack(Path(path).read_bytes())
    kind = manifest.get("kind")
    if kind == "network":
        net = Network.from_spec(manifest["network"])
        for name, value in arrays.items():
            net.set_array(name, value)
        return net, manifest
    if kind == "svm-rbf":
        model = SvmModel(arrays["support_vectors"], arrays["dual_coef"], manifest["bias"],
                         manifest["gamma"], manifest["C"], arrays["mean"], arrays["scale"],
                         manifest.get("n_iter", 0))
        return model, manifest
    if kind == "gallery":
        return arrays["references"], manifest
    raise ModelFileError(f"unknown model kind {kind!r}")
