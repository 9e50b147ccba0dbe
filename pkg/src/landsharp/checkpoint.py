"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MSCP"                 magic
    uint32                  format version
    uint32                  header length in bytes
    header                  UTF-8 JSON, sorted keys, compact separators
    payload                 raw little-endian floats, manifest order

The header holds the model spec, hyperparameters/seed (``info``), epoch,
metrics and the manifest: one entry per parameter and batchnorm buffer with
name, kind, shape, dtype and byte offset into the payload. Mini models store
float32 (``<f4``); the quadratic oracle keeps its float64 values (``<f8``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import ModelSpec, ModelState, param_shapes

MAGIC = b"MSCP"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


class NotACheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class PayloadLengthMismatch(CheckpointError):
    pass


class ManifestMismatch(CheckpointError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def encode(state: ModelState) -> bytes:
    manifest, chunks, offset = [], [], 0
    for kind, store in (("param", state.params), ("buffer", state.buffers)):
        for name, arr in store.items():
            code = _dtype_code(arr)
            raw = np.ascontiguousarray(arr, dtype=code).tobytes()
            manifest.append({"name": name, "kind": kind, "shape": list(arr.shape),
                             "dtype": code, "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {"spec": state.spec.to_dict(), "info": state.info, "epoch": state.epoch,
              "metrics": state.metrics, "manifest": manifest, "payload_bytes": offset}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def decode(blob: bytes) -> ModelState:
    if len(blob) < _PREFIX.size or blob[:4] != MAGIC:
        raise NotACheckpoint("not a checkpoint (bad magic bytes)")
    _, version, hlen = _PREFIX.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {VERSION}")
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NotACheckpoint(f"not a checkpoint (unreadable header: {exc})") from None
    payload = blob[_PREFIX.size + hlen:]
    manifest = header["manifest"]
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) * np.dtype(e["dtype"]).itemsize
                   for e in manifest)
    if len(payload) != expected or header.get("payload_bytes") != expected:
        raise PayloadLengthMismatch(f"payload length mismatch: {len(payload)} bytes, "
                                    f"manifest describes {expected}")
    spec = ModelSpec.from_dict(header["spec"])
    params, buffers = {}, {}
    for e in manifest:
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=n, offset=e["offset"]).reshape(e["shape"])
        (params if e["kind"] == "param" else buffers)[e["name"]] = arr.astype(dt.newbyteorder("="))
    want = param_shapes(spec)
    got = {k: tuple(v.shape) for k, v in params.items()}
    if got != want or list(got) != list(want):
        raise ManifestMismatch(f"manifest does not match the {spec.arch} architecture "
                               f"(expected {want}, found {got})")
    return ModelState(spec, params, buffers, int(header["epoch"]), dict(header["metrics"]),
                      dict(header["info"]))


def save_checkpoint(state: ModelState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(state))
    return path


def load_checkpoint(path) -> ModelState:
    return decode(Path(path).read_bytes())
