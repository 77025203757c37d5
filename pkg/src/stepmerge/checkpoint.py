"""Versioned binary checkpoints.

Layout::

    b"SPMCKPT1"
    uint32 little-endian: manifest length in bytes
    manifest: UTF-8 JSON (names, shapes, dtypes, config and its hash)
    payload: every tensor as little-endian float32, in manifest order

Loading validates everything before touching the model, so a bad file
never leaves a half-loaded model behind.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig
from .errors import CheckpointError

MAGIC = b"SPMCKPT1"
FORMAT_VERSION = 1


def _entries(model: Backbone):
    for name, p in model.named_parameters():
        yield name, "param", p.data
    for name, buf in model.named_buffers():
        yield name, "buffer", buf


def save_checkpoint(model: Backbone, path, extra: dict | None = None) -> Path:
    path = Path(path)
    tensors, chunks = [], []
    for name, kind, arr in _entries(model):
        tensors.append({"name": name, "kind": kind, "shape": list(arr.shape), "dtype": "<f4"})
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    manifest = {
        "format": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.config_hash(),
        "tensors": tensors,
        "extra": extra or {},
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for c in chunks:
                fh.write(c)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and validate a checkpoint file; returns (manifest, name -> array)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest: {e}") from e
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')}")
    payload = memoryview(blob)[12 + hlen:]
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in manifest["tensors"]]
    if len(payload) != 4 * sum(sizes):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest needs {4 * sum(sizes)}")
    arrays, off = {}, 0
    for t, n in zip(manifest["tensors"], sizes):
        if t["dtype"] != "<f4":
            raise CheckpointError(f"{path}: unsupported dtype {t['dtype']}")
        arrays[t["name"]] = np.frombuffer(payload[off:off + 4 * n], dtype="<f4").reshape(t["shape"]).copy()
        off += 4 * n
    return manifest, arrays


def load_into(model: Backbone, path, force: bool = False) -> dict:
    manifest, arrays = read_checkpoint(path)
    if manifest["config_hash"] != model.cfg.config_hash() and not force:
        raise CheckpointError(f"{path}: config hash {manifest['config_hash']} does not match "
                              f"model {model.cfg.config_hash()}")
    expected = {name: arr.shape for name, _, arr in _entries(model)}
    found = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    if expected != found:
        missing = sorted(set(expected) ^ set(found))
        bad = sorted(k for k in set(expected) & set(found) if expected[k] != found[k])
        raise CheckpointError(f"{path}: manifest mismatch (names {missing}, shapes {bad})")
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in arrays.items():
        if name in params:
            params[name].assign(arr.astype(params[name].dtype))
        else:
            buffers[name][...] = arr
    return manifest


def load_checkpoint(path, force: bool = False) -> tuple[Backbone, dict]:
    manifest, _ = read_checkpoint(path)
    try:
        cfg = BackboneConfig(**manifest["config"])
    except TypeError as e:
        raise CheckpointError(f"{path}: config in manifest is invalid: {e}") from e
    model = Backbone(cfg)
    return model, load_into(model, path, force=force)
