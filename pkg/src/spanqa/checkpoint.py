"""Self-describing binary checkpoints.

Layout: ASCII magic ``QACKPT1\\n``, an 8-byte little-endian length, a JSON
metadata block (format version, model config, iteration, counter-based RNG
root, and a tensor manifest of name/shape/byte-offset), then the raw
little-endian float64 tensor payloads in manifest order. Adam moments are
stored alongside parameters under ``adam.m/`` and ``adam.v/`` names.
Writes go to a temp file and are renamed into place, so an interrupted save
never corrupts an existing checkpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig
from .training import AdamState

__all__ = ["MAGIC", "FORMAT_VERSION", "CheckpointError", "CheckpointMagicError",
           "CheckpointVersionError", "CheckpointTruncatedError",
           "CheckpointData", "save_checkpoint", "load_checkpoint"]

MAGIC = b"QACKPT1\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """The file declares an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The tensor payload is shorter or longer than the manifest promises."""


@dataclass
class CheckpointData:
    config: ModelConfig
    params: dict[str, np.ndarray]
    state: AdamState
    iteration: int


def _collect_tensors(params: dict[str, np.ndarray],
                     state: AdamState) -> dict[str, np.ndarray]:
    tensors = dict(params)
    for name, value in state.m.items():
        tensors[f"adam.m/{name}"] = value
    for name, value in state.v.items():
        tensors[f"adam.v/{name}"] = value
    return tensors


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig,
                    state: AdamState, iteration: int | None = None) -> None:
    """Atomically write params + optimizer state; bit-exact round trip."""
    if iteration is None:
        iteration = state.step
    tensors = _collect_tensors(params, state)
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    metadata = {
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "iteration": iteration,
        "adam": {"step": state.step, "beta1": state.beta1, "beta2": state.beta2,
                 "eps": state.eps},
        "rng_state": {"scheme": "counter-v1", "seed": config.seed},
        "tensors": manifest,
    }
    meta_bytes = json.dumps(metadata, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(len(meta_bytes).to_bytes(8, "little"))
        handle.write(meta_bytes)
        for blob in blobs:
            handle.write(blob)
    os.replace(tmp_path, path)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as handle:
        raw = handle.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not a checkpoint file")
    cursor = len(MAGIC)
    meta_len = int.from_bytes(raw[cursor:cursor + 8], "little")
    cursor += 8
    if len(raw) < cursor + meta_len:
        raise CheckpointTruncatedError(f"{path}: metadata block truncated")
    metadata = json.loads(raw[cursor:cursor + meta_len].decode("utf-8"))
    if metadata.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {metadata.get('version')!r}, "
            f"expected {FORMAT_VERSION}")
    payload = raw[cursor + meta_len:]
    expected = sum(
        int(np.prod(entry["shape"], dtype=np.int64)) * 8 if entry["shape"] else 8
        for entry in metadata["tensors"])
    if len(payload) != expected:
        raise CheckpointTruncatedError(
            f"{path}: payload is {len(payload)} bytes, manifest expects {expected}")
    tensors: dict[str, np.ndarray] = {}
    for entry in metadata["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        block = payload[start:start + size * 8]
        tensors[entry["name"]] = np.frombuffer(block, dtype="<f8").reshape(shape).copy()
    params = {name: value for name, value in tensors.items()
              if not name.startswith("adam.")}
    adam_meta = metadata["adam"]
    state = AdamState(
        m={name: tensors[f"adam.m/{name}"] for name in params},
        v={name: tensors[f"adam.v/{name}"] for name in params},
        step=adam_meta["step"],
        beta1=adam_meta["beta1"],
        beta2=adam_meta["beta2"],
        eps=adam_meta["eps"],
    )
    config = ModelConfig.from_dict(metadata["config"])
    return CheckpointData(config=config, params=params, state=state,
                          iteration=metadata["iteration"])
