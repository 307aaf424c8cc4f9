"""Weight checkpoint files: magic, length-prefixed JSON manifest, then one
little-endian float32 payload per parameter in manifest order."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ArchitectureSpec, Model, build_model

CHECKPOINT_MAGIC = b"VBCCKPT1"


class CheckpointFormatError(ValueError):
    pass


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    state: dict[str, np.ndarray]
    epoch: int
    val_dice: float
    fold_index: int
    config: dict
    val_history: list = field(default_factory=list)  # [epoch, mean dice] pairs
    curve: list = field(default_factory=list)  # per-epoch training rows

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = list(ckpt.state.keys())
    manifest = {
        "arch": ckpt.arch.to_dict(),
        "params": [{"name": n, "shape": list(ckpt.state[n].shape)} for n in names],
        "meta": {
            "epoch": int(ckpt.epoch),
            "val_dice": float(ckpt.val_dice),
            "fold_index": int(ckpt.fold_index),
            "config": ckpt.config,
            "config_hash": ckpt.config_hash,
            "val_history": [[int(e), float(d)] for e, d in ckpt.val_history],
            "curve": ckpt.curve,
        },
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(ckpt.state[n].astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        manifest = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed manifest: {exc}") from exc
    off += hlen

    state: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(raw):
            raise CheckpointFormatError(f"{path}: truncated payload at {entry['name']}")
        state[entry["name"]] = (
            np.frombuffer(raw[off : off + nbytes], dtype="<f4").reshape(shape).copy()
        )
        off += nbytes
    if off != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - off} trailing bytes")

    meta = manifest["meta"]
    return Checkpoint(
        arch=ArchitectureSpec.from_dict(manifest["arch"]),
        state=state,
        epoch=meta["epoch"],
        val_dice=meta["val_dice"],
        fold_index=meta["fold_index"],
        config=meta["config"],
        val_history=[tuple(x) for x in meta.get("val_history", [])],
        curve=meta.get("curve", []),
    )


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> Model:
    model = build_model(ckpt.arch, seed=0, dtype=dtype)
    model.load_state(ckpt.state)
    return model
