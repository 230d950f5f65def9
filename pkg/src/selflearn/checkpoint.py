"""Binary checkpoint container for encoder parameters.

Layout (all integers little-endian u32 unless noted)::

    b"SLFTCKPT"                      8-byte magic
    version
    layer count
    per layer:  name length, UTF-8 name, rank, rank x dim, float64 LE data
    metadata length, UTF-8 JSON
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import ArcfaceHead, EncoderModel, EncoderSpec
from .errors import CheckpointFormatError, TransferIncompatibleError

MAGIC = b"SLFTCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def fingerprint(self) -> str:
        return self.metadata.get("encoder_fingerprint", "")

    @property
    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec.from_dict(self.metadata["encoder"])


def model_to_checkpoint(model: EncoderModel, **metadata) -> Checkpoint:
    meta = {
        "encoder": model.spec.to_dict(),
        "encoder_fingerprint": model.spec.fingerprint(),
        "num_classes": model.num_classes,
    }
    if model.arcface is not None:
        meta["arcface"] = {"scale": model.arcface.scale, "margin": model.arcface.margin}
    meta.update(metadata)
    return Checkpoint({k: v.copy() for k, v in model.trainable().items()}, meta)


def checkpoint_to_model(ckpt: Checkpoint) -> EncoderModel:
    """Rebuild the exact model (body and any heads) stored in ``ckpt``."""
    spec = ckpt.encoder_spec
    if spec.fingerprint() != ckpt.fingerprint:
        raise CheckpointFormatError("stored encoder spec does not match its fingerprint")
    params = {k: v.copy() for k, v in ckpt.params.items() if k != "arcface.weight"}
    model = EncoderModel(spec, params, ckpt.metadata.get("num_classes"))
    missing = [n for n in model.body_names() if n not in params]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks body parameters {missing}")
    if "arcface.weight" in ckpt.params:
        arc = ckpt.metadata.get("arcface", {})
        model.arcface = ArcfaceHead(ckpt.params["arcface.weight"].copy(),
                                    arc.get("scale", 64.0), arc.get("margin", 0.5))
    return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", ckpt.version, len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta)))
    out.append(meta)
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(8, "magic") != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(r.u32("layer count")):
        name = r.take(r.u32("name length"), "layer name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        dims = tuple(r.u32(f"{name} dims") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(8 * count, f"{name} data"), dtype="<f8")
        params[name] = data.astype(np.float64).reshape(dims)
    meta_raw = r.take(r.u32("metadata length"), "metadata")
    if r.pos != len(raw):
        raise CheckpointFormatError("trailing bytes after metadata")
    return Checkpoint(params, json.loads(meta_raw.decode("utf-8")), version)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path, expected: EncoderSpec | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expected`` the body architecture must match."""
    ckpt = from_bytes(Path(path).read_bytes())
    if expected is not None and ckpt.fingerprint != expected.fingerprint():
        raise TransferIncompatibleError(
            f"checkpoint encoder {ckpt.metadata.get('encoder')} is incompatible with {expected.to_dict()}")
    return ckpt
