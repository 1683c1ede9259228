"""Binary parameter container: magic, version, JSON manifest, named float32 tensors.

Layout, all little-endian:
  "MTCH" | u32 version | u64 manifest length | manifest JSON (UTF-8)
  then per tensor: u32 name length | name | u32 rank | rank x u64 dims |
  row-major float32 data.
The same container carries pre-trained embedding imports and training
checkpoints.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointFormatError, CheckpointIntegrityError
from .model import Hyper, ModelParams

MAGIC = b"MTCH"
VERSION = 1
TENSOR_ORDER = ("embedding", "proj_weight", "proj_bias", "conversion")


def _manifest_bytes(params: ModelParams) -> bytes:
    manifest = {
        "D": params.hyper.dim,
        "N_c": params.hyper.n_ctx,
        "vocab_size": params.vocab_size,
        "max_len": params.hyper.max_len,
        "margin": params.hyper.margin,
    }
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Serialize all tensors as float32; the write lands atomically or not at all."""
    params.validate()
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    manifest = _manifest_bytes(params)
    payload += struct.pack("<Q", len(manifest))
    payload += manifest
    for name in TENSOR_ORDER:
        tensor = np.ascontiguousarray(getattr(params, name), dtype=np.float64)
        encoded = name.encode("utf-8")
        payload += struct.pack("<I", len(encoded))
        payload += encoded
        payload += struct.pack("<I", tensor.ndim)
        for dim in tensor.shape:
            payload += struct.pack("<Q", dim)
        payload += tensor.astype("<f4").tobytes(order="C")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise CheckpointFormatError(
                f"{self.path}: truncated at byte {self.offset} (needed {count} more)"
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str) -> ModelParams:
    """Read and validate a container; tensors come back as float64 arrays."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported container version {version}")
    manifest_len = reader.u64()
    try:
        manifest = json.loads(reader.take(manifest_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable manifest ({exc})") from exc
    for key in ("D", "N_c", "vocab_size", "max_len", "margin"):
        if key not in manifest:
            raise CheckpointIntegrityError(f"{path}: manifest missing {key!r}")

    tensors: dict[str, np.ndarray] = {}
    while reader.offset < len(reader.data):
        name = reader.take(reader.u32()).decode("utf-8")
        if name in tensors:
            raise CheckpointIntegrityError(f"{path}: duplicate tensor {name!r}")
        rank = reader.u32()
        dims = tuple(reader.u64() for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = reader.take(count * 4)
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    missing = [n for n in TENSOR_ORDER if n not in tensors]
    if missing:
        raise CheckpointIntegrityError(f"{path}: missing tensors {missing}")
    extra = [n for n in tensors if n not in TENSOR_ORDER]
    if extra:
        raise CheckpointIntegrityError(f"{path}: unexpected tensors {extra}")

    d, n_ctx, vocab_size = manifest["D"], manifest["N_c"], manifest["vocab_size"]
    expected = {
        "embedding": (vocab_size, d),
        "proj_weight": (n_ctx * d, d),
        "proj_bias": (n_ctx * d,),
        "conversion": (d, d),
    }
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointIntegrityError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, manifest implies {shape}"
            )
    params = ModelParams(
        embedding=tensors["embedding"],
        proj_weight=tensors["proj_weight"],
        proj_bias=tensors["proj_bias"],
        conversion=tensors["conversion"],
        hyper=Hyper(
            dim=int(d),
            n_ctx=int(n_ctx),
            max_len=int(manifest["max_len"]),
            margin=float(manifest["margin"]),
        ),
    )
    params.validate()
    return params
