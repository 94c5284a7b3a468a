import io
import logging
import struct
from typing import Dict, Tuple

import numpy as np

from poseflux.src.config.settings import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from poseflux.src.models.errors import CheckpointError
from poseflux.src.models.params import DenoiserParams, fnv1a64
from poseflux.src.services.artifacts import atomic_write_bytes

logger = logging.getLogger("poseflux.checkpoint")

META_STAGE = "meta/stage"
META_HEADS = "meta/head_count"


def _entry(name: str, value: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(value, dtype="<f8").tobytes()
    encoded = name.encode("utf-8")
    header = struct.pack("<I", len(encoded)) + encoded
    header += struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
    return header + payload + struct.pack("<Q", fnv1a64(payload))


def encode_checkpoint(params: DenoiserParams) -> bytes:
    """magic, u32 version, then one entry per tensor up to end of file."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    chunks.append(_entry(META_STAGE, np.array([float(params.stage)])))
    chunks.append(_entry(META_HEADS, np.array([float(params.head_count)])))
    for name, value in params.items():
        chunks.append(_entry(name, value))
    return b"".join(chunks)


def _read(stream: io.BytesIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def decode_checkpoint(data: bytes) -> DenoiserParams:
    stream = io.BytesIO(data)
    if _read(stream, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read(stream, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    tensors: Dict[str, np.ndarray] = {}
    while stream.tell() < len(data):
        (length,) = struct.unpack("<I", _read(stream, 4, "name length"))
        name = _read(stream, length, "name").decode("utf-8", errors="replace")
        (rank,) = struct.unpack("<I", _read(stream, 4, f"{name} rank"))
        shape: Tuple[int, ...] = struct.unpack(f"<{rank}I", _read(stream, 4 * rank, f"{name} shape"))
        count = int(np.prod(shape, dtype=np.int64))
        payload = _read(stream, 8 * count, f"{name} payload")
        (digest,) = struct.unpack("<Q", _read(stream, 8, f"{name} digest"))
        if fnv1a64(payload) != digest:
            raise CheckpointError(f"digest mismatch for {name}")
        if name in tensors:
            raise CheckpointError(f"duplicate entry {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)

    try:
        stage = int(tensors.pop(META_STAGE)[0])
        heads = int(tensors.pop(META_HEADS)[0])
        return DenoiserParams.from_flat(tensors, head_count=heads, stage=stage)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"incomplete checkpoint: {e}")


def save_checkpoint(path: str, params: DenoiserParams) -> None:
    atomic_write_bytes(path, encode_checkpoint(params))
    logger.info(f"Wrote checkpoint {path} (stage {params.stage})")


def load_checkpoint(path: str) -> DenoiserParams:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint: {e.strerror}")
    try:
        params = decode_checkpoint(data)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}")
    logger.info(f"Loaded checkpoint {path} (stage {params.stage}, c={params.channels})")
    return params
