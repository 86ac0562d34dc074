"""
Named-tensor checkpoint files.

Layout (all integers little-endian):

    b"CPCR" | u16 version | 32-byte SHA-256 of the canonical config JSON
    | u32 length, config JSON
    | u32 tensor count
    | per tensor: u16 name length, name, u8 ndim, u32 dims..., f32 values
    | u8 has_optimizer
    | optimizer: u64 step, f64 beta1, f64 beta2, f64 epsilon,
      then first and second moments per tensor in tensor order

The canonical config JSON uses sorted keys and compact separators, so the
digest identifies the model configuration independently of key order.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from .errors import CheckpointError, CorruptCheckpointError, DigestMismatchError
from .optim import AdamState
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"CPCR"
VERSION = 1
DIGEST_SIZE = 32


def canonical_config(config: Mapping) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(',', ':')).encode('utf-8')


def config_digest(config: Mapping) -> bytes:
    return hashlib.sha256(canonical_config(config)).digest()


@dataclass(eq=False)
class Checkpoint:
    """Model configuration, parameters and (optionally) optimizer state.

    Attributes:
        config: JSON-serialisable model configuration; its digest guards loading
        tensors: Ordered parameter name -> float32 array
        optimizer: Adam state whose moments follow the tensor order
    """
    config: Dict
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Optional[AdamState] = None

    @classmethod
    def from_params(cls, config: Mapping, params: Mapping[str, Tensor],
                    optimizer: Optional[AdamState] = None) -> "Checkpoint":
        tensors = {name: np.array(p.data, dtype=np.float32) for name, p in params.items()}
        if optimizer is not None:
            optimizer = AdamState(
                beta1=optimizer.beta1, beta2=optimizer.beta2, epsilon=optimizer.epsilon, step=optimizer.step,
                first_moment={n: np.array(optimizer.first_moment.get(n, np.zeros_like(t)), dtype=np.float32)
                              for n, t in tensors.items()},
                second_moment={n: np.array(optimizer.second_moment.get(n, np.zeros_like(t)), dtype=np.float32)
                               for n, t in tensors.items()},
            )
        return cls(json.loads(canonical_config(config)), tensors, optimizer)

    @property
    def digest(self) -> bytes:
        return config_digest(self.config)

    def to_params(self, requires_grad: bool = False) -> Dict[str, Tensor]:
        return {name: Tensor(value, requires_grad=requires_grad, name=name) for name, value in self.tensors.items()}

    def to_bytes(self) -> bytes:
        return serialize(self)


def _pack_array(out: bytearray, array: np.ndarray) -> None:
    out += np.ascontiguousarray(array, dtype='<f4').tobytes()


def serialize(checkpoint: Checkpoint) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack('<H', VERSION)
    out += checkpoint.digest
    config_bytes = canonical_config(checkpoint.config)
    out += struct.pack('<I', len(config_bytes)) + config_bytes
    out += struct.pack('<I', len(checkpoint.tensors))
    for name, array in checkpoint.tensors.items():
        encoded = name.encode('utf-8')
        out += struct.pack('<H', len(encoded)) + encoded
        out += struct.pack('<B', array.ndim)
        out += struct.pack(f'<{array.ndim}I', *array.shape)
        _pack_array(out, array)
    state = checkpoint.optimizer
    out += struct.pack('<B', 0 if state is None else 1)
    if state is not None:
        out += struct.pack('<Qddd', state.step, state.beta1, state.beta2, state.epsilon)
        for name, array in checkpoint.tensors.items():
            _pack_array(out, state.first_moment.get(name, np.zeros_like(array)))
            _pack_array(out, state.second_moment.get(name, np.zeros_like(array)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CorruptCheckpointError(
                f"checkpoint truncated: needed {size} bytes at offset {self.offset}, file has {len(self.data)}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype='<f4').astype(np.float32).reshape(shape)


def deserialize(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = reader.unpack('<H')
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = reader.take(DIGEST_SIZE)
    (config_length,) = reader.unpack('<I')
    try:
        config = json.loads(reader.take(config_length).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"unreadable config block: {e}") from e
    if config_digest(config) != digest:
        raise CorruptCheckpointError("stored config does not match the embedded digest")
    (count,) = reader.unpack('<I')
    tensors = {}
    for _ in range(count):
        (name_length,) = reader.unpack('<H')
        name = reader.take(name_length).decode('utf-8', errors='replace')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I')
        tensors[name] = reader.array(shape)
    (has_optimizer,) = reader.unpack('<B')
    if has_optimizer not in (0, 1):
        raise CorruptCheckpointError(f"invalid optimizer flag {has_optimizer}")
    optimizer = None
    if has_optimizer:
        step, beta1, beta2, epsilon = reader.unpack('<Qddd')
        optimizer = AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon, step=step)
        for name, array in tensors.items():
            optimizer.first_moment[name] = reader.array(array.shape)
            optimizer.second_moment[name] = reader.array(array.shape)
    if reader.offset != len(data):
        raise CorruptCheckpointError(f"{len(data) - reader.offset} unexpected trailing bytes")
    return Checkpoint(config, tensors, optimizer)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_bytes(serialize(checkpoint))
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path} ({len(checkpoint.tensors)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path], expected_config: Optional[Mapping] = None) -> Checkpoint:
    """Read a checkpoint file.

    Args:
        path: Checkpoint file
        expected_config: If given, the stored config digest must match it

    Raises:
        CorruptCheckpointError: bad magic, truncated data or trailing bytes
        DigestMismatchError: the stored config is not `expected_config`
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    checkpoint = deserialize(data)
    if expected_config is not None and config_digest(expected_config) != checkpoint.digest:
        raise DigestMismatchError(f"{path}: checkpoint was saved for a different model configuration")
    return checkpoint
