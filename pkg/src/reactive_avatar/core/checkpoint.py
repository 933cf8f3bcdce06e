"""
Checkpoint IO module.

This module implements the binary tensor encoding shared by every
reactive_avatar container, the AFCK parameter checkpoint format built on
it, and the `key = value` sidecar files that carry provenance metadata.

AFCK layout (little-endian): magic "AFCK", u32 version = 1, u32 entry
count; per entry: u32 name length, UTF-8 name, u8 dtype (0 = f32), u8
rank, rank x u64 extents, row-major payload.
"""

import hashlib
import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Union

import numpy as np
import torch

from ..utils.kv_file import dump_kv, load_kv_file
from .errors import ArtifactIOError, CheckpointFormatError
from .params import ParamStore

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AFCK"
CHECKPOINT_VERSION = 1
DTYPE_F32 = 0
META_SUFFIX = ".meta"

PathLike = Union[str, Path]


class ByteReader:
    """
    Sequential reader over an in-memory buffer that reports truncation.

    Args:
        data: The bytes to read.
        source: Name used in error messages.
    """

    def __init__(self, data: bytes, source: str = "<bytes>"):
        self.data = data
        self.offset = 0
        self.source = source

    def read(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointFormatError(
                "truncated",
                f"{self.source}: needed {size} bytes at offset {self.offset}, "
                f"only {len(self.data) - self.offset} left",
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.read(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def expect_magic(self, magic: bytes) -> None:
        found = self.read(len(magic))
        if found != magic:
            raise CheckpointFormatError(
                "bad-magic", f"{self.source}: expected magic {magic!r}, found {found!r}"
            )

    def expect_version(self, version: int) -> None:
        found = self.u32()
        if found != version:
            raise CheckpointFormatError(
                "bad-version", f"{self.source}: expected version {version}, found {found}"
            )

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.data)


def encode_tensor(tensor: torch.Tensor, out: BinaryIO) -> None:
    """Write a tensor as dtype, rank, extents and f32 little-endian payload."""
    array = tensor.detach().cpu().numpy().astype("<f4", copy=False)
    out.write(struct.pack("<BB", DTYPE_F32, array.ndim))
    for extent in array.shape:
        out.write(struct.pack("<Q", extent))
    out.write(np.ascontiguousarray(array).tobytes(order="C"))


def decode_tensor(reader: ByteReader) -> torch.Tensor:
    """Read a tensor written by `encode_tensor`."""
    dtype = reader.u8()
    if dtype != DTYPE_F32:
        raise CheckpointFormatError("bad-dtype", f"{reader.source}: unsupported dtype code {dtype}")
    rank = reader.u8()
    shape = [reader.u64() for _ in range(rank)]
    count = int(np.prod(shape)) if shape else 1
    payload = reader.read(4 * count)
    array = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return torch.from_numpy(array.copy())


def encode_name(name: str, out: BinaryIO) -> None:
    raw = name.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def decode_name(reader: ByteReader) -> str:
    return reader.read(reader.u32()).decode("utf-8")


def params_to_bytes(store: ParamStore) -> bytes:
    """Serialise a store to AFCK bytes."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<II", CHECKPOINT_VERSION, len(store)))
    for name, tensor in store.items():
        encode_name(name, out)
        encode_tensor(tensor, out)
    return out.getvalue()


def params_from_bytes(data: bytes, source: str = "<bytes>", requires_grad: bool = True) -> ParamStore:
    """
    Parse AFCK bytes.

    Raises:
        CheckpointFormatError: On bad magic, version, truncation, duplicate
                               names or an unknown dtype.
    """
    reader = ByteReader(data, source)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    count = reader.u32()
    store = ParamStore()
    for _ in range(count):
        name = decode_name(reader)
        tensor = decode_tensor(reader)
        if name in store:
            raise CheckpointFormatError("duplicate-name", f"{source}: entry '{name}' appears twice")
        store.add(name, tensor, requires_grad=requires_grad)
    if not reader.exhausted:
        raise CheckpointFormatError(
            "truncated", f"{source}: {len(data) - reader.offset} trailing bytes after {count} entries"
        )
    return store


def save_params(store: ParamStore, path: PathLike) -> None:
    """
    Write a parameter store to an AFCK checkpoint file.

    Raises:
        ArtifactIOError: If the file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(params_to_bytes(store))
    except OSError as e:
        raise ArtifactIOError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug(f"Saved {len(store)} tensors to {path}")


def load_params(path: PathLike, requires_grad: bool = True) -> ParamStore:
    """
    Read an AFCK checkpoint file.

    Raises:
        ArtifactIOError: If the file cannot be read.
        CheckpointFormatError: If the file is not a valid checkpoint.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read checkpoint {path}: {e}") from e
    return params_from_bytes(data, source=str(path), requires_grad=requires_grad)


def file_digest(path: PathLike) -> str:
    """Return the first 16 hex digits of a file's SHA-256."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def meta_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + META_SUFFIX)


def write_meta(path: PathLike, meta: Mapping[str, object]) -> None:
    """Write the provenance sidecar of an artifact."""
    try:
        meta_path(path).write_text(dump_kv(meta), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write metadata for {path}: {e}") from e


def read_meta(path: PathLike) -> Dict[str, str]:
    """
    Read the provenance sidecar of an artifact.

    Returns:
        The sidecar contents, or an empty mapping when there is none.
    """
    sidecar = meta_path(path)
    if not sidecar.exists():
        return {}
    return load_kv_file(sidecar)


def split_prefix(store: ParamStore, prefix: str) -> ParamStore:
    """Return the entries of `store` under `prefix`, with the prefix removed."""
    result = ParamStore()
    for name, tensor in store.items():
        if name.startswith(prefix):
            result.add(name[len(prefix):], tensor, store.requires_grad(name))
    return result


def with_prefix(store: ParamStore, prefix: str) -> ParamStore:
    """Return a copy of `store` whose names carry `prefix`."""
    result = ParamStore()
    for name, tensor in store.items():
        result.add(prefix + name, tensor, store.requires_grad(name))
    return result
