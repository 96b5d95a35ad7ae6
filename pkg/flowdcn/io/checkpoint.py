# flowdcn/io/checkpoint.py

"""
Binary checkpoint format.

    b"FDCN" | version: uint32 LE | header length: uint64 LE | header (UTF-8) |
    payload | FNV-1a 64 of payload: uint64 LE

Header lines, in order:

    meta <key> <value>
    param <name> <shape, e.g. 3x4> <f32|f64> <byte offset into payload>

Parameters are stored little-endian, contiguous, in header order. Writing is fully
deterministic, so save -> load -> save reproduces the file byte for byte.
"""

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from logging import getLogger
from pathlib import Path
from struct import pack
from struct import unpack_from
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import DType
from flowdcn.exceptions import CheckpointException
from flowdcn.exceptions import ChecksumException
from flowdcn.utils.types import MetaDict
from flowdcn.utils.types import ParamDict
from flowdcn.utils.types import Shape

MAGIC = b"FDCN"
FORMAT_VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF
_PREFIX = 4 + 4 + 8

_NUMPY_DTYPES = {DType.F32: np.dtype("<f4"), DType.F64: np.dtype("<f8")}


def fnv1a_64(data: Union[bytes, memoryview]) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in bytes(data):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class ParamEntry:
    """One `param` header line."""

    name: str
    shape: Shape
    dtype: DType
    offset: int

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * _NUMPY_DTYPES[self.dtype].itemsize

    def line(self) -> str:
        shape = "x".join(str(n) for n in self.shape) if self.shape else "scalar"
        return f"param {self.name} {shape} {self.dtype.value} {self.offset}"


@dataclass
class Checkpoint:
    """A loaded checkpoint: ordered parameters plus string metadata."""

    params: ParamDict
    meta: Dict[str, str] = field(default_factory=dict)
    entries: List[ParamEntry] = field(default_factory=list)
    version: int = FORMAT_VERSION


def _meta_text(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def encode_checkpoint(
    params: ParamDict, meta: Optional[MetaDict] = None, dtype: DType = DType.F64
) -> bytes:
    """
    Serialize parameters and metadata.

    Args:
        params: Ordered name -> array mapping
        meta: Key -> value pairs; keys and values may not contain whitespace
        dtype: Storage dtype for every array

    Returns:
        Checkpoint bytes

    Raises:
        CheckpointException: If a name, key or value cannot be written to the header
    """
    dtype = DType(dtype)
    np_dtype = _NUMPY_DTYPES[dtype]
    lines: List[str] = []
    for key, value in (meta or {}).items():
        text = _meta_text(value)
        if not key or any(ch.isspace() for ch in key + text) or not text:
            raise CheckpointException(
                f"Meta entry {key!r}={text!r} is empty or has whitespace", key
            )
        lines.append(f"meta {key} {text}")
    chunks: List[bytes] = []
    offset = 0
    for name, value in params.items():
        if not name or any(ch.isspace() for ch in name):
            raise CheckpointException(f"Parameter name {name!r} is empty or has whitespace", name)
        data = np.ascontiguousarray(value, dtype=np_dtype).tobytes()
        entry = ParamEntry(name, tuple(int(n) for n in np.shape(value)), dtype, offset)
        lines.append(entry.line())
        chunks.append(data)
        offset += len(data)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(chunks)
    return (
        MAGIC
        + pack("<I", FORMAT_VERSION)
        + pack("<Q", len(header))
        + header
        + payload
        + pack("<Q", fnv1a_64(payload))
    )


def _parse_header(text: str) -> Tuple[Dict[str, str], List[ParamEntry]]:
    meta: Dict[str, str] = {}
    entries: List[ParamEntry] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        parts = line.split(" ")
        if parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif parts[0] == "param" and len(parts) == 5:
            _, name, shape_text, dtype_text, offset_text = parts
            try:
                if shape_text == "scalar":
                    shape: Shape = ()
                else:
                    shape = tuple(int(n) for n in shape_text.split("x"))
                entries.append(ParamEntry(name, shape, DType(dtype_text), int(offset_text)))
            except ValueError:
                raise CheckpointException(f"Malformed param line {number}: {line!r}", "header")
        else:
            raise CheckpointException(f"Malformed header line {number}: {line!r}", "header")
    return meta, entries


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        CheckpointException: On a bad magic, version, header or layout
        ChecksumException: If the payload checksum does not match
    """
    if len(data) < _PREFIX + 8 or data[:4] != MAGIC:
        raise CheckpointException("Not a FlowDCN checkpoint (bad magic)", "magic")
    (version,) = unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointException(
            f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})", "version"
        )
    (header_len,) = unpack_from("<Q", data, 8)
    payload_start = _PREFIX + header_len
    if payload_start + 8 > len(data):
        raise CheckpointException("Checkpoint is truncated", "header")
    try:
        header = data[_PREFIX:payload_start].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointException("Checkpoint header is not UTF-8", "header")
    meta, entries = _parse_header(header)

    payload = memoryview(data)[payload_start:-8]
    (expected,) = unpack_from("<Q", data, len(data) - 8)
    actual = fnv1a_64(payload)
    if actual != expected:
        raise ChecksumException(expected=expected, actual=actual)

    params: ParamDict = {}
    cursor = 0
    for entry in entries:
        if entry.offset != cursor:
            raise CheckpointException(
                f"Parameter {entry.name} at offset {entry.offset}, expected {cursor}", entry.name
            )
        if entry.name in params:
            raise CheckpointException(f"Duplicate parameter {entry.name}", entry.name)
        end = cursor + entry.nbytes
        if end > len(payload):
            raise CheckpointException(f"Parameter {entry.name} runs past the payload", entry.name)
        array = np.frombuffer(payload[cursor:end], dtype=_NUMPY_DTYPES[entry.dtype])
        params[entry.name] = array.astype(np.float64).reshape(entry.shape)
        cursor = end
    if cursor != len(payload):
        raise CheckpointException(
            f"Payload has {len(payload) - cursor} trailing bytes not described by the header",
            "payload",
        )
    return Checkpoint(params=params, meta=meta, entries=entries, version=version)


class CheckpointStore:
    """Reads and writes checkpoint files, logging every access."""

    def __init__(self) -> None:
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")

    def save(
        self,
        path: Union[str, Path],
        params: ParamDict,
        meta: Optional[MetaDict] = None,
        dtype: DType = DType.F64,
    ) -> None:
        """
        Write a checkpoint file.

        Args:
            path: Destination
            params: Ordered parameters
            meta: Metadata lines
            dtype: Storage dtype
        """
        data = encode_checkpoint(params, meta, dtype)
        Path(path).write_bytes(data)
        self.logger.info(f"Saved {len(params)} arrays ({len(data)} bytes) to {path}")

    def load(self, path: Union[str, Path]) -> Checkpoint:
        """
        Read and verify a checkpoint file.

        Args:
            path: Source file

        Returns:
            Checkpoint with f64 parameters

        Raises:
            CheckpointException: If the file is malformed
            ChecksumException: If the payload does not match its checksum
        """
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise CheckpointException(f"Cannot read checkpoint {path}: {e}", "path")
        try:
            checkpoint = decode_checkpoint(data)
        except CheckpointException as e:
            self.logger.error(f"Refusing to load {path}: {e.message}")
            raise
        self.logger.info(f"Loaded {len(checkpoint.params)} arrays from {path}")
        return checkpoint


def save_checkpoint(
    path: Union[str, Path],
    params: ParamDict,
    meta: Optional[MetaDict] = None,
    dtype: DType = DType.F64,
) -> None:
    CheckpointStore().save(path, params, meta, dtype)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return CheckpointStore().load(path)
