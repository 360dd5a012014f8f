"""FPSD binary array format: reader, writer and tensor bundles.

Layout (all little-endian)::

    magic    4 bytes  b"FPSD"
    version  u16      = 1
    dtype    u8       1 = float32, 2 = float64, 3 = complex64 (interleaved float32)
    ndim     u8
    dims     ndim x u32
    payload  row-major values
"""
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Union

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.utils.errors import FormatError, FPSDIOError, InvalidInputError

logger = logging.getLogger(__name__)

MAGIC = b"FPSD"
VERSION = 1
DTYPE_CODES: Dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
}
_CODE_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.complex64): 3}

# Byte offsets of the fixed header fields
_OFF_VERSION = 4
_OFF_DTYPE = 6
_OFF_NDIM = 7
_OFF_DIMS = 8

PathLike = Union[str, Path]


def encode_array(arr: np.ndarray) -> bytes:
    """Serialize an array into FPSD bytes."""
    arr = np.asarray(arr)
    code = _CODE_FOR_KIND.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise InvalidInputError(f"FPSD cannot store dtype {arr.dtype} losslessly")
    if arr.ndim > 255:
        raise InvalidInputError("FPSD supports at most 255 dimensions")
    if any(d >= 2**32 for d in arr.shape):
        raise InvalidInputError("FPSD dimensions must fit in u32")

    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes(order="C")
    return header + payload


def decode_array(data: bytes) -> np.ndarray:
    """
    Parse FPSD bytes.

    Args:
        data: Full file contents

    Returns:
        Array in native byte order

    Raises:
        FormatError: Bad magic, version, dtype, dims or payload length, with the byte offset
    """
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected b'FPSD'", offset=0)
    if len(data) < _OFF_DIMS:
        raise FormatError("truncated header", offset=len(data))

    version, code, ndim = struct.unpack_from("<HBB", data, _OFF_VERSION)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=_OFF_VERSION)
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset=_OFF_DTYPE)

    header_end = _OFF_DIMS + 4 * ndim
    if len(data) < header_end:
        raise FormatError(f"truncated dims for ndim={ndim}", offset=len(data))
    dims = struct.unpack_from(f"<{ndim}I", data, _OFF_DIMS)

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    available = len(data) - header_end
    if available < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {available}", offset=len(data)
        )
    if available > expected:
        raise FormatError("trailing bytes after payload", offset=header_end + expected)

    arr = np.frombuffer(data, dtype=dtype, count=expected // dtype.itemsize, offset=header_end)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.05, min=0.05, max=1),
    retry=retry_if_exception_type(OSError),
    before_sleep=lambda retry_state: logger.warning(
        f"Retrying FPSD write (attempt {retry_state.attempt_number})..."
    ),
    reraise=True,
)
def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write bytes via temp file then rename; retries transient OS errors."""
    path = Path(path)
    try:
        _atomic_write_bytes(path, data)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise FPSDIOError(f"Cannot write {path}: {e}") from e


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_array(path: PathLike, arr: np.ndarray) -> int:
    """Write one FPSD file. Returns the number of bytes written."""
    data = encode_array(arr)
    atomic_write_bytes(path, data)
    logger.debug(f"Wrote {path} ({np.asarray(arr).shape}, {len(data)} bytes)")
    return len(data)


def read_array(path: PathLike) -> np.ndarray:
    """Read one FPSD file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FPSDIOError(f"Cannot read {path}: {e}") from e
    logger.debug(f"Read {path} ({len(data)} bytes)")
    return decode_array(data)


def write_bundle(directory: PathLike, tensors: Dict[str, np.ndarray]) -> Path:
    """
    Write a name -> tensor bundle as one FPSD file per tensor plus ``tensors.tsv``.

    Args:
        directory: Target directory (created if missing)
        tensors: Mapping of dotted tensor names to arrays

    Returns:
        Path of the tensor manifest
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["name\tfile"]
    for index, (name, arr) in enumerate(tensors.items()):
        file_name = f"t{index:05d}.fpsd"
        write_array(directory / file_name, arr)
        lines.append(f"{name}\t{file_name}")
    manifest = directory / "tensors.tsv"
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest


def read_bundle(directory: PathLike) -> Dict[str, np.ndarray]:
    """Read a bundle written by ``write_bundle`` preserving manifest order."""
    directory = Path(directory)
    manifest = directory / "tensors.tsv"
    try:
        text = manifest.read_text(encoding="utf-8")
    except OSError as e:
        raise FPSDIOError(f"Cannot read {manifest}: {e}") from e

    tensors: Dict[str, np.ndarray] = {}
    offset = 0
    for line_no, line in enumerate(text.splitlines(keepends=True)):
        stripped = line.rstrip("\n")
        if line_no == 0:
            if stripped != "name\tfile":
                raise FormatError(f"bad tensor manifest header in {manifest}", offset=0)
        elif stripped:
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise FormatError(f"malformed tensor manifest row in {manifest}", offset=offset)
            tensors[parts[0]] = read_array(directory / parts[1])
        offset += len(line.encode("utf-8"))
    return tensors
