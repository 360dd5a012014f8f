"""Map export: 16-bit portable graymaps with a window sidecar, and TSV tables."""
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.clients.fpsd_client import atomic_write_bytes, atomic_write_text
from src.utils.errors import FormatError, FPSDIOError, InvalidInputError

logger = logging.getLogger(__name__)

MAXVAL = 65535


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".tsv")


def write_graymap(
    path: Union[str, Path],
    values: np.ndarray,
    window: Tuple[float, float],
    quantity: str = "",
    unit: str = "",
) -> Path:
    """
    Write a binary 16-bit PGM of ``values`` mapped linearly from ``window`` to [0, 65535].

    Values outside the window saturate. The sidecar ``<file>.tsv`` records
    the quantity, unit and window so gray levels map back to physical units.

    Returns:
        Path of the image
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidInputError(f"Graymap needs a 2-D map, got shape {values.shape}")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise InvalidInputError(f"Display window must be increasing, got ({lo}, {hi})")

    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    levels = np.rint(np.nan_to_num(scaled) * MAXVAL).astype(">u2")
    height, width = values.shape
    header = f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    path = Path(path)
    atomic_write_bytes(path, header + levels.tobytes())

    rows = [("quantity", quantity), ("unit", unit), ("window_low", repr(lo)), ("window_high", repr(hi)), ("maxval", str(MAXVAL))]
    atomic_write_text(sidecar_path(path), "".join(f"{k}\t{v}\n" for k, v in rows))
    logger.debug(f"Wrote graymap {path} ({quantity} in [{lo}, {hi}])")
    return path


def read_graymap(path: Union[str, Path]) -> np.ndarray:
    """Gray levels of a PGM written by ``write_graymap`` as uint16."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FPSDIOError(f"Cannot read {path}: {e}") from e
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", offset=pos)
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM", offset=0)
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1
    expected = width * height * (2 if maxval > 255 else 1)
    if len(data) - pos != expected:
        raise FormatError(f"PGM payload is {len(data) - pos} bytes, expected {expected}", offset=pos)
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, offset=pos).reshape(height, width).astype(np.uint16)


def _cell(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_tsv(
    path: Union[str, Path], rows: Iterable[Dict[str, object]], columns: Optional[Sequence[str]] = None
) -> int:
    """
    Write dict rows as a tab-separated table with a header.

    Returns:
        Number of data rows
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = ["\t".join(columns)]
    lines += ["\t".join(_cell(row.get(c, "")) for c in columns) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return len(rows)


def read_tsv(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Rows of a headed TSV as string dicts."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FPSDIOError(f"Cannot read {path}: {e}") from e
    if not lines:
        return []
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]
