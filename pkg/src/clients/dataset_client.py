"""Paired-sample dataset directories backed by FPSD files."""
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.clients.fpsd_client import atomic_write_text, read_array, write_array
from src.models.domain_models import (
    ComplexImage,
    DistanceMap,
    DomainTag,
    LesionLabel,
    ParameterMaps,
    SamplePair,
)
from src.utils.errors import FormatError, FPSDIOError, ShapeError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ["id", "domain_tag", "label", "input_file", "target_file", "mask_file"]


def write_dataset(pairs: List[SamplePair], path: Union[str, Path]) -> int:
    """
    Write sample pairs as ``manifest.tsv`` plus per-sample FPSD arrays.

    Inputs are stored as float64 2×H×W (re, im), targets as float64 3×H×W
    (t2, adc, m0) and lesion masks, when present, as float32 H×W.

    Returns:
        Number of pairs written
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    rows = ["\t".join(MANIFEST_COLUMNS)]
    for pair in pairs:
        input_file = f"{pair.id}.input.fpsd"
        target_file = f"{pair.id}.target.fpsd"
        write_array(root / input_file, np.stack([pair.input.re, pair.input.im]))
        target = pair.target
        write_array(root / target_file, np.stack([target.t2, target.adc, target.m0]))

        mask_file = ""
        if target.lesion_mask is not None:
            mask_file = f"{pair.id}.mask.fpsd"
            write_array(root / mask_file, target.lesion_mask.astype(np.float32))
        label = target.lesion_label.value if target.lesion_label is not None else ""
        rows.append("\t".join([pair.id, pair.domain_tag.value, label, input_file, target_file, mask_file]))

    atomic_write_text(root / MANIFEST_NAME, "\n".join(rows) + "\n")
    logger.info(f"Wrote {len(pairs)} pairs to {root}")
    return len(pairs)


def _parse_row(fields: List[str], offset: int) -> dict:
    if len(fields) != len(MANIFEST_COLUMNS):
        raise FormatError(f"expected {len(MANIFEST_COLUMNS)} manifest columns, got {len(fields)}", offset)
    row = dict(zip(MANIFEST_COLUMNS, fields))
    try:
        row["domain_tag"] = DomainTag(row["domain_tag"])
        row["label"] = LesionLabel(row["label"]) if row["label"] else None
    except ValueError as e:
        raise FormatError(f"bad manifest value: {e}", offset) from e
    return row


def read_dataset(path: Union[str, Path]) -> List[SamplePair]:
    """Read a dataset directory written by ``write_dataset``."""
    root = Path(path)
    manifest = root / MANIFEST_NAME
    try:
        raw = manifest.read_bytes()
    except OSError as e:
        raise FPSDIOError(f"Cannot read {manifest}: {e}") from e

    pairs: List[SamplePair] = []
    offset = 0
    for line_no, line in enumerate(raw.splitlines(keepends=True)):
        text = line.decode("utf-8").rstrip("\r\n")
        if line_no == 0:
            if text.split("\t") != MANIFEST_COLUMNS:
                raise FormatError(f"bad manifest header in {manifest}", offset=0)
        elif text:
            row = _parse_row(text.split("\t"), offset)
            pairs.append(_load_pair(root, row))
        offset += len(line)

    logger.debug(f"Read {len(pairs)} pairs from {root}")
    return pairs


def _load_pair(root: Path, row: dict) -> SamplePair:
    planes = read_array(root / row["input_file"])
    target = read_array(root / row["target_file"])
    if planes.ndim != 3 or planes.shape[0] != 2:
        raise ShapeError(f"{row['input_file']}: expected 2×H×W, got {planes.shape}")
    if target.ndim != 3 or target.shape[0] != 3:
        raise ShapeError(f"{row['target_file']}: expected 3×H×W, got {target.shape}")

    mask: Optional[np.ndarray] = None
    if row["mask_file"]:
        mask = read_array(root / row["mask_file"]) > 0.5
    maps = ParameterMaps(
        t2=target[0], adc=target[1], m0=target[2], lesion_mask=mask, lesion_label=row["label"]
    )
    return SamplePair(
        id=row["id"],
        domain_tag=row["domain_tag"],
        input=ComplexImage(re=planes[0], im=planes[1]),
        target=maps,
    )


def write_distance_map(dmap: DistanceMap, path: Union[str, Path]) -> Path:
    """
    Store a distance map as float64 2×H×W (raw, normalized) plus ``<file>.meta.tsv``.

    Returns:
        Path of the sidecar
    """
    path = Path(path)
    write_array(path, np.stack([dmap.raw, dmap.normalized]))
    meta = path.with_name(path.name + ".meta.tsv")
    atomic_write_text(meta, f"n_syn\t{dmap.n_syn}\nn_real\t{dmap.n_real}\n")
    logger.info(f"Wrote distance map {path} ({dmap.n_syn} synthetic / {dmap.n_real} real)")
    return meta


def read_distance_map(path: Union[str, Path]) -> DistanceMap:
    path = Path(path)
    planes = read_array(path)
    if planes.ndim != 3 or planes.shape[0] != 2:
        raise ShapeError(f"{path}: expected 2×H×W distance map, got {planes.shape}")
    meta = path.with_name(path.name + ".meta.tsv")
    try:
        lines = meta.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FPSDIOError(f"Cannot read distance map sidecar {meta}: {e}") from e
    counts = {}
    for line in lines:
        key, _, value = line.partition("\t")
        try:
            counts[key] = int(value)
        except ValueError as e:
            raise FormatError(f"bad count in {meta}: {line!r}") from e
    if set(counts) != {"n_syn", "n_real"}:
        raise FormatError(f"{meta} must list n_syn and n_real")
    return DistanceMap(raw=planes[0], normalized=planes[1], **counts)
