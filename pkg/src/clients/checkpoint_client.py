"""Training checkpoints: FPSD tensor bundle plus a text manifest."""
import logging
import os
import shutil
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from src.clients.fpsd_client import atomic_write_text, read_bundle, write_bundle
from src.utils.errors import FPSDIOError, StateError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
LATEST_NAME = "latest"


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}"


def write_checkpoint(
    root: Union[str, Path],
    iteration: int,
    manifest: Dict[str, str],
    tensors: Dict[str, np.ndarray],
) -> Path:
    """
    Write ``root/ckpt_<iteration>`` atomically and point ``root/latest`` at it.

    Args:
        root: Checkpoint root directory
        iteration: Iteration the checkpoint captures
        manifest: Extra manifest entries (rng_seed, config_hash, mode, ...)
        tensors: Name -> array bundle

    Returns:
        Path of the checkpoint directory
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    final = root / checkpoint_name(iteration)
    staging = root / f".{checkpoint_name(iteration)}.tmp"
    if staging.exists():
        shutil.rmtree(staging)

    write_bundle(staging, tensors)
    entries = {"format_version": str(FORMAT_VERSION), "iteration": str(iteration), **manifest}
    atomic_write_text(staging / "manifest.txt", "".join(f"{k}\t{v}\n" for k, v in entries.items()))

    try:
        if final.exists():
            shutil.rmtree(final)
        os.replace(staging, final)
    except OSError as e:
        raise FPSDIOError(f"Cannot publish checkpoint {final}: {e}") from e
    atomic_write_text(root / LATEST_NAME, final.name + "\n")
    logger.info(f"Checkpoint written: {final}")
    return final


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    manifest = Path(path) / "manifest.txt"
    try:
        lines = manifest.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FPSDIOError(f"Cannot read {manifest}: {e}") from e
    entries = {}
    for line in lines:
        if not line.strip():
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise StateError(f"Malformed checkpoint manifest line: {line!r}")
        entries[key] = value
    if entries.get("format_version") != str(FORMAT_VERSION):
        raise StateError(f"Unsupported checkpoint format {entries.get('format_version')}")
    return entries


def resolve_checkpoint(path: Union[str, Path]) -> Path:
    """Accept a checkpoint directory or a root holding a ``latest`` pointer."""
    path = Path(path)
    if (path / "manifest.txt").exists():
        return path
    pointer = path / LATEST_NAME
    if pointer.exists():
        return path / pointer.read_text(encoding="utf-8").strip()
    raise FPSDIOError(f"No checkpoint found at {path}")


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Load (manifest, tensors) from a checkpoint directory or root."""
    directory = resolve_checkpoint(path)
    manifest = read_manifest(directory)
    tensors = read_bundle(directory)
    logger.debug(f"Loaded checkpoint {directory} ({len(tensors)} tensors)")
    return manifest, tensors


def split_prefix(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Sub-bundle of names starting with ``prefix.``, prefix stripped."""
    head = prefix + "."
    return {name[len(head):]: arr for name, arr in tensors.items() if name.startswith(head)}
