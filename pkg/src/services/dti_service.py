"""Diffusion-tensor pipeline: DWI synthesis, log-linear tensor fit, eigendecomposition and scalar maps."""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.clients.fpsd_client import atomic_write_text
from src.models.domain_models import DiffusionTensorField, DTIMaps, GradientScheme
from src.utils.errors import FPSDIOError, InvalidInputError, SchemeError, ShapeError

logger = logging.getLogger(__name__)

FLAG_EXCLUDED = 1
FLAG_NEGATIVE_EIGENVALUE = 2

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50

DEFAULT_B = 1000.0  # s/mm^2


def default_scheme(b: float = DEFAULT_B) -> GradientScheme:
    """The six (±1, ±1, 0)/√2-type directions at one b-value, plus b0."""
    directions = np.array(
        [[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, -1, 0], [1, 0, -1], [0, 1, -1]], dtype=np.float64
    ) / np.sqrt(2.0)
    return GradientScheme(directions=directions, bvals=np.full(6, b))


# ============================================================================
# Scheme text table
# ============================================================================


def write_scheme(scheme: GradientScheme, path: Union[str, Path]) -> None:
    """One ``gx gy gz b`` row per direction; the b0 measurement is implied."""
    rows = ["# gx gy gz b"]
    rows += [
        " ".join(repr(float(v)) for v in (*g, b)) for g, b in zip(scheme.directions, scheme.bvals)
    ]
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_scheme(path: Union[str, Path]) -> GradientScheme:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FPSDIOError(f"Cannot read scheme {path}: {e}") from e
    rows = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise SchemeError(f"{path}:{lineno}: expected 'gx gy gz b', got {line!r}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as e:
            raise SchemeError(f"{path}:{lineno}: {e}") from e
    if not rows:
        raise SchemeError(f"{path}: no directions")
    table = np.array(rows)
    return GradientScheme(directions=table[:, :3], bvals=table[:, 3])


# ============================================================================
# Forward model and fit
# ============================================================================


def _quadratic_rows(scheme: GradientScheme) -> np.ndarray:
    """K×6 rows mapping (dxx, dyy, dzz, dxy, dxz, dyz) to gᵀDg."""
    g = scheme.directions
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    return np.stack([gx * gx, gy * gy, gz * gz, 2 * gx * gy, 2 * gx * gz, 2 * gy * gz], axis=1)


def design_matrix(scheme: GradientScheme) -> np.ndarray:
    """(K+1)×7 log-signal design over (log s0, dxx, dyy, dzz, dxy, dxz, dyz); b0 row first."""
    rows = -scheme.bvals[:, None] * _quadratic_rows(scheme)
    design = np.zeros((scheme.n_measurements, 7))
    design[:, 0] = 1.0
    design[1:, 1:] = rows
    return design


def synth_dwi(field: DiffusionTensorField, scheme: GradientScheme, s0: np.ndarray) -> np.ndarray:
    """
    Noiseless DWI: s0 first, then s0·exp(-b_k g_kᵀ D g_k) per direction.

    Returns:
        (K+1)×grid signal stack
    """
    s0 = np.asarray(s0, dtype=np.float64)
    if s0.shape != field.shape:
        raise ShapeError(f"s0 {s0.shape} does not match the tensor grid {field.shape}")
    if np.any(s0 <= 0):
        raise InvalidInputError("s0 must be positive")
    coeffs = np.stack(field.components(), axis=-1)
    quad = np.einsum("kc,...c->k...", _quadratic_rows(scheme), coeffs)
    decay = np.exp(-scheme.bvals.reshape((-1,) + (1,) * s0.ndim) * quad)
    return np.concatenate([s0[None], s0[None] * decay], axis=0)


def fit_tensor(
    signals: np.ndarray, scheme: GradientScheme
) -> Tuple[DiffusionTensorField, np.ndarray, np.ndarray]:
    """
    Per-voxel log-linear least-squares tensor fit.

    Voxels with any non-positive signal are excluded: their tensor and s0
    are zero and the excluded bit is set in the returned flags.

    Args:
        signals: (K+1)×grid stack, b0 first
        scheme: Gradient scheme the stack was acquired with

    Returns:
        (tensor field, s0 map, uint8 quality flags)

    Raises:
        ShapeError: measurement count does not match the scheme
        SchemeError: rank-deficient design (e.g. coplanar directions)
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.shape[0] != scheme.n_measurements:
        raise ShapeError(
            f"Expected {scheme.n_measurements} measurements, got {signals.shape[0]}"
        )
    design = design_matrix(scheme)
    if np.linalg.matrix_rank(design) < 7:
        raise SchemeError("Gradient directions do not determine a tensor (rank-deficient design)")

    grid = signals.shape[1:]
    flat = signals.reshape(signals.shape[0], -1)
    valid = np.all(flat > 0, axis=0) & np.all(np.isfinite(flat), axis=0)
    coeffs = np.zeros((7, flat.shape[1]))
    if valid.any():
        coeffs[:, valid] = np.linalg.pinv(design) @ np.log(flat[:, valid])

    flags = np.where(valid, 0, FLAG_EXCLUDED).astype(np.uint8).reshape(grid)
    excluded = int((~valid).sum())
    if excluded:
        logger.warning(f"Tensor fit excluded {excluded} voxels with non-positive signal")

    s0 = np.where(valid, np.exp(coeffs[0]), 0.0).reshape(grid)
    comps = [coeffs[i].reshape(grid) for i in range(1, 7)]
    field = DiffusionTensorField(
        dxx=comps[0], dyy=comps[1], dzz=comps[2], dxy=comps[3], dxz=comps[4], dyz=comps[5]
    )
    return field, s0, flags


# ============================================================================
# Eigendecomposition and scalar maps
# ============================================================================


def _off_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(a[..., 0, 1] ** 2 + a[..., 0, 2] ** 2 + a[..., 1, 2] ** 2)


def eig3_symmetric(mats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi eigendecomposition of symmetric 3×3 matrices.

    Args:
        mats: (..., 3, 3) symmetric matrices

    Returns:
        (eigenvalues (..., 3) sorted descending, eigenvectors (..., 3, 3) as columns)

    Raises:
        InvalidInputError: non-finite entries
    """
    a = np.array(mats, dtype=np.float64)
    if a.shape[-2:] != (3, 3):
        raise ShapeError(f"Expected (..., 3, 3) matrices, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("Tensor contains non-finite entries")
    batch = a.shape[:-2]
    a = a.reshape(-1, 3, 3)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    v = np.broadcast_to(np.eye(3), a.shape).copy()
    scale = np.maximum(np.linalg.norm(a, axis=(-2, -1)), 1.0)

    for _ in range(JACOBI_MAX_SWEEPS):
        if np.all(_off_norm(a) < JACOBI_TOL * scale):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            active = np.abs(apq) > 1e-300
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.broadcast_to(np.eye(3), a.shape).copy()
            rot[:, p, p] = c
            rot[:, q, q] = c
            rot[:, p, q] = s
            rot[:, q, p] = -s
            a = np.swapaxes(rot, -1, -2) @ a @ rot
            v = v @ rot
    else:
        logger.warning(f"Jacobi iteration stopped after {JACOBI_MAX_SWEEPS} sweeps")

    eigvals = np.diagonal(a, axis1=-2, axis2=-1)
    order = np.argsort(-eigvals, axis=-1, kind="stable")
    eigvals = np.take_along_axis(eigvals, order, axis=-1)
    eigvecs = np.take_along_axis(v, order[:, None, :], axis=-1)
    return eigvals.reshape(batch + (3,)), eigvecs.reshape(batch + (3, 3))


def dti_maps(eigvals: np.ndarray, flags: Optional[np.ndarray] = None) -> DTIMaps:
    """
    FA, MD, AD and RD from descending eigenvalues.

    FA is clamped to [0, 1] and is 0 where every eigenvalue is 0. Voxels with
    a negative eigenvalue keep their raw values and get the negative-eigenvalue bit.
    """
    lam = np.asarray(eigvals, dtype=np.float64)
    md = lam.mean(axis=-1)
    ad = lam[..., 0]
    rd = 0.5 * (lam[..., 1] + lam[..., 2])
    num = np.sqrt(np.sum((lam - md[..., None]) ** 2, axis=-1))
    den = np.sqrt(np.sum(lam**2, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(den > 0, np.sqrt(1.5) * num / np.where(den > 0, den, 1.0), 0.0)
    fa = np.clip(fa, 0.0, 1.0)

    quality = np.zeros(md.shape, dtype=np.uint8) if flags is None else np.asarray(flags, dtype=np.uint8).copy()
    negative = np.any(lam < 0, axis=-1)
    quality[negative] |= FLAG_NEGATIVE_EIGENVALUE
    if negative.any():
        logger.warning(f"{int(negative.sum())} voxels have a negative eigenvalue")
    return DTIMaps(fa=fa, md=md, ad=ad, rd=rd, quality_flags=quality)


def tensor_maps(field: DiffusionTensorField, flags: Optional[np.ndarray] = None) -> DTIMaps:
    eigvals, _ = eig3_symmetric(field.as_matrices())
    return dti_maps(eigvals, flags)


# ============================================================================
# Synthetic fields
# ============================================================================


def synth_tensor_field(
    seed: int,
    shape: Tuple[int, ...],
    axial: Tuple[float, float] = (1.2e-3, 2.0e-3),
    radial: Tuple[float, float] = (0.2e-3, 0.5e-3),
) -> DiffusionTensorField:
    """Randomly rotated prolate tensors diag(λ1, λ2, λ2) with λ1 > λ2."""
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape))
    lam1 = rng.uniform(*axial, size=n)
    lam2 = rng.uniform(*radial, size=n)
    rot = Rotation.random(n, random_state=rng).as_matrix()
    diag = np.zeros((n, 3, 3))
    diag[:, 0, 0] = lam1
    diag[:, 1, 1] = lam2
    diag[:, 2, 2] = lam2
    mats = rot @ diag @ np.swapaxes(rot, -1, -2)
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return DiffusionTensorField.from_matrices(mats.reshape(tuple(shape) + (3, 3)))


def run_pipeline(
    signals: np.ndarray, scheme: GradientScheme
) -> Tuple[DiffusionTensorField, np.ndarray, DTIMaps]:
    """fit_tensor -> eig3_symmetric -> dti_maps."""
    field, s0, flags = fit_tensor(signals, scheme)
    maps = tensor_maps(field, flags)
    logger.info(
        f"DTI fit on grid {field.shape}: mean FA {float(maps.fa.mean()):.4f}, "
        f"mean MD {float(maps.md.mean()):.4g}"
    )
    return field, s0, maps
