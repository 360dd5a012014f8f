"""Domain models shared across the FPS modules.

Array-valued models hold float64 numpy planes and check their invariants on
construction, so a model instance that exists is a valid one.
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.utils.errors import InvalidInputError, ShapeError

T2_RANGE = (0.02, 2.5)  # seconds
ADC_RANGE = (1e-4, 3.5e-3)  # mm^2/s
M0_RANGE = (0.0, 1.5)


def _as_plane(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"Expected a 2-D plane, got shape {arr.shape}")
    return arr


class DomainTag(str, Enum):
    """Origin of a sample."""

    SYNTHETIC = "synthetic"
    REAL = "real"


class LesionLabel(str, Enum):
    """Lesion class carried by a phantom."""

    ACUTE = "acute"  # restricted diffusion, mild T2 elevation
    NON_ACUTE = "non-acute"  # facilitated diffusion, marked T2 elevation


class ComplexImage(BaseModel):
    """H×W complex field stored as real and imaginary planes."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    re: np.ndarray
    im: np.ndarray

    @field_validator("re", "im", mode="before")
    @classmethod
    def _coerce_plane(cls, value):
        return _as_plane(value)

    @model_validator(mode="after")
    def _check_planes(self) -> "ComplexImage":
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {self.re.shape} and im {self.im.shape} differ")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise InvalidInputError("ComplexImage contains non-finite values")
        return self

    @property
    def height(self) -> int:
        return self.re.shape[0]

    @property
    def width(self) -> int:
        return self.re.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.re.shape

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexImage":
        z = np.asarray(z)
        if not np.all(np.isfinite(z)):
            raise InvalidInputError("ComplexImage contains non-finite values")
        return cls(re=np.real(z).copy(), im=np.imag(z).copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def norm(self) -> float:
        """l2 norm over both planes."""
        return float(np.sqrt(np.sum(self.re**2) + np.sum(self.im**2)))


class DistanceMap(BaseModel):
    """Per-frequency 1-Wasserstein distances between two corpora (center-shifted)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    raw: np.ndarray
    normalized: np.ndarray
    n_syn: int = Field(..., ge=1)
    n_real: int = Field(..., ge=1)

    @field_validator("raw", "normalized", mode="before")
    @classmethod
    def _coerce_plane(cls, value):
        return _as_plane(value)

    @model_validator(mode="after")
    def _check_maps(self) -> "DistanceMap":
        if self.raw.shape != self.normalized.shape:
            raise ShapeError("raw and normalized distance maps differ in shape")
        if not (np.all(np.isfinite(self.raw)) and np.all(np.isfinite(self.normalized))):
            raise InvalidInputError("DistanceMap contains non-finite values")
        if np.any(self.raw < 0):
            raise InvalidInputError("Raw distances must be nonnegative")
        if np.any(self.normalized < 0) or np.any(self.normalized > 1):
            raise InvalidInputError("Normalized distances must lie in [0, 1]")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.raw.shape

    @classmethod
    def from_raw(cls, raw: np.ndarray, n_syn: int, n_real: int, tiny: float = 1e-12) -> "DistanceMap":
        """Build the map with global min-max normalization."""
        raw = np.asarray(raw, dtype=np.float64)
        lo, hi = raw.min(), raw.max()
        normalized = (raw - lo) / (hi - lo + tiny)
        return cls(raw=raw, normalized=np.clip(normalized, 0.0, 1.0), n_syn=n_syn, n_real=n_real)


class ParameterMaps(BaseModel):
    """Quantitative maps: T2 (s), ADC (mm^2/s) and M0 (dimensionless)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t2: np.ndarray
    adc: np.ndarray
    m0: np.ndarray
    lesion_mask: Optional[np.ndarray] = None
    lesion_label: Optional[LesionLabel] = None

    @field_validator("t2", "adc", "m0", mode="before")
    @classmethod
    def _coerce_plane(cls, value):
        return _as_plane(value)

    @field_validator("lesion_mask", mode="before")
    @classmethod
    def _coerce_mask(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=bool)

    @model_validator(mode="after")
    def _check_envelopes(self) -> "ParameterMaps":
        shape = self.t2.shape
        if self.adc.shape != shape or self.m0.shape != shape:
            raise ShapeError("t2, adc and m0 maps must share one shape")
        if self.lesion_mask is not None and self.lesion_mask.shape != shape:
            raise ShapeError("lesion mask shape differs from the maps")
        for name, plane, (lo, hi) in (
            ("t2", self.t2, T2_RANGE),
            ("adc", self.adc, ADC_RANGE),
            ("m0", self.m0, M0_RANGE),
        ):
            if not np.all(np.isfinite(plane)):
                raise InvalidInputError(f"{name} map contains non-finite values")
            if plane.min() < lo or plane.max() > hi:
                raise InvalidInputError(
                    f"{name} map leaves its envelope [{lo}, {hi}]: "
                    f"[{plane.min():.6g}, {plane.max():.6g}]"
                )
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.t2.shape

    @property
    def mirror_mask(self) -> Optional[np.ndarray]:
        """Left-right mirror of the lesion mask (contralateral ROI)."""
        if self.lesion_mask is None:
            return None
        return self.lesion_mask[:, ::-1].copy()


class EchoComponent(BaseModel):
    """One echo of the overlapping-echo forward model."""

    te: float = Field(..., gt=0, description="Echo time in seconds")
    b: float = Field(0.0, ge=0, description="Diffusion weighting in s/mm^2")
    ku: int = Field(0, description="Horizontal phase-ramp frequency (cycles/FOV)")
    kv: int = Field(0, description="Vertical phase-ramp frequency (cycles/FOV)")
    weight: float = Field(1.0, gt=0)


DEFAULT_ECHOES: List[EchoComponent] = [
    EchoComponent(te=0.025, b=0.0, ku=0, kv=0),
    EchoComponent(te=0.055, b=0.0, ku=16, kv=0),
    EchoComponent(te=0.085, b=1000.0, ku=0, kv=16),
    EchoComponent(te=0.115, b=1000.0, ku=16, kv=16),
]


class SamplePair(BaseModel):
    """Complex input image with its ground-truth maps."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    domain_tag: DomainTag
    input: ComplexImage
    target: ParameterMaps

    @model_validator(mode="after")
    def _check_shapes(self) -> "SamplePair":
        if self.input.shape != self.target.shape:
            raise ShapeError(
                f"Sample {self.id}: input {self.input.shape} and target {self.target.shape} differ"
            )
        return self


class GradientScheme(BaseModel):
    """Diffusion encoding: unit directions with their b-values, plus one b=0 measurement."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    directions: np.ndarray
    bvals: np.ndarray
    includes_b0: bool = True

    @field_validator("directions", "bvals", mode="before")
    @classmethod
    def _coerce(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_scheme(self) -> "GradientScheme":
        if self.directions.ndim != 2 or self.directions.shape[1] != 3:
            raise ShapeError(f"Directions must be K×3, got {self.directions.shape}")
        if self.bvals.shape != (self.directions.shape[0],):
            raise ShapeError("One b-value per direction is required")
        if self.directions.shape[0] < 6:
            raise InvalidInputError("At least six diffusion directions are required")
        if not self.includes_b0:
            raise InvalidInputError("A b=0 measurement is required")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidInputError("Diffusion directions must be unit vectors")
        if np.any(self.bvals <= 0):
            raise InvalidInputError("Direction b-values must be positive")
        return self

    @property
    def n_measurements(self) -> int:
        return self.directions.shape[0] + 1


class DiffusionTensorField(BaseModel):
    """Symmetric diffusion tensors over a voxel grid (mm^2/s)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dxx: np.ndarray
    dyy: np.ndarray
    dzz: np.ndarray
    dxy: np.ndarray
    dxz: np.ndarray
    dyz: np.ndarray

    @field_validator("dxx", "dyy", "dzz", "dxy", "dxz", "dyz", mode="before")
    @classmethod
    def _coerce(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_shapes(self) -> "DiffusionTensorField":
        shapes = {c.shape for c in self.components()}
        if len(shapes) != 1:
            raise ShapeError("Tensor components must share one voxel grid")
        return self

    def components(self) -> Tuple[np.ndarray, ...]:
        return (self.dxx, self.dyy, self.dzz, self.dxy, self.dxz, self.dyz)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.dxx.shape

    def as_matrices(self) -> np.ndarray:
        """Stack into (..., 3, 3) symmetric matrices."""
        rows = [
            [self.dxx, self.dxy, self.dxz],
            [self.dxy, self.dyy, self.dyz],
            [self.dxz, self.dyz, self.dzz],
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    @classmethod
    def from_matrices(cls, mats: np.ndarray) -> "DiffusionTensorField":
        return cls(
            dxx=mats[..., 0, 0],
            dyy=mats[..., 1, 1],
            dzz=mats[..., 2, 2],
            dxy=mats[..., 0, 1],
            dxz=mats[..., 0, 2],
            dyz=mats[..., 1, 2],
        )


class DTIMaps(BaseModel):
    """Scalar maps derived from tensor eigenvalues."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    fa: np.ndarray
    md: np.ndarray
    ad: np.ndarray
    rd: np.ndarray
    quality_flags: Optional[np.ndarray] = None


class HistogramFeatures(BaseModel):
    """ROI histogram parameters used for lesion classification."""

    t2_p75: float
    adc_p90: float
    adc_median: float
    delta_adc: float

    @model_validator(mode="after")
    def _check_finite(self) -> "HistogramFeatures":
        if not all(np.isfinite(v) for v in self.as_vector()):
            raise InvalidInputError("Histogram features must be finite")
        return self

    def as_vector(self) -> List[float]:
        return [self.t2_p75, self.adc_p90, self.adc_median, self.delta_adc]

    @classmethod
    def names(cls) -> List[str]:
        return ["t2_p75", "adc_p90", "adc_median", "delta_adc"]


class CohortRecord(BaseModel):
    """One subject of a classification cohort."""

    subject_id: str
    label: int = Field(..., ge=0, le=1, description="1 = acute (positive class)")
    features: HistogramFeatures

    def as_row(self) -> Dict[str, float]:
        return {"subject_id": self.subject_id, "label": self.label, **self.features.model_dump()}
