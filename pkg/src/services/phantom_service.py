"""Phantom generation, overlapping-echo forward model and domain-shift simulation."""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from src.models.config_models import DomainShiftConfig, PhantomConfig
from src.models.domain_models import (
    ADC_RANGE,
    DEFAULT_ECHOES,
    M0_RANGE,
    T2_RANGE,
    ComplexImage,
    DomainTag,
    EchoComponent,
    LesionLabel,
    ParameterMaps,
    SamplePair,
)
from src.utils.errors import IdentifiabilityError, InvalidInputError, ShapeError

logger = logging.getLogger(__name__)

# (t2 band in s, adc band in mm^2/s, m0 band)
TISSUE_BANDS: Dict[str, Tuple[Tuple[float, float], Tuple[float, float], Tuple[float, float]]] = {
    "white_matter": ((0.07, 0.09), (0.7e-3, 0.8e-3), (0.65, 0.75)),
    "gray_matter": ((0.09, 0.11), (0.8e-3, 1.0e-3), (0.8, 0.9)),
    "fluid": ((0.5, 2.0), (2.5e-3, 3.2e-3), (0.95, 1.0)),
}
LESION_BANDS = {
    LesionLabel.ACUTE: ((0.10, 0.14), (0.3e-3, 0.6e-3), (0.8, 0.9)),
    LesionLabel.NON_ACUTE: ((0.16, 0.30), (1.2e-3, 2.0e-3), (0.85, 0.95)),
}
BACKGROUND = {"t2": T2_RANGE[0], "adc": ADC_RANGE[0], "m0": 0.0}

BLOB_SHARPNESS = 12.0


# ============================================================================
# Parameter maps
# ============================================================================


def _draw(rng: np.random.Generator, band: Tuple[float, float]) -> float:
    return float(rng.uniform(band[0], band[1]))


def _radius(yy, xx, cy, cx, ry, rx, angle) -> np.ndarray:
    """Normalized elliptical radius (1 on the ellipse boundary)."""
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return np.sqrt(u**2 + v**2)


def generate_parameter_maps(
    seed: int,
    height: int,
    width: int,
    n_shapes: int,
    lesion_prob: float,
) -> ParameterMaps:
    """
    Procedural head phantom with tissue blobs and an optional lesion.

    The head ellipse counts as the first shape and is filled with one
    white-matter value; ``n_shapes - 1`` soft-edged blobs of random tissue
    classes are blended in, then with probability ``lesion_prob`` a lesion blob
    of a random class is placed off the midline.

    Args:
        seed: Generator seed
        height: Rows (>= 16)
        width: Columns (>= 16)
        n_shapes: Head plus tissue blobs (>= 1)
        lesion_prob: Lesion probability in [0, 1]

    Returns:
        ParameterMaps with lesion mask and label when a lesion was drawn
    """
    if height < 16 or width < 16:
        raise InvalidInputError(f"Phantom needs H, W >= 16, got {height}x{width}")
    if n_shapes < 1:
        raise InvalidInputError("n_shapes must be >= 1")
    if not 0.0 <= lesion_prob <= 1.0:
        raise InvalidInputError("lesion_prob must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    cy = height / 2 + rng.uniform(-0.03, 0.03) * height
    cx = width / 2 + rng.uniform(-0.03, 0.03) * width
    head = _radius(yy, xx, cy, cx, rng.uniform(0.36, 0.44) * height, rng.uniform(0.32, 0.40) * width, 0.0) <= 1.0

    t2 = np.full((height, width), BACKGROUND["t2"])
    adc = np.full((height, width), BACKGROUND["adc"])
    m0 = np.full((height, width), BACKGROUND["m0"])
    t2_band, adc_band, m0_band = TISSUE_BANDS["white_matter"]
    t2[head], adc[head], m0[head] = _draw(rng, t2_band), _draw(rng, adc_band), _draw(rng, m0_band)

    classes = list(TISSUE_BANDS)
    for _ in range(n_shapes - 1):
        tissue = classes[int(rng.integers(len(classes)))]
        t2_band, adc_band, m0_band = TISSUE_BANDS[tissue]
        weight = _blob_weight(rng, yy, xx, cy, cx, height, width, scale=(0.08, 0.2)) * head
        t2 = t2 * (1 - weight) + _draw(rng, t2_band) * weight
        adc = adc * (1 - weight) + _draw(rng, adc_band) * weight
        m0 = m0 * (1 - weight) + _draw(rng, m0_band) * weight

    lesion_mask: Optional[np.ndarray] = None
    lesion_label: Optional[LesionLabel] = None
    if rng.uniform() < lesion_prob:
        lesion_label = LesionLabel.ACUTE if rng.uniform() < 0.5 else LesionLabel.NON_ACUTE
        t2_band, adc_band, m0_band = LESION_BANDS[lesion_label]
        side = -1.0 if rng.uniform() < 0.5 else 1.0
        ly = cy + rng.uniform(-0.12, 0.12) * height
        lx = cx + side * rng.uniform(0.14, 0.2) * width
        ry, rx = rng.uniform(0.06, 0.1) * height, rng.uniform(0.06, 0.1) * width
        weight = expit(BLOB_SHARPNESS * (1.0 - _radius(yy, xx, ly, lx, ry, rx, rng.uniform(0, np.pi)))) * head
        t2 = t2 * (1 - weight) + _draw(rng, t2_band) * weight
        adc = adc * (1 - weight) + _draw(rng, adc_band) * weight
        m0 = m0 * (1 - weight) + _draw(rng, m0_band) * weight
        lesion_mask = weight > 0.5

    return ParameterMaps(
        t2=np.clip(t2, *T2_RANGE),
        adc=np.clip(adc, *ADC_RANGE),
        m0=np.clip(m0, *M0_RANGE),
        lesion_mask=lesion_mask,
        lesion_label=lesion_label,
    )


def _blob_weight(rng, yy, xx, cy, cx, height, width, scale) -> np.ndarray:
    by = cy + rng.uniform(-0.25, 0.25) * height
    bx = cx + rng.uniform(-0.22, 0.22) * width
    ry, rx = rng.uniform(*scale) * height, rng.uniform(*scale) * width
    return expit(BLOB_SHARPNESS * (1.0 - _radius(yy, xx, by, bx, ry, rx, rng.uniform(0, np.pi))))


# ============================================================================
# Forward model
# ============================================================================


def _check_identifiable(echoes: Sequence[EchoComponent]) -> None:
    pairs = {(e.te, e.b) for e in echoes}
    if len(echoes) < 2 or len(pairs) < 2:
        raise IdentifiabilityError("At least two echoes with distinct (te, b) pairs are required")


def echo_components(maps: ParameterMaps, echoes: Sequence[EchoComponent] = DEFAULT_ECHOES) -> np.ndarray:
    """Per-echo magnitudes weight*m0*exp(-te/t2)*exp(-b*adc), shape E×H×W."""
    te = np.array([e.te for e in echoes])[:, None, None]
    b = np.array([e.b for e in echoes])[:, None, None]
    w = np.array([e.weight for e in echoes])[:, None, None]
    return w * maps.m0 * np.exp(-te / maps.t2) * np.exp(-b * maps.adc)


def forward_signal(
    maps: ParameterMaps,
    echoes: Sequence[EchoComponent] = DEFAULT_ECHOES,
    check_identifiability: bool = True,
) -> ComplexImage:
    """
    Overlapping-echo signal: each echo's magnitude carried on its own phase ramp.

    Args:
        maps: Ground-truth maps
        echoes: Echo scheme
        check_identifiability: Require two distinct (te, b) pairs

    Returns:
        Complex image of the maps' shape
    """
    if not echoes:
        raise IdentifiabilityError("Echo scheme is empty")
    if check_identifiability:
        _check_identifiable(echoes)

    height, width = maps.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    magnitudes = echo_components(maps, echoes)
    signal = np.zeros((height, width), dtype=np.complex128)
    for echo, magnitude in zip(echoes, magnitudes):
        signal += magnitude * np.exp(2j * np.pi * (echo.ku * xx / width + echo.kv * yy / height))
    return ComplexImage.from_complex(signal)


def fit_echo_components(
    echo_stack: np.ndarray,
    echoes: Sequence[EchoComponent] = DEFAULT_ECHOES,
    refine: bool = False,
) -> ParameterMaps:
    """
    Invert per-echo magnitudes to (t2, adc, m0).

    Log-linear least squares over ``log s = log w + log m0 - te/t2 - b*adc``,
    optionally polished per pixel by nonlinear least squares. Pixels without
    signal get background values; results are clipped into the map envelopes.

    Raises:
        IdentifiabilityError: The echo design cannot separate T2 from ADC
    """
    echo_stack = np.asarray(echo_stack, dtype=np.float64)
    if echo_stack.ndim != 3 or echo_stack.shape[0] != len(echoes):
        raise ShapeError(f"Echo stack {echo_stack.shape} does not match {len(echoes)} echoes")
    te = np.array([e.te for e in echoes])
    b = np.array([e.b for e in echoes])
    w = np.array([e.weight for e in echoes])
    design = np.stack([np.ones_like(te), -te, -b], axis=1)
    if np.linalg.matrix_rank(design) < 3:
        raise IdentifiabilityError("Echo design is rank deficient: vary both te and b")

    _, height, width = echo_stack.shape
    flat = echo_stack.reshape(len(echoes), -1)
    valid = np.all(flat > 0, axis=0)
    rhs = np.log(flat[:, valid]) - np.log(w)[:, None]
    coef, *_ = np.linalg.lstsq(design, rhs, rcond=None)

    log_m0, r2, adc_v = coef
    if refine:
        for k in range(coef.shape[1]):
            result = least_squares(
                lambda p, s=flat[:, valid][:, k]: w * np.exp(p[0] - te * p[1] - b * p[2]) - s,
                x0=coef[:, k],
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
            log_m0[k], r2[k], adc_v[k] = result.x

    t2 = np.full(height * width, BACKGROUND["t2"])
    adc = np.full(height * width, BACKGROUND["adc"])
    m0 = np.full(height * width, BACKGROUND["m0"])
    with np.errstate(divide="ignore"):
        t2[valid] = np.where(r2 > 0, 1.0 / r2, T2_RANGE[1])
    adc[valid] = adc_v
    m0[valid] = np.exp(log_m0)

    return ParameterMaps(
        t2=np.clip(t2, *T2_RANGE).reshape(height, width),
        adc=np.clip(adc, *ADC_RANGE).reshape(height, width),
        m0=np.clip(m0, *M0_RANGE).reshape(height, width),
    )


# ============================================================================
# Domain shift
# ============================================================================


def _bias_field(rng: np.random.Generator, height: int, width: int, strength: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mix = np.zeros((height, width))
    for a in range(3):
        for c in range(3):
            if a == 0 and c == 0:
                continue
            mix += rng.uniform(-1, 1) * np.cos(np.pi * a * (xx + 0.5) / width) * np.cos(
                np.pi * c * (yy + 0.5) / height
            )
    peak = np.max(np.abs(mix))
    if peak > 0:
        mix /= peak
    return 1.0 + strength * mix


def lowfreq_mask(height: int, width: int, radius: float) -> np.ndarray:
    """Unshifted k-space mask of entries within ``radius`` (fraction of Nyquist) of DC."""
    fy = np.fft.fftfreq(height)[:, None] / 0.5
    fx = np.fft.fftfreq(width)[None, :] / 0.5
    return np.sqrt(fy**2 + fx**2) <= radius


def apply_domain_shift(
    img: ComplexImage, cfg: DomainShiftConfig, rng: np.random.Generator = None
) -> ComplexImage:
    """
    Simulate the synthetic-to-real gap.

    In order: low-frequency k-space gain, smooth multiplicative bias field,
    circularly-symmetric complex noise. Identity settings skip their step.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    z = img.to_complex()
    height, width = img.shape

    if cfg.lowfreq_gain != 1.0:
        k = np.fft.fft2(z, norm="ortho")
        k[lowfreq_mask(height, width, cfg.lowfreq_radius)] *= cfg.lowfreq_gain
        z = np.fft.ifft2(k, norm="ortho")
    if cfg.bias_strength > 0:
        z = z * _bias_field(rng, height, width, cfg.bias_strength)
    if cfg.noise_sigma > 0:
        sigma = cfg.noise_sigma * float(np.max(np.abs(z)))
        z = z + sigma * (rng.normal(size=z.shape) + 1j * rng.normal(size=z.shape))

    return ComplexImage.from_complex(z)


# ============================================================================
# Dataset generation
# ============================================================================

SPLITS = {
    "synthetic": (0, DomainTag.SYNTHETIC),
    "real": (1, DomainTag.REAL),
    "val_synthetic": (2, DomainTag.SYNTHETIC),
    "val_real": (3, DomainTag.REAL),
}


class PhantomService:
    """Generates synthetic and shifted real-domain sample splits."""

    def __init__(
        self,
        phantom: PhantomConfig,
        shift: DomainShiftConfig,
        echoes: Sequence[EchoComponent] = DEFAULT_ECHOES,
    ):
        self.phantom = phantom
        self.shift = shift
        self.echoes = list(echoes)
        _check_identifiable(self.echoes)

    def _seed(self, base: int, split_index: int, k: int) -> int:
        return int(np.random.SeedSequence([base, split_index, k]).generate_state(1, np.uint64)[0])

    def make_pair(self, split: str, k: int) -> SamplePair:
        """One sample of a split; real-domain samples keep their ground truth."""
        split_index, tag = SPLITS[split]
        cfg = self.phantom
        maps = generate_parameter_maps(
            self._seed(cfg.seed, split_index, k), cfg.height, cfg.width, cfg.n_shapes, cfg.lesion_prob
        )
        image = forward_signal(maps, self.echoes)
        if tag == DomainTag.REAL:
            rng = np.random.default_rng(self._seed(self.shift.seed, split_index, k))
            image = apply_domain_shift(image, self.shift, rng=rng)
        return SamplePair(id=f"{split}_{k:05d}", domain_tag=tag, input=image, target=maps)

    def generate_split(self, split: str, count: int) -> List[SamplePair]:
        if split not in SPLITS:
            raise InvalidInputError(f"Unknown split '{split}'")
        pairs = [self.make_pair(split, k) for k in range(count)]
        logger.info(f"Generated {count} pairs for split '{split}'")
        return pairs

    def generate_all(self) -> Dict[str, List[SamplePair]]:
        """Training and validation splits for both domains."""
        sizes = {
            "synthetic": self.phantom.n_train,
            "real": self.phantom.n_train,
            "val_synthetic": self.phantom.n_val,
            "val_real": self.phantom.n_val,
        }
        return {split: self.generate_split(split, n) for split, n in sizes.items()}
