"""k-space operations: unitary FFTs, amplitude statistics, distance maps and WDFP."""
import logging
from typing import List, Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from src.models.config_models import PerturbationConfig, PerturbationMode
from src.models.domain_models import ComplexImage, DistanceMap
from src.utils.errors import BoundsError, InvalidInputError, ShapeError

logger = logging.getLogger(__name__)


# ============================================================================
# Transforms
# ============================================================================


def fft2(img: ComplexImage) -> ComplexImage:
    """Unitary 2-D DFT, DC at index (0, 0)."""
    return ComplexImage.from_complex(np.fft.fft2(img.to_complex(), norm="ortho"))


def ifft2(spec: ComplexImage) -> ComplexImage:
    """Unitary inverse 2-D DFT."""
    return ComplexImage.from_complex(np.fft.ifft2(spec.to_complex(), norm="ortho"))


def amplitude_spectrum(img: ComplexImage) -> np.ndarray:
    """Modulus of fft2(img), center-shifted so DC sits at (H//2, W//2)."""
    return np.abs(np.fft.fftshift(np.fft.fft2(img.to_complex(), norm="ortho")))


# ============================================================================
# Distances
# ============================================================================


def wasserstein1(a: Sequence[float], b: Sequence[float]) -> float:
    """
    1-Wasserstein distance between two empirical distributions.

    Equal-length samples use the mean absolute difference of the sorted
    samples; otherwise the area between the empirical CDFs is integrated
    over the merged breakpoints.

    Raises:
        InvalidInputError: Empty or non-finite samples
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("wasserstein1 needs two non-empty sample lists")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("wasserstein1 samples must be finite")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(wasserstein_distance(a, b))


def _stack_spectra(corpus: List[ComplexImage], shape) -> np.ndarray:
    spectra = np.empty((len(corpus),) + tuple(shape), dtype=np.float64)
    for k, img in enumerate(corpus):
        if img.shape != tuple(shape):
            raise ShapeError(f"Image {k} has shape {img.shape}, expected {tuple(shape)}")
        spectra[k] = amplitude_spectrum(img)
    return spectra


def build_distance_map(
    syn_corpus: List[ComplexImage], real_corpus: List[ComplexImage]
) -> DistanceMap:
    """
    Per-frequency 1-Wasserstein distances between two corpora's amplitude spectra.

    Args:
        syn_corpus: Synthetic images
        real_corpus: Real-domain images of the same H×W

    Returns:
        DistanceMap on the center-shifted frequency grid
    """
    if not syn_corpus or not real_corpus:
        raise InvalidInputError("Both corpora must be non-empty")
    shape = syn_corpus[0].shape
    syn = _stack_spectra(syn_corpus, shape)
    real = _stack_spectra(real_corpus, shape)

    if syn.shape[0] == real.shape[0]:
        raw = np.mean(np.abs(np.sort(syn, axis=0) - np.sort(real, axis=0)), axis=0)
    else:
        raw = np.empty(shape, dtype=np.float64)
        for i in range(shape[0]):
            for j in range(shape[1]):
                raw[i, j] = wasserstein_distance(syn[:, i, j], real[:, i, j])

    logger.info(
        f"Built distance map {shape} from {len(syn_corpus)} synthetic / "
        f"{len(real_corpus)} real images (max raw {raw.max():.4g})"
    )
    return DistanceMap.from_raw(raw, n_syn=len(syn_corpus), n_real=len(real_corpus))


# ============================================================================
# WDFP perturbation
# ============================================================================


def plane_wave(i: int, j: int, height: int, width: int) -> ComplexImage:
    """
    Unit-norm plane wave: ifft2 of the one-hot activation at unshifted index (i, j).

    Every pixel has modulus 1/sqrt(H*W).
    """
    if height < 1 or width < 1:
        raise InvalidInputError("plane_wave needs H, W >= 1")
    if not (0 <= i < height and 0 <= j < width):
        raise BoundsError(f"Index ({i}, {j}) outside {height}x{width}")
    one_hot = np.zeros((height, width), dtype=np.complex128)
    one_hot[i, j] = 1.0
    return ComplexImage.from_complex(np.fft.ifft2(one_hot, norm="ortho"))


def centered_to_unshifted(p: int, q: int, height: int, width: int):
    """Map a center-shifted frequency index to the unshifted DFT index."""
    return (p - height // 2) % height, (q - width // 2) % width


def _check_map(img: ComplexImage, dmap: DistanceMap) -> None:
    if img.shape != dmap.shape:
        raise ShapeError(f"Image {img.shape} and distance map {dmap.shape} differ")


def perturb_image(
    img: ComplexImage,
    dmap: DistanceMap,
    cfg: PerturbationConfig,
    rng: np.random.Generator = None,
) -> ComplexImage:
    """
    Add distance-weighted plane waves to an image.

    Args:
        img: Image to perturb
        dmap: Distance map of the same shape
        cfg: Mode, scale and seed
        rng: Generator to draw from; defaults to one seeded by ``cfg.seed``

    Returns:
        Perturbed image
    """
    _check_map(img, dmap)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    height, width = img.shape
    weights = dmap.normalized

    if cfg.mode == PerturbationMode.SINGLE:
        p, q = int(rng.integers(height)), int(rng.integers(width))
        sign = 1.0 if rng.integers(2) else -1.0
        i, j = centered_to_unshifted(p, q, height, width)
        wave = plane_wave(i, j, height, width).to_complex()
        delta = cfg.epsilon * sign * weights[p, q] * wave
    elif cfg.mode == PerturbationMode.FULL:
        signs = rng.choice(np.array([-1.0, 1.0]), size=(height, width))
        kspace = np.fft.ifftshift(signs * weights)
        delta = cfg.epsilon * np.fft.ifft2(kspace, norm="ortho")
    else:
        rms = float(np.sqrt(np.mean(weights**2)))
        kspace = rng.normal(0.0, 1.0, size=(height, width)) * (cfg.epsilon * rms)
        delta = np.fft.ifft2(kspace, norm="ortho")

    return ComplexImage.from_complex(img.to_complex() + delta)


class WDFPPerturber:
    """Applies WDFP to images and batches with reproducible per-sample seeds."""

    def __init__(self, dmap: DistanceMap, cfg: PerturbationConfig):
        """
        Args:
            dmap: Distance map computed offline
            cfg: Perturbation settings
        """
        self.dmap = dmap
        self.cfg = cfg

    def rng_for(self, iteration: int, index: int) -> np.random.Generator:
        """Generator for one sample of one training iteration."""
        return np.random.default_rng(np.random.SeedSequence([self.cfg.seed, iteration, index]))

    def perturb(self, img: ComplexImage, iteration: int = 0, index: int = 0) -> ComplexImage:
        return perturb_image(img, self.dmap, self.cfg, rng=self.rng_for(iteration, index))

    def perturb_batch(self, images: List[ComplexImage], iteration: int) -> List[ComplexImage]:
        if images and images[0].shape != self.dmap.shape:
            raise ShapeError(f"Batch images {images[0].shape} and distance map {self.dmap.shape} differ")
        return [self.perturb(img, iteration, k) for k, img in enumerate(images)]
