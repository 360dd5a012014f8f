"""Unit tests for k-space transforms, distance maps and WDFP perturbation."""
import numpy as np
import pytest

pytestmark = pytest.mark.unit


@pytest.fixture(scope="function")
def ramp_map():
    """Distance map whose normalized weights rise from 0 to 1 across the grid."""
    from src.models.domain_models import DistanceMap

    raw = np.arange(256, dtype=np.float64).reshape(16, 16)
    return DistanceMap.from_raw(raw, n_syn=4, n_real=4)


def _cdf_area(a, b) -> float:
    """Integral of |F_a - F_b| over the merged sorted breakpoints."""
    a, b = np.sort(a), np.sort(b)
    points = np.sort(np.concatenate([a, b]))
    widths = np.diff(points)
    f_a = np.searchsorted(a, points[:-1], side="right") / a.size
    f_b = np.searchsorted(b, points[:-1], side="right") / b.size
    return float(np.sum(np.abs(f_a - f_b) * widths))


class TestTransforms:
    """Test suite for unitary FFTs and amplitude spectra."""

    def test_parseval(self, random_image):
        """Test that the unitary transform preserves the l2 norm."""
        from src.services.kspace_service import fft2

        assert fft2(random_image).norm() == pytest.approx(random_image.norm(), rel=1e-12)

    def test_inverse(self, random_image):
        """Test that ifft2 undoes fft2."""
        from src.services.kspace_service import fft2, ifft2

        back = ifft2(fft2(random_image))
        np.testing.assert_allclose(back.re, random_image.re, atol=1e-12)
        np.testing.assert_allclose(back.im, random_image.im, atol=1e-12)

    def test_amplitude_spectrum_is_centered(self):
        """Test that a constant image puts all energy at (H//2, W//2)."""
        from src.models.domain_models import ComplexImage
        from src.services.kspace_service import amplitude_spectrum

        spectrum = amplitude_spectrum(ComplexImage(re=np.ones((16, 16)), im=np.zeros((16, 16))))
        assert spectrum[8, 8] == pytest.approx(16.0)
        spectrum[8, 8] = 0.0
        assert np.max(spectrum) == pytest.approx(0.0, abs=1e-12)


class TestWasserstein:
    """Test suite for the 1-Wasserstein distance."""

    def test_equal_lengths(self):
        """Test shifted samples of equal size."""
        from src.services.kspace_service import wasserstein1

        assert wasserstein1([0.0, 1.0, 2.0], [3.0, 1.0, 2.0]) == pytest.approx(1.0)

    def test_unequal_lengths(self):
        """Test the CDF-area form on samples of different sizes."""
        from src.services.kspace_service import wasserstein1

        assert wasserstein1([0.0], [0.0, 2.0]) == pytest.approx(1.0)

    def test_symmetry(self, rng):
        """Test W1(a, b) == W1(b, a)."""
        from src.services.kspace_service import wasserstein1

        a, b = rng.normal(size=7), rng.normal(size=5)
        assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a))

    def test_matches_cdf_area(self, rng):
        """Test random samples of mixed sizes against the exact area between the empirical CDFs."""
        from src.services.kspace_service import wasserstein1

        for _ in range(200):
            a = rng.normal(size=int(rng.integers(1, 12)))
            b = rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(1, 12)))
            assert wasserstein1(a, b) == pytest.approx(_cdf_area(a, b), abs=1e-9)

    def test_seven_against_eleven(self, rng):
        """Test the 7-versus-11 sample case."""
        from src.services.kspace_service import wasserstein1

        a, b = rng.uniform(size=7), rng.uniform(size=11)
        assert wasserstein1(a, b) == pytest.approx(_cdf_area(a, b), abs=1e-9)

    def test_triangle_inequality(self, rng):
        """Test W1(a, c) <= W1(a, b) + W1(b, c) on random triples."""
        from src.services.kspace_service import wasserstein1

        for _ in range(100):
            a, b, c = (rng.normal(scale=rng.uniform(0.5, 2), size=int(rng.integers(1, 9))) for _k in range(3))
            assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9

    def test_empty_sample(self):
        """Test that an empty sample is rejected."""
        from src.services.kspace_service import wasserstein1
        from src.utils.errors import InvalidInputError

        with pytest.raises(InvalidInputError):
            wasserstein1([], [1.0])


class TestDistanceMap:
    """Test suite for build_distance_map."""

    def test_identical_corpora(self, tiny_splits):
        """Test that a corpus against itself has zero distance everywhere."""
        from src.services.kspace_service import build_distance_map

        images = [p.input for p in tiny_splits["synthetic"]]
        dmap = build_distance_map(images, images)
        assert np.all(dmap.raw == 0.0)
        assert np.all(dmap.normalized == 0.0)

    def test_normalization_range(self, tiny_distance_map):
        """Test that normalized distances span [0, 1]."""
        assert tiny_distance_map.normalized.min() == pytest.approx(0.0)
        assert tiny_distance_map.normalized.max() == pytest.approx(1.0)
        assert tiny_distance_map.n_syn == tiny_distance_map.n_real == 4

    def test_unequal_corpus_sizes(self, tiny_splits):
        """Test the per-frequency CDF-area path when corpus sizes differ."""
        from src.services.kspace_service import amplitude_spectrum, build_distance_map, wasserstein1

        syn = [p.input for p in tiny_splits["synthetic"]]
        real = [p.input for p in tiny_splits["real"][:3]]
        dmap = build_distance_map(syn, real)
        expected = wasserstein1(
            [amplitude_spectrum(img)[5, 7] for img in syn], [amplitude_spectrum(img)[5, 7] for img in real]
        )
        assert dmap.raw[5, 7] == pytest.approx(expected)

    def test_doubled_corpus_gives_mean_amplitude(self, tiny_splits):
        """Test that against a ×2 copy of itself a corpus's distance is its mean amplitude."""
        from src.models.domain_models import ComplexImage
        from src.services.kspace_service import amplitude_spectrum, build_distance_map

        syn = [p.input for p in tiny_splits["synthetic"]]
        doubled = [ComplexImage(re=2.0 * img.re, im=2.0 * img.im) for img in syn]
        dmap = build_distance_map(syn, doubled)
        mean_amplitude = np.mean([amplitude_spectrum(img) for img in syn], axis=0)
        np.testing.assert_allclose(dmap.raw, mean_amplitude, rtol=1e-12, atol=1e-15)

    def test_lowfreq_gain_concentrates_distance(self):
        """Test a low-frequency gain between corpora puts the largest distances at the k-space center."""
        from src.models.config_models import DomainShiftConfig
        from src.services.kspace_service import build_distance_map
        from src.services.phantom_service import apply_domain_shift, forward_signal, generate_parameter_maps

        syn = [forward_signal(generate_parameter_maps(seed, 32, 32, 4, 0.5)) for seed in range(6)]
        shift = DomainShiftConfig(lowfreq_gain=1.5, lowfreq_radius=0.2, noise_sigma=0.0, bias_strength=0.0)
        real = [apply_domain_shift(img, shift) for img in syn]
        normalized = build_distance_map(syn, real).normalized
        center = np.zeros((32, 32), dtype=bool)
        center[12:20, 12:20] = True
        assert normalized[center].mean() > normalized[~center].mean()
        assert normalized[16, 16] > 0.1

    def test_invariant_to_corpus_order(self, tiny_splits):
        """Test reordering either corpus leaves the map unchanged."""
        from src.services.kspace_service import build_distance_map

        syn = [p.input for p in tiny_splits["synthetic"]]
        real = [p.input for p in tiny_splits["real"]]
        a = build_distance_map(syn, real)
        b = build_distance_map(syn[::-1], real[1:] + real[:1])
        np.testing.assert_array_equal(a.raw, b.raw)

    def test_shape_mismatch(self, random_image):
        """Test that corpora must share one grid."""
        from src.models.domain_models import ComplexImage
        from src.services.kspace_service import build_distance_map
        from src.utils.errors import ShapeError

        other = ComplexImage(re=np.zeros((8, 8)), im=np.zeros((8, 8)))
        with pytest.raises(ShapeError):
            build_distance_map([random_image], [other])


class TestPlaneWave:
    """Test suite for plane waves and index mapping."""

    def test_constant_modulus(self):
        """Test every pixel has modulus 1/sqrt(HW) and the wave has unit norm."""
        from src.services.kspace_service import plane_wave

        wave = plane_wave(3, 5, 16, 16)
        np.testing.assert_allclose(np.abs(wave.to_complex()), 1.0 / 16.0)
        assert wave.norm() == pytest.approx(1.0)

    def test_out_of_bounds(self):
        """Test that an index outside the grid is rejected."""
        from src.services.kspace_service import plane_wave
        from src.utils.errors import BoundsError

        with pytest.raises(BoundsError):
            plane_wave(16, 0, 16, 16)

    def test_center_maps_to_dc(self):
        """Test that the center-shifted DC position maps to (0, 0)."""
        from src.services.kspace_service import centered_to_unshifted

        assert centered_to_unshifted(8, 8, 16, 16) == (0, 0)
        assert centered_to_unshifted(0, 0, 16, 16) == (8, 8)


class TestPerturbation:
    """Test suite for WDFP perturbation."""

    def test_single_mode_norm_bound(self, random_image, ramp_map):
        """Test that one plane wave moves the image by at most epsilon."""
        from src.models.config_models import PerturbationConfig, PerturbationMode
        from src.services.kspace_service import WDFPPerturber

        perturber = WDFPPerturber(ramp_map, PerturbationConfig(mode=PerturbationMode.SINGLE, epsilon=0.7))
        for index in range(8):
            out = perturber.perturb(random_image, 0, index)
            delta = np.linalg.norm(out.to_complex() - random_image.to_complex())
            assert delta <= 0.7 + 1e-12

    def test_full_mode_norm(self, random_image, ramp_map):
        """Test that the full-spectrum perturbation has norm epsilon * ||w||."""
        from src.models.config_models import PerturbationConfig
        from src.services.kspace_service import WDFPPerturber

        perturber = WDFPPerturber(ramp_map, PerturbationConfig(epsilon=0.3))
        out = perturber.perturb(random_image, 2, 1)
        delta = np.linalg.norm(out.to_complex() - random_image.to_complex())
        assert delta == pytest.approx(0.3 * np.linalg.norm(ramp_map.normalized), rel=1e-10)

    def test_zero_epsilon_is_identity(self, random_image, ramp_map):
        """Test that epsilon = 0 returns the image unchanged."""
        from src.models.config_models import PerturbationConfig
        from src.services.kspace_service import WDFPPerturber

        out = WDFPPerturber(ramp_map, PerturbationConfig(epsilon=0.0)).perturb(random_image)
        np.testing.assert_array_equal(out.re, random_image.re)
        np.testing.assert_array_equal(out.im, random_image.im)

    def test_zero_map_is_identity(self, random_image):
        """Test that a zero distance map leaves the image unchanged."""
        from src.models.config_models import PerturbationConfig
        from src.models.domain_models import DistanceMap
        from src.services.kspace_service import WDFPPerturber

        dmap = DistanceMap.from_raw(np.zeros((16, 16)), 1, 1)
        out = WDFPPerturber(dmap, PerturbationConfig(epsilon=5.0)).perturb(random_image)
        np.testing.assert_allclose(out.to_complex(), random_image.to_complex(), atol=0)

    def test_reproducible_per_sample(self, random_image, ramp_map):
        """Test that (seed, iteration, index) fixes the draw and index changes it."""
        from src.models.config_models import PerturbationConfig
        from src.services.kspace_service import WDFPPerturber

        perturber = WDFPPerturber(ramp_map, PerturbationConfig(seed=11))
        a = perturber.perturb(random_image, 3, 0)
        b = perturber.perturb(random_image, 3, 0)
        c = perturber.perturb(random_image, 3, 1)
        np.testing.assert_array_equal(a.re, b.re)
        assert not np.array_equal(a.re, c.re)

    def test_batch_matches_single(self, random_image, ramp_map):
        """Test that batch element k equals perturb(img, iteration, k)."""
        from src.models.config_models import PerturbationConfig
        from src.services.kspace_service import WDFPPerturber

        perturber = WDFPPerturber(ramp_map, PerturbationConfig())
        batch = perturber.perturb_batch([random_image, random_image], 4)
        np.testing.assert_array_equal(batch[1].re, perturber.perturb(random_image, 4, 1).re)

    def test_gaussian_mode(self, random_image, ramp_map):
        """Test the distance-agnostic control perturbs every image."""
        from src.models.config_models import PerturbationConfig, PerturbationMode
        from src.services.kspace_service import WDFPPerturber

        perturber = WDFPPerturber(ramp_map, PerturbationConfig(mode=PerturbationMode.GAUSSIAN))
        out = perturber.perturb(random_image)
        assert np.linalg.norm(out.to_complex() - random_image.to_complex()) > 0

    def test_shape_mismatch(self, ramp_map):
        """Test that the image must match the distance map grid."""
        from src.models.config_models import PerturbationConfig
        from src.models.domain_models import ComplexImage
        from src.services.kspace_service import WDFPPerturber
        from src.utils.errors import ShapeError

        small = ComplexImage(re=np.zeros((8, 8)), im=np.zeros((8, 8)))
        with pytest.raises(ShapeError):
            WDFPPerturber(ramp_map, PerturbationConfig()).perturb(small)
