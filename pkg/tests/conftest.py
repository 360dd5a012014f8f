"""Pytest configuration and fixtures for all tests."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path so 'src' module can be imported
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


@pytest.fixture(scope="session")
def small_network_config():
    """Two-scale HFSNet small enough for CPU tests on 16×16 inputs (session-scoped)."""
    from src.models.config_models import NetworkConfig

    return NetworkConfig(
        scales=2,
        base_channels=8,
        window_size=4,
        attn_heads=2,
        fas_branches=2,
        fas_kernels=[3, 5],
        fas_groups=2,
    )


@pytest.fixture(scope="session")
def tiny_phantom_config():
    """16×16 phantoms that always carry a lesion (session-scoped)."""
    from src.models.config_models import PhantomConfig

    return PhantomConfig(height=16, width=16, n_shapes=3, lesion_prob=1.0, n_train=4, n_val=2, seed=3)


@pytest.fixture(scope="module")
def tiny_splits(tiny_phantom_config):
    """Synthetic, real and validation splits from the tiny phantom config (module-scoped)."""
    from src.models.config_models import DomainShiftConfig
    from src.services.phantom_service import PhantomService

    return PhantomService(tiny_phantom_config, DomainShiftConfig()).generate_all()


@pytest.fixture(scope="module")
def tiny_distance_map(tiny_splits):
    """Distance map between the tiny synthetic and real splits (module-scoped)."""
    from src.services.kspace_service import build_distance_map

    return build_distance_map(
        [p.input for p in tiny_splits["synthetic"]], [p.input for p in tiny_splits["real"]]
    )


@pytest.fixture(scope="function")
def rng():
    """Fresh seeded generator per test (function-scoped to avoid state pollution)."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="function")
def random_image(rng):
    """Random 16×16 complex image."""
    from src.models.domain_models import ComplexImage

    return ComplexImage(re=rng.normal(size=(16, 16)), im=rng.normal(size=(16, 16)))


@pytest.fixture(scope="function")
def fast_train_config():
    """Short fps-mode schedule with a checkpoint every two iterations."""
    from src.models.config_models import PerturbationConfig, TrainConfig

    return TrainConfig(
        batch_size=2,
        total_iterations=4,
        checkpoint_every=2,
        lr_start=1e-3,
        lr_end=1e-5,
        seed=5,
        scales=2,
        perturbation=PerturbationConfig(epsilon=0.5, seed=9),
    )
