import numpy as np
import pytest

from vbc.phantom import PhantomSpec, generate_phantom
from vbc.volume import HUVolume, LabelVolume, Spacing


def small_phantom_spec(seed=0, **overrides):
    """Desk-scale phantom: 64 in-plane so a levels<=3 network divides evenly."""
    defaults = dict(
        seed=seed,
        nz=24,
        size=64,
        spacing=Spacing(5.0, 2.0, 2.0),
        sat_thickness=0.10,
        muscle_thickness=0.08,
        bone_count=2,
        bone_radius=0.07,
        visceral_fat_fraction=0.35,
        thoracic_cap=5,
        noise_sigma_hu=20.0,
    )
    defaults.update(overrides)
    return PhantomSpec(**defaults)


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom(small_phantom_spec(seed=7))


@pytest.fixture(scope="session")
def clean_phantom():
    return generate_phantom(small_phantom_spec(seed=11, noise_sigma_hu=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_hu():
    data = np.arange(4 * 8 * 8, dtype=np.float32).reshape(4, 8, 8) - 100.0
    return HUVolume(data, Spacing(5.0, 1.0, 1.0))


@pytest.fixture
def tiny_labels():
    data = np.zeros((4, 8, 8), dtype=np.uint8)
    data[1, 2:4, 2:4] = 1
    data[2, 4:6, 4:6] = 4
    data[3] = 255
    return LabelVolume(data, Spacing(5.0, 1.0, 1.0))
