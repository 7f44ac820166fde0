import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from scankit.geometry import latlon_to_unit_array, sample_uniform_sphere
from scankit.log import reset_sinks
from scankit.model import Scanpath, ScanpathSet


@pytest.fixture(autouse=True, scope="session")
def plain_log_output():
    # pytest 捕获 stderr 时不需要 rich 的控制台
    reset_sinks(use_console=False)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


def random_scanpath(rng: np.random.Generator, length: int = 30) -> Scanpath:
    return Scanpath(sample_uniform_sphere(length, rng))


def scanpath_from_degrees(latlon_deg) -> Scanpath:
    latlon = np.radians(np.asarray(latlon_deg, dtype=np.float64))
    return Scanpath(latlon_to_unit_array(latlon[:, 0], latlon[:, 1]))


def random_set(rng: np.random.Generator, n: int, length: int = 30, image_id: str = "scene") -> ScanpathSet:
    return ScanpathSet([random_scanpath(rng, length) for _ in range(n)], image_id=image_id)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()
