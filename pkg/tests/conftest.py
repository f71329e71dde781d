import numpy as np
import pytest

from anisoflux.fespace import build_space
from anisoflux.mesh import build_rect_mesh


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def perturbed_mesh_3x3():
    return build_rect_mesh(3, 3, 1.0, 1.0, perturb_factor=0.12, seed=11)


@pytest.fixture(scope="session")
def q2_space(perturbed_mesh_3x3):
    return build_space(perturbed_mesh_3x3, "cg", 2)
