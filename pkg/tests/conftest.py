"""Shared fixtures: analytic meshes and a small fitted representation.

Session scope keeps the oracles and the fitted bank to one construction
each; tests must not mutate them.
"""

import numpy as np
import pytest

from msdf.finetune import fine_tune
from msdf.geometry.oracle import SdfOracle
from msdf.mosaic import initialize
from msdf.shapes import build_shape


@pytest.fixture(scope="session")
def sphere_mesh():
    return build_shape("sphere")


@pytest.fixture(scope="session")
def sphere_oracle(sphere_mesh):
    return SdfOracle(sphere_mesh)


@pytest.fixture(scope="session")
def torus_mesh():
    return build_shape("torus")


@pytest.fixture(scope="session")
def torus_oracle(torus_mesh):
    return SdfOracle(torus_mesh)


@pytest.fixture(scope="session")
def sphere_bank(sphere_oracle):
    """Sampled (untuned) sphere representation, 96 grids of 5^3 values."""
    return initialize(sphere_oracle, 96, 5, seed=0)


@pytest.fixture(scope="session")
def tuned_sphere_bank(sphere_bank, sphere_oracle):
    """The same representation after a short fine-tune."""
    return fine_tune(sphere_bank, sphere_oracle, steps=40, seed=0)


@pytest.fixture(scope="session")
def unit_square_pair():
    """Two parallel unit squares at z = 0 and z = delta, as meshes."""
    from msdf.geometry.mesh import TriangleMesh

    def square(z):
        v = np.array([[0.0, 0.0, z], [1.0, 0.0, z], [1.0, 1.0, z], [0.0, 1.0, z]])
        f = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
        return TriangleMesh(v, f)

    delta = 0.05
    return square(0.0), square(delta), delta
