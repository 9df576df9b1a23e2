import numpy as np
import pytest

from axiflow import curve as cv
from axiflow import meshing as mg


@pytest.fixture(scope="session")
def bubble_domain():
    return mg.Rectangle(0.5, 0.0, 2.0)


@pytest.fixture(scope="session")
def sphere16():
    return cv.semicircle_curve(16)


@pytest.fixture(scope="session")
def sphere_mesh16(bubble_domain, sphere16):
    return mg.generate_fitted_mesh(
        bubble_domain, sphere16, float(np.mean(sphere16.chords)), seed=1
    )


@pytest.fixture(scope="session")
def sphere8():
    return cv.semicircle_curve(8)


@pytest.fixture(scope="session")
def sphere_mesh8(bubble_domain, sphere8):
    return mg.generate_fitted_mesh(
        bubble_domain, sphere8, float(np.mean(sphere8.chords)), seed=2
    )
