import numpy as np
import pytest

from squidstore.circuit import derive_energies, load_device
from squidstore.resonator import load_geometry

from importlib import resources

PRESETS = resources.files("squidstore").joinpath("presets")


def preset(name: str) -> str:
    return str(PRESETS.joinpath(name))


@pytest.fixture(scope="session")
def demo_device():
    return load_device(preset("demo.device"))


@pytest.fixture(scope="session")
def xy_device():
    return load_device(preset("xy_only.device"))


@pytest.fixture(scope="session")
def demo_energies(demo_device):
    return derive_energies(demo_device)


@pytest.fixture(scope="session")
def xy_energies(xy_device):
    return derive_energies(xy_device)


@pytest.fixture(scope="session")
def bus_geometry():
    return load_geometry(preset("bus.geometry"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20260811)


def random_pure(rng, dim=2):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_density(rng, dim=2, rank=None):
    rank = rank or dim
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (a + a.conj().T)
