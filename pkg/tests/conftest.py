import pytest

from chemofluid.geometry import LevelSetDomain, classify_cells
from chemofluid.model import build_derived, linear_model
from chemofluid.solver import LinearSystems, SolverConfig


@pytest.fixture(scope="session")
def disk_domain():
    return LevelSetDomain.disk(1.0)


@pytest.fixture(scope="session")
def disk64(disk_domain):
    return classify_cells(disk_domain, 1.0 / 64.0)


@pytest.fixture(scope="session")
def star_domain():
    return LevelSetDomain.star(3, 0.4)


@pytest.fixture(scope="session")
def star64(star_domain):
    return classify_cells(star_domain, 1.0 / 64.0)


@pytest.fixture(scope="session")
def lin_model():
    return linear_model(G=0.5)


@pytest.fixture(scope="session")
def derived_linear(lin_model):
    return build_derived(lin_model, 1e-10, 2.0)


@pytest.fixture(scope="session")
def lin64(disk64):
    return LinearSystems(disk64, SolverConfig())


def deep_interior(geom):
    """Interior cells whose 4-neighborhood is interior (exact stencils)."""
    deep = geom.interior.copy()
    deep[1:, :] &= geom.interior[:-1, :]
    deep[:-1, :] &= geom.interior[1:, :]
    deep[:, 1:] &= geom.interior[:, :-1]
    deep[:, :-1] &= geom.interior[:, 1:]
    return deep
