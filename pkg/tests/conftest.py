import numpy as np
import pytest

from sicurve.cell_model import CellParams
from sicurve.fem.bidomain import BidomainParams
from sicurve.fem.emi import EmiParams
from sicurve.geometry import (BoxSpec, EmiCellLayout, build_bidomain_mesh,
                              build_emi_mesh)
from sicurve.stepping import BidomainModel, EmiModel


@pytest.fixture(scope="session")
def cell_params():
    return CellParams()


@pytest.fixture(scope="session")
def small_bidomain_mesh():
    return build_bidomain_mesh(BoxSpec((0, 0, 0), (0.4, 0.2, 0.05)), 0.05)


@pytest.fixture(scope="session")
def coarse_sheet_mesh():
    """Small tissue sheet, fine enough for propagation tests."""
    return build_bidomain_mesh(BoxSpec((0, 0, 0), (1.0, 0.5, 0.05)), 0.025)


@pytest.fixture(scope="session")
def coarse_sheet_model(coarse_sheet_mesh, cell_params):
    return BidomainModel(coarse_sheet_mesh, BidomainParams(), cell_params, 0.1)


@pytest.fixture(scope="session")
def two_cell_mesh():
    return build_emi_mesh(EmiCellLayout(nx=2, ny=1), h=0.005)


@pytest.fixture(scope="session")
def two_cell_model(two_cell_mesh, cell_params):
    return EmiModel(two_cell_mesh, EmiParams(), cell_params, 0.1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240831)
