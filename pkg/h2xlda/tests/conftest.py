import copy

import numpy as np
import pytest

from h2xlda.conf import settings
from h2xlda.mesh import MeshConfig, build_box_mesh
from h2xlda.scf import SCFConfig, build_system, scf_solve

# A mesh small enough for dense checks: a few hundred vertices, nucleus cells ~1 au.
TINY_TREE = {
    "mesh": {"half_extent": 10.0, "initial_cells_per_axis": 2, "local_refine_rounds": 3, "global_refine_rounds": 0},
    "solver": {"rtol": 1e-10},
}


def configured(tree, build, *args, **kwargs):
    """Run `build` with the given settings tree active, then clear the settings."""
    settings.configure(copy.deepcopy(tree))
    try:
        return build(*args, **kwargs)
    finally:
        settings.reset()


@pytest.fixture(autouse=True)
def clean_settings():
    # Every test starts from the defaults table.
    settings.reset()
    yield
    settings.reset()


@pytest.fixture
def tiny_settings():
    settings.configure(copy.deepcopy(TINY_TREE))
    return settings


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("H2XLDA_OUTPUT_ROOT", str(tmp_path / "out"))
    return tmp_path / "out"


@pytest.fixture(scope="session")
def box_mesh():
    """The 48-cell coarse tiling of [-25, 25]^3."""
    return build_box_mesh(MeshConfig(local_refine_rounds=0, global_refine_rounds=0))


@pytest.fixture(scope="session")
def tiny_system():
    """H2 at bond length 2 (R = 1), alpha = 0.93, on the tiny mesh."""
    return configured(TINY_TREE, build_system, 1.0, 0.93)


@pytest.fixture(scope="session")
def tiny_linear_system():
    """Same mesh, no Hartree and no exchange: a plain one-electron problem."""
    return configured(TINY_TREE, build_system, 1.0, 0.0, include_hartree=False)


@pytest.fixture(scope="session")
def alpha_zero_state():
    """Converged alpha = 0 state from the antiferro guess, with its system."""
    system = configured(TINY_TREE, build_system, 1.0, 0.0)
    state, report = scf_solve(system, SCFConfig(tol_energy=1e-9, max_iterations=400, init="antiferro"))
    assert report.converged
    return system, state, report


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
