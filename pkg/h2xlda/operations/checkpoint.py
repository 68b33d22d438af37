"""Checkpoints: meshes and orbital states in compressed .npz files.

A state checkpoint carries the mesh it lives on, so it can be reloaded
without rebuilding the refinement.
"""
import logging
from pathlib import Path

import numpy as np

from h2xlda.exceptions import MeshError, StateError
from h2xlda.mesh import Mesh
from h2xlda.scf import OrbitalState

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _mesh_arrays(mesh: Mesh):
    return {
        "vertices": mesh.vertices,
        "tetrahedra": mesh.tetrahedra,
        "refinement_level_per_cell": mesh.refinement_level_per_cell,
        "half_extent": mesh.half_extent,
        "mesh_hash": mesh.hash,
        "checkpoint_version": CHECKPOINT_VERSION,
    }


def _mesh_from(data, path):
    version = int(data["checkpoint_version"]) if "checkpoint_version" in data else 0
    if version > CHECKPOINT_VERSION:
        raise MeshError(f"{path}: checkpoint version {version} is newer than this h2xlda ({CHECKPOINT_VERSION})")
    levels = data["refinement_level_per_cell"] if "refinement_level_per_cell" in data else None
    mesh = Mesh(data["vertices"], data["tetrahedra"], float(data["half_extent"]), refinement_level_per_cell=levels)
    if mesh.hash != str(data["mesh_hash"]):
        raise MeshError(f"{path}: mesh hash mismatch")
    return mesh


def save_mesh(path, mesh: Mesh):
    """Vertex and cell tables. The refinement history is not stored; a
    reloaded mesh gets a one-level multigrid hierarchy."""
    path = Path(path)
    np.savez_compressed(path, **_mesh_arrays(mesh))
    log.info(f"Saved {mesh!r} to {path}")
    return path


def load_mesh(path):
    path = Path(path)
    if not path.exists():
        raise MeshError(f"Mesh file {path} does not exist")
    with np.load(path) as data:
        return _mesh_from(data, path)


def save_state(path, state: OrbitalState, mesh: Mesh, delta=None):
    path = Path(path)
    np.savez_compressed(
        path,
        c_plus=state.c_plus,
        c_minus=state.c_minus,
        eps=np.array(state.eps),
        alpha=state.alpha,
        R=state.R,
        delta=np.nan if delta is None else delta,
        **_mesh_arrays(mesh),
    )
    log.info(f"Saved state (alpha={state.alpha}, R={state.R}) to {path}")
    return path


def load_state(path):
    """(OrbitalState, Mesh) from a checkpoint. The stored mesh hash is verified."""
    path = Path(path)
    if not path.exists():
        raise StateError(f"Checkpoint {path} does not exist")
    with np.load(path) as data:
        try:
            mesh = _mesh_from(data, path)
        except MeshError as e:
            raise StateError(str(e))
        if data["c_plus"].shape != (mesh.n_vertices,):
            raise StateError(f"Checkpoint {path}: coefficients do not match the stored mesh")
        eps = data["eps"]
        state = OrbitalState(
            data["c_plus"].copy(),
            data["c_minus"].copy(),
            float(eps[0]),
            float(eps[1]),
            float(data["alpha"]),
            float(data["R"]),
        )
    return state, mesh
