"""Exports for external tools: legacy-VTK nodal fields and Matrix Market operators."""
import logging
from pathlib import Path

import numpy as np
import scipy.io

log = logging.getLogger(__name__)

VTK_TETRA = 10


def write_vtk(path, mesh, fields, title="h2xlda fields"):
    """ASCII unstructured grid with one SCALARS block per nodal field."""
    path = Path(path)
    for name, values in fields.items():
        if np.shape(values) != (mesh.n_vertices,):
            raise ValueError(f"field {name!r} has shape {np.shape(values)}, expected ({mesh.n_vertices},)")
    n, m = mesh.n_vertices, mesh.n_cells
    with path.open("w", encoding="ascii") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n} double\n")
        np.savetxt(f, mesh.vertices, fmt="%.17g")
        f.write(f"CELLS {m} {5 * m}\n")
        cells = np.hstack([np.full((m, 1), 4, dtype=np.int64), mesh.tetrahedra])
        np.savetxt(f, cells, fmt="%d")
        f.write(f"CELL_TYPES {m}\n")
        np.savetxt(f, np.full(m, VTK_TETRA), fmt="%d")
        f.write(f"POINT_DATA {n}\n")
        for name, values in fields.items():
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(f, np.asarray(values, dtype=np.float64), fmt="%.17g")
    log.info(f"Wrote {len(fields)} fields on {n} vertices to {path}")
    return path


def state_fields(system, state, v_ee=None):
    if v_ee is None:
        v_ee = system.hartree_potential(system.charges(state))
    return {
        "psi_plus": state.c_plus,
        "psi_minus": state.c_minus,
        "rho": state.density,
        "V_ee": v_ee,
    }


def write_matrix_market(path, operator, comment=""):
    """Coordinate-format dump of a SparseOperator (or any scipy sparse matrix)."""
    path = Path(path)
    matrix = getattr(operator, "matrix", operator)
    symmetry = "symmetric" if getattr(operator, "symmetric", False) else "general"
    scipy.io.mmwrite(str(path), matrix, comment=comment, symmetry=symmetry)
    log.info(f"Wrote {matrix.shape[0]}x{matrix.shape[1]} matrix to {path}")
    return path
