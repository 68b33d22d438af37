"""P1 finite-element operators on a tetrahedral mesh.

All matrices are assembled cell by cell into COO triplets (cell order),
summed into CSR and mirrored from the upper triangle, so they are exactly
symmetric. Nodal fields are plain float64 arrays of length n_vertices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from h2xlda.defaults import defaults
from h2xlda.exceptions import MeshError
from h2xlda.mesh import Mesh, cells_containing

log = logging.getLogger(__name__)

__all__ = [
    "SparseOperator",
    "NuclearPotentialSpec",
    "NodalField",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_weighted_mass",
    "weighted_mass_action",
    "lumped_mass",
    "nuclear_field",
    "default_delta",
    "interpolate",
    "transfer_field",
]

NodalField = np.ndarray

_EYE4 = np.eye(4)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Symmetric sparse matrix over mesh vertices in CSR layout."""

    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def dot(self, x):
        return self.matrix @ x

    def diagonal(self):
        return self.matrix.diagonal()

    def __add__(self, other):
        return SparseOperator(_as_csr(other) + self.matrix, self.symmetric and _is_symmetric(other))

    def __sub__(self, other):
        return SparseOperator(self.matrix - _as_csr(other), self.symmetric and _is_symmetric(other))

    def __mul__(self, scalar):
        return SparseOperator(self.matrix * float(scalar), self.symmetric)

    __rmul__ = __mul__

    def constrained(self, fixed):
        """Dirichlet constraint by row/column elimination with unit diagonal on `fixed`."""
        keep = np.ones(self.n)
        keep[np.asarray(fixed, dtype=np.int64)] = 0.0
        K = sp.diags(keep)
        A = K @ self.matrix @ K + sp.diags(1.0 - keep)
        return SparseOperator(sp.csr_matrix(A), self.symmetric)

    def submatrix(self, rows, cols=None):
        cols = rows if cols is None else cols
        return self.matrix[rows][:, cols].tocsr()


def _as_csr(other):
    return other.matrix if isinstance(other, SparseOperator) else sp.csr_matrix(other)


def _is_symmetric(other):
    return other.symmetric if isinstance(other, SparseOperator) else False


@dataclass(frozen=True)
class NuclearPotentialSpec:
    R: float
    delta: float
    centers: Optional[tuple] = None

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.centers is not None:
            centers = tuple(tuple(float(c) for c in p) for p in self.centers)
            object.__setattr__(self, "centers", centers)

    @property
    def positions(self):
        if self.centers is not None:
            return np.array(self.centers, dtype=np.float64)
        return np.array([[self.R, 0.0, 0.0], [-self.R, 0.0, 0.0]])


def element_gradients(mesh: Mesh, volume_floor=None):
    """Barycentric gradients (m, 4, 3) and cell volumes (m,)."""
    if volume_floor is None:
        volume_floor = defaults("mesh.volume_floor")
    vol = mesh.signed_volumes
    bad = np.flatnonzero(vol <= volume_floor)
    if bad.size:
        raise MeshError(f"degenerate cell {int(bad[0])}: volume {vol[bad[0]]:.3e} below floor {volume_floor:.1e}")
    inv = mesh.inverse_jacobians
    # rows of J^{-1} are the gradients of lambda_1..lambda_3
    g = np.empty((mesh.n_cells, 4, 3))
    g[:, 1:] = inv
    g[:, 0] = -inv.sum(axis=1)
    return g, vol


def _assemble(mesh: Mesh, local):
    t = mesh.tetrahedra
    rows = np.repeat(t, 4, axis=1).ravel()
    cols = np.tile(t, (1, 4)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    upper = sp.triu(A, format="csr")
    A = upper + sp.triu(A, k=1, format="csr").T
    return SparseOperator(sp.csr_matrix(A), symmetric=True)


def assemble_stiffness(mesh: Mesh) -> SparseOperator:
    """T_mn = 1/2 sum_cells int grad(eta_m) . grad(eta_n)."""
    g, vol = element_gradients(mesh)
    local = 0.5 * vol[:, None, None] * np.einsum("mik,mjk->mij", g, g)
    return _assemble(mesh, local)


def assemble_mass(mesh: Mesh) -> SparseOperator:
    """S_mn = int eta_m eta_n; the element matrix is vol (1 + delta_mn) / 20."""
    _, vol = element_gradients(mesh)
    coef = (1.0 + _EYE4) / 20
    local = vol[:, None, None] * coef[None]
    return _assemble(mesh, local)


def _check_field(mesh: Mesh, w, name="w"):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (mesh.n_vertices,):
        raise ValueError(f"{name} has shape {w.shape}, expected ({mesh.n_vertices},)")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains NaN or inf")
    return w


def assemble_weighted_mass(mesh: Mesh, w: NodalField) -> SparseOperator:
    """int eta_m w_h eta_n with w_h the P1 interpolant, integrated exactly.

    With wl the local weights and s their sum the element matrix is
    vol (1 + delta_ij) (s + w_i + w_j) / 120.
    """
    w = _check_field(mesh, w)
    _, vol = element_gradients(mesh)
    wl = w[mesh.tetrahedra]
    s = wl.sum(axis=1)
    coef = (1.0 + _EYE4)[None] * (s[:, None, None] + wl[:, :, None] + wl[:, None, :]) / 120
    local = vol[:, None, None] * coef
    return _assemble(mesh, local)


def weighted_mass_action(mesh: Mesh, w: NodalField, c: NodalField) -> NodalField:
    """(M_w c)_m = int eta_m w_h c_h without forming the matrix. Symmetric in w and c."""
    _, vol = element_gradients(mesh)
    t = mesh.tetrahedra
    wl = w[t]
    cl = c[t]
    sw = wl.sum(axis=1, keepdims=True)
    sc = cl.sum(axis=1, keepdims=True)
    swc = (wl * cl).sum(axis=1, keepdims=True)
    local = (vol[:, None] / 120) * (sw * sc + wl * sc + cl * sw + swc + 2 * wl * cl)
    return np.bincount(t.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def lumped_mass(mesh: Mesh) -> NodalField:
    """Row sums of S: a quarter of every incident cell volume."""
    _, vol = element_gradients(mesh)
    return np.bincount(mesh.tetrahedra.ravel(), weights=np.repeat(vol / 4, 4), minlength=mesh.n_vertices)


def default_delta(mesh: Mesh, positions, lo=None, hi=None):
    """Half the smallest diameter among the cells at the nuclei, clamped to [lo, hi]."""
    lo = defaults("potential.delta_min") if lo is None else lo
    hi = defaults("potential.delta_max") if hi is None else hi
    h = min(float(mesh.diameters[cells_containing(mesh, p)].min()) for p in np.atleast_2d(positions))
    return float(np.clip(0.5 * h, lo, hi))


def nuclear_field(mesh: Mesh, spec: NuclearPotentialSpec) -> NodalField:
    """-sum_k 1/(|x - X_k| + delta) at the vertices."""
    x = mesh.vertices
    v = np.zeros(mesh.n_vertices)
    for center in spec.positions:
        v -= 1.0 / (np.linalg.norm(x - center, axis=1) + spec.delta)
    return v


def interpolate(mesh: Mesh, f: Callable) -> NodalField:
    """Vertex values of f. `f` receives an (n, 3) array; scalar-only callables are applied per vertex."""
    values = None
    try:
        values = np.asarray(f(mesh.vertices), dtype=np.float64)
    except (TypeError, ValueError):
        values = None
    if values is None or values.shape != (mesh.n_vertices,):
        values = np.array([f(p) for p in mesh.vertices], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("interpolated function is not finite on every vertex")
    return values


def transfer_field(source: Mesh, values: NodalField, target: Mesh) -> NodalField:
    """P1 interpolation of a field from one mesh onto the vertices of another."""
    if source is target:
        return np.array(values, dtype=np.float64)
    out = source.interpolate_at(np.asarray(values, dtype=np.float64), target.vertices)
    out[target.boundary_vertices] = 0.0
    return out


def s_inner(S: SparseOperator, u, v):
    return float(u @ (S @ v))


def s_norm(S: SparseOperator, u):
    return float(np.sqrt(max(u @ (S @ u), 0.0)))


def dual_norm(r, lumped: NodalField, free: Optional[Sequence[int]] = None):
    """Approximate S^{-1} norm of a load vector via the lumped mass."""
    if free is not None:
        r = r[free]
        lumped = lumped[free]
    return float(np.sqrt(np.sum(r * r / lumped)))
