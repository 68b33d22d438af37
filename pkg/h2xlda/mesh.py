"""Nucleus-adapted tetrahedral meshes of the cube [-L, L]^3.

A coarse box tiling (six tetrahedra per hexahedral cell) is refined locally
around the nuclei and then uniformly. Every refinement step appends edge
midpoints to the vertex table and records their parent edges, so nested
prolongation operators can be rebuilt from `Mesh.history` alone.
"""
from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from h2xlda.defaults import defaults
from h2xlda.exceptions import MeshError

log = logging.getLogger(__name__)

__all__ = [
    "MeshConfig",
    "Mesh",
    "Refinement",
    "build_box_mesh",
    "build_mesh",
    "refine_near_points",
    "refine_uniform",
    "mirror_permutation",
]

# local vertex pairs of the six edges, in the order used by edge_keys()
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

# regular 1:8 subdivision: slots 0-3 are the parent vertices, 4-9 the
# midpoints of LOCAL_EDGES in order (m01, m02, m03, m12, m13, m23)
CORNER_CHILDREN = np.array([(0, 4, 5, 6), (4, 1, 7, 8), (5, 7, 2, 9), (6, 8, 9, 3)])
# octahedron split along each of its three diagonals, in midpoint slots
OCTAHEDRON_CHILDREN = {
    0: np.array([(4, 9, 5, 6), (4, 9, 6, 8), (4, 9, 8, 7), (4, 9, 7, 5)]),
    1: np.array([(5, 8, 4, 6), (5, 8, 6, 9), (5, 8, 9, 7), (5, 8, 7, 4)]),
    2: np.array([(6, 7, 4, 5), (6, 7, 5, 9), (6, 7, 9, 8), (6, 7, 8, 4)]),
}
OCTAHEDRON_DIAGONALS = np.array([(4, 9), (5, 8), (6, 7)])

_KEY_SHIFT = np.int64(32)


def edge_key(a, b):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return (lo << _KEY_SHIFT) | hi


def decode_key(key):
    key = np.asarray(key, dtype=np.int64)
    return key >> _KEY_SHIFT, key & np.int64(0xFFFFFFFF)


def _mirror_invariants(v):
    """Sort keys of a vector that are unchanged under v -> -v."""
    return (
        np.abs(v[..., 0]),
        np.abs(v[..., 1]),
        np.abs(v[..., 2]),
        v[..., 0] * v[..., 1],
        v[..., 1] * v[..., 2],
        v[..., 2] * v[..., 0],
    )


@dataclass(frozen=True)
class Refinement:
    """One refinement step. Vertices n_coarse .. n_coarse+len(parent_edges)-1
    are the midpoints of `parent_edges`, in order."""

    n_coarse: int
    parent_edges: np.ndarray
    kind: str

    @property
    def n_fine(self):
        return self.n_coarse + len(self.parent_edges)


@dataclass(frozen=True)
class MeshConfig:
    half_extent: float = 25.0
    initial_cells_per_axis: int = 2
    local_refine_rounds: int = 8
    global_refine_rounds: int = 2
    nucleus_positions: tuple = ((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0))
    h_min_floor: float = 1e-4
    max_vertices: int = 2_000_000

    def __post_init__(self):
        positions = tuple(tuple(float(c) for c in p) for p in self.nucleus_positions)
        object.__setattr__(self, "nucleus_positions", positions)

        if self.initial_cells_per_axis < 1:
            raise MeshError(f"initial_cells_per_axis must be >= 1, got {self.initial_cells_per_axis}")
        if self.local_refine_rounds < 0 or self.global_refine_rounds < 0:
            raise MeshError("refinement rounds must be >= 0")
        if self.h_min_floor <= 0:
            raise MeshError(f"h_min_floor must be positive, got {self.h_min_floor}")
        R = max((float(np.linalg.norm(p)) for p in positions), default=0.0)
        if not self.half_extent > R + 1:
            raise MeshError(f"half extent {self.half_extent} must exceed R + 1 = {R + 1}")

    @classmethod
    def for_molecule(cls, R, **kwargs):
        return cls(nucleus_positions=((R, 0.0, 0.0), (-R, 0.0, 0.0)), **kwargs)

    @classmethod
    def from_settings(cls, R, extra_local_rounds=0, centers=None):
        """Mesh configuration for half bond length R from the active run settings."""
        if centers is None:
            centers = ((R, 0.0, 0.0), (-R, 0.0, 0.0))
        return cls(
            half_extent=float(defaults("mesh.half_extent")),
            initial_cells_per_axis=int(defaults("mesh.initial_cells_per_axis")),
            local_refine_rounds=int(defaults("mesh.local_refine_rounds")) + extra_local_rounds,
            global_refine_rounds=int(defaults("mesh.global_refine_rounds")),
            nucleus_positions=tuple(centers),
            h_min_floor=float(defaults("mesh.h_min_floor")),
            max_vertices=int(defaults("mesh.max_vertices")),
        )

    def as_dict(self):
        return {
            "half_extent": self.half_extent,
            "initial_cells_per_axis": self.initial_cells_per_axis,
            "local_refine_rounds": self.local_refine_rounds,
            "global_refine_rounds": self.global_refine_rounds,
            "nucleus_positions": [list(p) for p in self.nucleus_positions],
            "h_min_floor": self.h_min_floor,
            "max_vertices": self.max_vertices,
        }


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral mesh. Immutable once built; arrays are read-only."""

    vertices: np.ndarray
    tetrahedra: np.ndarray
    half_extent: float
    refinement_level_per_cell: np.ndarray = None
    history: tuple = ()

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        tets = np.ascontiguousarray(self.tetrahedra, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError(f"tetrahedra must have shape (m, 4), got {tets.shape}")
        levels = self.refinement_level_per_cell
        if levels is None:
            levels = np.zeros(len(tets), dtype=np.int64)
        levels = np.ascontiguousarray(levels, dtype=np.int64)
        for array in (vertices, tets, levels):
            array.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "tetrahedra", tets)
        object.__setattr__(self, "refinement_level_per_cell", levels)
        object.__setattr__(self, "history", tuple(self.history))

    def __repr__(self):
        return f"<Mesh {self.n_vertices} vertices, {self.n_cells} cells, L={self.half_extent}>"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.tetrahedra)

    @cached_property
    def boundary_mask(self):
        L = self.half_extent
        mask = np.any(np.abs(self.vertices) >= L * (1 - 1e-12), axis=1)
        mask.setflags(write=False)
        return mask

    @cached_property
    def boundary_vertices(self):
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def interior_vertices(self):
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def jacobians(self):
        """(m, 3, 3) with columns x1-x0, x2-x0, x3-x0."""
        x = self.vertices[self.tetrahedra]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)

    @cached_property
    def signed_volumes(self):
        return np.linalg.det(self.jacobians) / 6.0

    @property
    def volumes(self):
        return self.signed_volumes

    @cached_property
    def inverse_jacobians(self):
        return np.linalg.inv(self.jacobians)

    @cached_property
    def centroids(self):
        return self.vertices[self.tetrahedra].mean(axis=1)

    @cached_property
    def edge_keys(self):
        """(m, 6) keys of the cell edges in LOCAL_EDGES order."""
        t = self.tetrahedra
        return edge_key(t[:, LOCAL_EDGES[:, 0]], t[:, LOCAL_EDGES[:, 1]])

    @cached_property
    def edges(self):
        a, b = decode_key(np.unique(self.edge_keys))
        return np.stack([a, b], axis=1)

    @cached_property
    def diameters(self):
        x = self.vertices[self.tetrahedra]
        d = x[:, LOCAL_EDGES[:, 0]] - x[:, LOCAL_EDGES[:, 1]]
        return np.sqrt((d * d).sum(axis=2)).max(axis=1)

    @property
    def min_diameter(self):
        return float(self.diameters.min())

    @cached_property
    def hash(self):
        digest = hashlib.sha256()
        digest.update(np.float64(self.half_extent).tobytes())
        digest.update(self.vertices.tobytes())
        digest.update(self.tetrahedra.tobytes())
        return digest.hexdigest()

    def faces(self):
        """Unique sorted vertex triples of all cell faces and their incidence counts."""
        f = np.sort(self.tetrahedra[:, LOCAL_FACES].reshape(-1, 3), axis=1)
        return np.unique(f, axis=0, return_counts=True)

    def validate(self):
        """Raise MeshError unless the mesh satisfies the structural invariants."""
        vol = self.signed_volumes
        if np.any(vol <= 0):
            bad = int(np.flatnonzero(vol <= 0)[0])
            raise MeshError(f"cell {bad} has non-positive signed volume {vol[bad]:.3e}")

        expected = (2 * self.half_extent) ** 3
        if abs(vol.sum() - expected) > 1e-10 * expected:
            raise MeshError(f"cells cover volume {vol.sum():.12e}, expected {expected:.12e}")

        faces, counts = self.faces()
        if np.any(counts > 2):
            raise MeshError("a face is shared by more than two cells")
        outer = faces[counts == 1]
        L = self.half_extent
        coords = self.vertices[outer]
        on_plane = np.zeros(len(outer), dtype=bool)
        for axis in range(3):
            for side in (-L, L):
                on_plane |= np.all(np.abs(coords[:, :, axis] - side) <= 1e-12 * L, axis=1)
        if not np.all(on_plane):
            raise MeshError("mesh is not conforming: a hanging face lies inside the domain")

    @cached_property
    def _centroid_tree(self):
        return cKDTree(self.centroids)

    def barycentric(self, cells, points):
        x0 = self.vertices[self.tetrahedra[cells, 0]]
        lam = np.einsum("nij,nj->ni", self.inverse_jacobians[cells], points - x0)
        return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)

    def locate(self, points, tol=1e-10):
        """Containing cell and barycentric coordinates for each point; cell -1 outside the mesh."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cells = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 4))
        if len(points) == 0:
            return cells, bary

        k = min(24, self.n_cells)
        _, candidates = self._centroid_tree.query(points, k=k)
        candidates = np.asarray(candidates).reshape(len(points), k)
        pending = np.arange(len(points))
        for column in range(k):
            if pending.size == 0:
                break
            trial = candidates[pending, column]
            lam = self.barycentric(trial, points[pending])
            hit = lam.min(axis=1) >= -tol
            cells[pending[hit]] = trial[hit]
            bary[pending[hit]] = lam[hit]
            pending = pending[~hit]

        L = self.half_extent
        for p in pending:
            if np.any(np.abs(points[p]) > L * (1 + 1e-12)):
                continue
            lam = self.barycentric(np.arange(self.n_cells), np.broadcast_to(points[p], (self.n_cells, 3)))
            best = int(np.argmax(lam.min(axis=1)))
            if lam[best].min() >= -tol:
                cells[p] = best
                bary[p] = lam[best]
        return cells, bary

    def interpolate_at(self, values, points):
        """Evaluate the P1 field `values` at arbitrary points (0 outside the domain)."""
        cells, bary = self.locate(points)
        out = np.zeros(len(cells))
        inside = cells >= 0
        out[inside] = np.einsum("ni,ni->n", bary[inside], values[self.tetrahedra[cells[inside]]])
        return out


def build_box_mesh(config: MeshConfig) -> Mesh:
    """Uniform tiling of [-L, L]^3 with six tetrahedra per cube (Kuhn split
    along the (1, 1, 1) diagonal)."""
    n = config.initial_cells_per_axis
    L = float(config.half_extent)
    ticks = np.linspace(-L, L, n + 1)
    k, j, i = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
    vertices = np.stack([ticks[i.ravel()], ticks[j.ravel()], ticks[k.ravel()]], axis=1)

    stride = np.array([1, n + 1, (n + 1) ** 2])
    offsets = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        path = [0]
        for axis in perm:
            corner[axis] = 1
            path.append(int(corner @ stride))
        offsets.append(path)
    offsets = np.array(offsets)

    cz, cy, cx = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = cx.ravel() + (n + 1) * (cy.ravel() + (n + 1) * cz.ravel())
    tets = (base[:, None, None] + offsets[None, :, :]).reshape(-1, 4)
    tets = _orient(vertices, tets)
    return Mesh(vertices=vertices, tetrahedra=tets, half_extent=L)


def _orient(vertices, tets):
    x = vertices[tets]
    det = np.linalg.det(np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2))
    tets = tets.copy()
    flip = det < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
    return tets


def cells_containing(mesh: Mesh, point, tol=1e-10):
    """All cells whose closure contains `point`; the nearest cell by centroid
    distance if there is none."""
    point = np.asarray(point, dtype=np.float64)
    lam = mesh.barycentric(np.arange(mesh.n_cells), np.broadcast_to(point, (mesh.n_cells, 3)))
    hits = np.flatnonzero(lam.min(axis=1) >= -tol)
    if hits.size:
        return hits
    d = np.linalg.norm(mesh.centroids - point, axis=1)
    return np.array([int(np.argmin(d))])


def _longest_local_edge(vertices, tets):
    """Local index (0..5) of the longest edge of each cell. Ties are broken by
    mirror-invariant properties of the edge midpoint, then by vertex index."""
    x = vertices[tets]
    a = x[:, LOCAL_EDGES[:, 0]]
    b = x[:, LOCAL_EDGES[:, 1]]
    d = a - b
    length2 = (d * d).sum(axis=2)
    mid = 0.5 * (a + b)
    keys = edge_key(tets[:, LOCAL_EDGES[:, 0]], tets[:, LOCAL_EDGES[:, 1]])
    order = np.lexsort((keys,) + _mirror_invariants(mid)[::-1] + (-length2,), axis=-1)
    return order[:, 0]


def _bisect(mesh: Mesh, seed_keys, max_vertices):
    """Split every edge in `seed_keys` and restore conformity by longest-edge
    bisection of every cell that still carries a split edge."""
    coords = [mesh.vertices]
    n = mesh.n_vertices
    tets = mesh.tetrahedra.copy()
    levels = mesh.refinement_level_per_cell.copy()
    midpoint = {}
    parents = []

    def add_midpoints(keys, vertices):
        nonlocal n
        fresh = np.setdiff1d(np.unique(keys), np.fromiter(midpoint.keys(), dtype=np.int64, count=len(midpoint)))
        if fresh.size == 0:
            return vertices
        a, b = decode_key(fresh)
        for key in fresh.tolist():
            midpoint[key] = n
            n += 1
        if n > max_vertices:
            raise MeshError(f"refinement would exceed the vertex budget of {max_vertices}")
        parents.append(np.stack([a, b], axis=1))
        coords.append(0.5 * (vertices[a] + vertices[b]))
        return np.concatenate(coords)

    vertices = add_midpoints(np.asarray(seed_keys, dtype=np.int64), mesh.vertices)
    while True:
        split = np.fromiter(midpoint.keys(), dtype=np.int64, count=len(midpoint))
        keys = edge_key(tets[:, LOCAL_EDGES[:, 0]], tets[:, LOCAL_EDGES[:, 1]])
        flagged = np.flatnonzero(np.isin(keys, split).any(axis=1))
        if flagged.size == 0:
            break

        local = _longest_local_edge(vertices, tets[flagged])
        longest = keys[flagged, local]
        vertices = add_midpoints(longest, vertices)
        mids = np.array([midpoint[key] for key in longest.tolist()], dtype=np.int64)

        i = LOCAL_EDGES[local, 0]
        j = LOCAL_EDGES[local, 1]
        rows = np.arange(flagged.size)
        first = tets[flagged].copy()
        second = tets[flagged].copy()
        first[rows, i] = mids
        second[rows, j] = mids
        tets[flagged] = first
        tets = np.concatenate([tets, second])
        levels[flagged] += 1
        levels = np.concatenate([levels, levels[flagged]])

    parent_edges = np.concatenate(parents) if parents else np.zeros((0, 2), dtype=np.int64)
    step = Refinement(n_coarse=mesh.n_vertices, parent_edges=parent_edges, kind="local")
    return Mesh(
        vertices=vertices,
        tetrahedra=tets,
        half_extent=mesh.half_extent,
        refinement_level_per_cell=levels,
        history=mesh.history + (step,),
    )


def refine_near_points(mesh: Mesh, points, rounds: int, h_min_floor=1e-4, max_vertices=2_000_000) -> Mesh:
    """Halve the cells around each point `rounds` times.

    Each round marks every cell whose closure contains a point, splits all
    six edges of the marked cells and closes the mesh by longest-edge
    bisection of the neighbours.
    """
    if rounds < 0:
        raise MeshError(f"rounds must be >= 0, got {rounds}")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if np.any(np.abs(points) >= mesh.half_extent):
        raise MeshError("refinement points must lie strictly inside the domain")

    for r in range(rounds):
        marked = np.unique(np.concatenate([cells_containing(mesh, p) for p in points]))
        seeds = mesh.edge_keys[marked].ravel()
        refined = _bisect(mesh, seeds, max_vertices)
        if refined.min_diameter < h_min_floor:
            raise MeshError(
                f"local round {r + 1} would create a cell of diameter {refined.min_diameter:.3e} "
                f"below h_min_floor={h_min_floor}"
            )
        mesh = refined
        log.debug("local round %d: %d vertices, %d cells, h_min=%.3e", r + 1, mesh.n_vertices, mesh.n_cells, mesh.min_diameter)
    return mesh


def refine_uniform(mesh: Mesh, rounds: int, max_vertices=2_000_000) -> Mesh:
    """Regular 1:8 subdivision of every cell, `rounds` times. The inner
    octahedron is split along its shortest diagonal."""
    if rounds < 0:
        raise MeshError(f"rounds must be >= 0, got {rounds}")

    for r in range(rounds):
        unique_keys = np.unique(mesh.edge_keys)
        n = mesh.n_vertices
        if n + unique_keys.size > max_vertices:
            raise MeshError(
                f"uniform round {r + 1} needs {n + unique_keys.size} vertices, budget is {max_vertices}"
            )
        a, b = decode_key(unique_keys)
        vertices = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[a] + mesh.vertices[b])])
        mids = n + np.searchsorted(unique_keys, mesh.edge_keys)

        slots = np.concatenate([mesh.tetrahedra, mids], axis=1)
        diag = vertices[slots[:, OCTAHEDRON_DIAGONALS[:, 0]]] - vertices[slots[:, OCTAHEDRON_DIAGONALS[:, 1]]]
        length2 = (diag * diag).sum(axis=2)
        choice = np.lexsort(_mirror_invariants(diag)[::-1] + (length2,), axis=-1)[:, 0]

        rows = np.arange(mesh.n_cells)[:, None]
        children = np.empty((mesh.n_cells, 8, 4), dtype=np.int64)
        children[:, :4] = slots[rows[:, :, None], CORNER_CHILDREN[None]]
        for p, pattern in OCTAHEDRON_CHILDREN.items():
            sel = np.flatnonzero(choice == p)
            children[sel, 4:] = slots[sel[:, None, None], pattern[None]]
        tets = _orient(vertices, children.reshape(-1, 4))
        levels = np.repeat(mesh.refinement_level_per_cell + 1, 8)

        step = Refinement(n_coarse=n, parent_edges=np.stack([a, b], axis=1), kind="uniform")
        mesh = Mesh(
            vertices=vertices,
            tetrahedra=tets,
            half_extent=mesh.half_extent,
            refinement_level_per_cell=levels,
            history=mesh.history + (step,),
        )
        log.debug("uniform round %d: %d vertices, %d cells", r + 1, mesh.n_vertices, mesh.n_cells)
    return mesh


def build_mesh(config: MeshConfig) -> Mesh:
    mesh = build_box_mesh(config)
    mesh = refine_near_points(
        mesh,
        config.nucleus_positions,
        config.local_refine_rounds,
        h_min_floor=config.h_min_floor,
        max_vertices=config.max_vertices,
    )
    mesh = refine_uniform(mesh, config.global_refine_rounds, max_vertices=config.max_vertices)
    log.info(
        f"Built mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
        f"h_min={mesh.min_diameter:.3e}, hash {mesh.hash[:12]}"
    )
    return mesh


def mirror_permutation(mesh: Mesh, decimals=9):
    """Permutation p with vertices[p[i]] == -vertices[i], or None if the
    vertex set is not symmetric under x -> -x."""
    scale = 10.0 ** decimals / mesh.half_extent
    keys = np.round(mesh.vertices * scale).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(keys.tolist())}
    perm = np.empty(mesh.n_vertices, dtype=np.int64)
    for i, k in enumerate((-keys).tolist()):
        j = lookup.get(tuple(k))
        if j is None:
            return None
        perm[i] = j
    return perm


def is_nested(coarse: Mesh, fine: Mesh):
    """True if `fine` was produced from `coarse` by refinement steps."""
    depth = len(coarse.history)
    if len(fine.history) < depth or fine.n_vertices < coarse.n_vertices:
        return False
    for a, b in zip(coarse.history, fine.history[:depth]):
        if a.n_coarse != b.n_coarse or not np.array_equal(a.parent_edges, b.parent_edges):
            return False
    return np.array_equal(fine.vertices[: coarse.n_vertices], coarse.vertices)
