"""Hartree potential: -Laplace V = 4 pi rho on the box with free-space Dirichlet data.

Charges enter as load vectors q_m = int eta_m rho (for a nodal density
q = S rho). Boundary data come from a multipole expansion of q about a fixed
centre, which keeps the map q -> V linear. `CoulombOperator` additionally
provides the exactly symmetric variant of that map used by the variational
code paths (SCF, energy, Hessian).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from h2xlda.exceptions import SolverError
from h2xlda.features import HAS_NUMBA, HAS_PARALLEL_NUMBA
from h2xlda.linsolve import SolverConfig, build_preconditioner, cg_solve
from h2xlda.mesh import Mesh
from h2xlda.operators import NodalField, assemble_mass, assemble_stiffness

log = logging.getLogger(__name__)

__all__ = ["ChargeSummary", "charge_summary", "boundary_values", "solve_hartree", "CoulombOperator"]

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class ChargeSummary:
    total_charge: float
    centroid: tuple

    def __post_init__(self):
        if self.total_charge < -1e-12:
            raise ValueError(f"negative total charge {self.total_charge}")
        if self.total_charge > 2.0 + 1e-6:
            raise ValueError(f"total charge {self.total_charge} exceeds the two electrons")


def charge_summary(mesh: Mesh, charges: np.ndarray) -> ChargeSummary:
    """Total charge and centroid of a vertex charge vector q."""
    return ChargeSummary(float(charges.sum()), _centroid(mesh, charges))


def _centroid(mesh, charges):
    Q = float(charges.sum())
    if Q == 0.0:
        return (0.0, 0.0, 0.0)
    return tuple(float(c) for c in (charges @ mesh.vertices) / Q)


if HAS_NUMBA:
    from numba import njit, prange

    @njit(parallel=HAS_PARALLEL_NUMBA, cache=True)
    def _pairwise_potential(targets, sources, charges):
        out = np.zeros(targets.shape[0])
        for b in prange(targets.shape[0]):
            acc = 0.0
            for m in range(sources.shape[0]):
                dx = targets[b, 0] - sources[m, 0]
                dy = targets[b, 1] - sources[m, 1]
                dz = targets[b, 2] - sources[m, 2]
                acc += charges[m] / np.sqrt(dx * dx + dy * dy + dz * dz)
            out[b] = acc
        return out

else:

    def _pairwise_potential(targets, sources, charges, chunk=256):
        out = np.empty(len(targets))
        for start in range(0, len(targets), chunk):
            d = np.linalg.norm(targets[start : start + chunk, None, :] - sources[None], axis=2)
            out[start : start + chunk] = (charges[None] / d).sum(axis=1)
        return out


def multipole_kernels(points: np.ndarray, center, order: int):
    """Boundary kernels kappa_k(x_b) of the multipole terms up to `order`."""
    d = points - np.asarray(center, dtype=np.float64)
    r = np.linalg.norm(d, axis=1)
    kernels = [1.0 / r]
    if order >= 1:
        kernels += [d[:, k] / r**3 for k in range(3)]
    return kernels


def multipole_moments(vertices: np.ndarray, center, order: int):
    """Nodal vectors a_k with moment_k = a_k . q."""
    d = vertices - np.asarray(center, dtype=np.float64)
    moments = [np.ones(len(vertices))]
    if order >= 1:
        moments += [d[:, k].copy() for k in range(3)]
    return moments


def boundary_values_from_charges(mesh: Mesh, charges, order=1, center=None):
    """Free-space potential of vertex charges q at the boundary vertices.

    order 0/1 evaluate the multipole expansion about `center` (charge
    centroid when None); order "direct" sums all pairs.
    """
    xb = mesh.vertices[mesh.boundary_vertices]
    charges = np.asarray(charges, dtype=np.float64)
    if not np.any(charges):
        return np.zeros(len(xb))
    if order == "direct":
        inside = np.flatnonzero(charges)
        return _pairwise_potential(xb, mesh.vertices[inside], charges[inside])
    if order not in (0, 1):
        raise ValueError(f"boundary order must be 0, 1 or 'direct', got {order!r}")

    if center is None:
        center = _centroid(mesh, charges)
    center = np.asarray(center, dtype=np.float64)
    if np.any(np.abs(center) >= mesh.half_extent * (1 - 1e-12)):
        raise ValueError(f"expansion centre {tuple(center)} lies on the domain boundary")

    g = np.zeros(len(xb))
    for kernel, moment in zip(multipole_kernels(xb, center, order), multipole_moments(mesh.vertices, center, order)):
        g += kernel * float(moment @ charges)
    return g


def boundary_values(mesh: Mesh, rho: NodalField, order=1, center=None, mass=None):
    """Boundary data for a nodal density, from the lumped charges q = S rho."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < -1e-12):
        raise ValueError("density has negative nodal values")
    S = assemble_mass(mesh) if mass is None else mass
    return boundary_values_from_charges(mesh, S @ rho, order=order, center=center)


class CoulombOperator:
    """Poisson solves on one mesh with the Laplacian factorisation shared
    between calls.

    `potential(q)` is the physical potential with multipole Dirichlet data.
    `variational_potential(q)` is its symmetrised counterpart
    G0 q + 1/2 sum_k [h_k (a_k.q) + a_k (h_k.q)], with G0 the homogeneous
    Dirichlet solve and h_k the harmonic extensions of the boundary
    kernels. Both agree on the Hartree energy 1/2 q.V.
    """

    def __init__(self, mesh: Mesh, cfg: Optional[SolverConfig] = None, order=1, center=(0.0, 0.0, 0.0), stiffness=None):
        if order not in (0, 1):
            raise ValueError(f"variational Coulomb operator needs order 0 or 1, got {order!r}")
        self.mesh = mesh
        self.cfg = cfg or SolverConfig.from_settings()
        self.order = order
        self.center = np.asarray(center, dtype=np.float64)
        T = assemble_stiffness(mesh) if stiffness is None else stiffness
        self.laplacian = T * 2.0
        self.boundary = mesh.boundary_vertices
        self.system = self.laplacian.constrained(self.boundary)
        self.preconditioner = build_preconditioner(self.system, self.cfg, hierarchy=mesh)
        self.last_report = None
        self._extensions = None
        self.moments = multipole_moments(mesh.vertices, self.center, order)

    def dirichlet_solve(self, charges, g=None, rtol=None):
        rhs = FOUR_PI * np.asarray(charges, dtype=np.float64)
        if g is not None and np.any(g):
            lift = np.zeros(self.mesh.n_vertices)
            lift[self.boundary] = g
            rhs = rhs - self.laplacian @ lift
            rhs[self.boundary] = g
        else:
            rhs = rhs.copy()
            rhs[self.boundary] = 0.0
        cfg = self.cfg if rtol is None else self.cfg.with_rtol(rtol)
        V, report = cg_solve(self.system, rhs, None, cfg, M=self.preconditioner)
        self.last_report = report
        if not report.converged:
            raise SolverError(f"Poisson solve did not reach rtol={cfg.rtol} (residual {report.residual:.3e})", report)
        return V

    def potential(self, charges, rtol=None):
        g = boundary_values_from_charges(self.mesh, charges, order=self.order, center=self.center)
        return self.dirichlet_solve(charges, g, rtol=rtol)

    @property
    def extensions(self):
        if self._extensions is None:
            xb = self.mesh.vertices[self.boundary]
            zero = np.zeros(self.mesh.n_vertices)
            self._extensions = [
                self.dirichlet_solve(zero, kernel, rtol=min(self.cfg.rtol, 1e-12))
                for kernel in multipole_kernels(xb, self.center, self.order)
            ]
        return self._extensions

    def _boundary_part(self, charges):
        part = np.zeros(self.mesh.n_vertices)
        for h, a in zip(self.extensions, self.moments):
            part += 0.5 * (h * float(a @ charges) + a * float(h @ charges))
        return part

    def variational_potential(self, charges, rtol=None):
        charges = np.asarray(charges, dtype=np.float64)
        return self.dirichlet_solve(charges, None, rtol=rtol) + self._boundary_part(charges)

    def hartree_energy(self, charges, V):
        """1/2 q.V for V = variational_potential(q).

        The interior part is evaluated in the stationary form
        q.V0 - V0.K V0 / (8 pi), whose error is quadratic in the solver error.
        """
        V0 = V - self._boundary_part(charges)
        interior = float(charges @ V0) - float(V0 @ (self.laplacian @ V0)) / (2 * FOUR_PI)
        boundary = sum(0.5 * float(h @ charges) * float(a @ charges) for h, a in zip(self.extensions, self.moments))
        return interior + boundary


def solve_hartree(mesh: Mesh, rho: NodalField, cfg: Optional[SolverConfig] = None, order=1, center=(0.0, 0.0, 0.0), coulomb: Optional[CoulombOperator] = None) -> NodalField:
    """V_ee for a nodal density rho (Dirichlet data from a multipole expansion or the direct sum)."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (mesh.n_vertices,):
        raise ValueError(f"rho has shape {rho.shape}, expected ({mesh.n_vertices},)")
    if np.any(rho < -1e-12):
        raise ValueError("density has negative nodal values")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density is not finite")

    if coulomb is None:
        coulomb = CoulombOperator(mesh, cfg, order=order if order in (0, 1) else 1, center=center)
    charges = assemble_mass(mesh) @ rho
    if not np.any(charges):
        return np.zeros(mesh.n_vertices)
    g = boundary_values_from_charges(mesh, charges, order=order, center=center)
    V = coulomb.dirichlet_solve(charges, g)
    if V.min() < -1e-8:
        log.warning("Hartree potential has negative nodal value %.3e", V.min())
    return V
