"""Parameter sweeps, branch tracking and the (alpha, R) phase diagram.

A sweep walks a sorted grid of one parameter with the other held fixed.
Every init kind is followed as its own chain: a grid point is warm started
from the previous point of the chain when that point landed on the branch
the init aims for, and from the cold Gaussian guess otherwise. Branch labels
come from the converged state's metrics, never from the init used.

`Sweeper` does not stop on a bad grid point: it records the error, keeps
the point as `failed` and moves on.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from h2xlda.defaults import defaults
from h2xlda.exceptions import H2XLDAError
from h2xlda.hessian import HessianConfig, HessianReport, smallest_eigenpairs
from h2xlda.mesh import MeshConfig, build_mesh
from h2xlda.operators import assemble_mass, weighted_mass_action
from h2xlda.scf import OrbitalState, SCFConfig, XLDASystem, build_system, scf_solve, total_energy, transfer_state

log = logging.getLogger(__name__)

__all__ = [
    "BranchPoint",
    "PhaseDiagram",
    "Sweeper",
    "branch_metrics",
    "classify_branch",
    "state_distance",
    "sweep",
    "detect_bifurcation",
    "phase_diagram",
]

BRANCH_COLUMNS = [
    "alpha",
    "R",
    "bond_length",
    "branch",
    "E_total",
    "E_kinetic",
    "E_nuclear",
    "E_hartree",
    "E_exchange",
    "s",
    "d",
    "n_negative_eigs",
    "converged",
]

FIXED_KINDS = ("alpha", "R", "bond_length")
GRID_UNITS = ("bond_length", "R")


@dataclass
class BranchPoint:
    alpha: float
    R: float
    branch: str
    init: str
    parameter: float
    energy: dict = field(default_factory=dict)
    s: float = float("nan")
    d: float = float("nan")
    dipole: float = float("nan")
    midpoint_ratio: float = float("nan")
    hessian: Optional[HessianReport] = None
    converged: bool = False
    iterations: int = 0
    residual: float = float("nan")
    error: Optional[str] = None
    state: Optional[OrbitalState] = field(default=None, repr=False, compare=False)

    @property
    def bond_length(self):
        return 2.0 * self.R

    @property
    def E_total(self):
        return self.energy.get("total", float("nan"))

    @property
    def nuclear_repulsion(self):
        return 1.0 / (2.0 * self.R)

    @property
    def molecular_energy(self):
        """Electronic functional plus the nucleus-nucleus repulsion 1/(2R)."""
        return self.E_total + self.nuclear_repulsion

    @property
    def smallest_eigenvalue(self):
        if self.hessian is None or not self.hessian.converged:
            return None
        return self.hessian.smallest

    def as_row(self):
        return {
            "alpha": self.alpha,
            "R": self.R,
            "bond_length": self.bond_length,
            "branch": self.branch,
            "E_total": self.E_total,
            "E_kinetic": self.energy.get("kinetic", float("nan")),
            "E_nuclear": self.energy.get("nuclear", float("nan")),
            "E_hartree": self.energy.get("hartree", float("nan")),
            "E_exchange": self.energy.get("exchange", float("nan")),
            "s": self.s,
            "d": self.d,
            "n_negative_eigs": self.hessian.n_negative if self.hessian is not None else None,
            "converged": self.converged,
        }

    def as_dict(self):
        return {
            **self.as_row(),
            "init": self.init,
            "parameter": self.parameter,
            "dipole": self.dipole,
            "midpoint_ratio": self.midpoint_ratio,
            "nuclear_repulsion": self.nuclear_repulsion,
            "molecular_energy": self.molecular_energy,
            "iterations": self.iterations,
            "residual": self.residual,
            "hessian": self.hessian.as_dict() if self.hessian is not None else None,
            "error": self.error,
        }


@dataclass
class PhaseDiagram:
    """Sampled branches plus, per alpha, the first symmetry-breaking grid value
    (None when it lies outside the sampled range)."""

    alpha_grid: list
    R_grid: list
    grid_units: str = "bond_length"
    samples: list = field(default_factory=list)
    boundary: list = field(default_factory=list)

    @property
    def polyline(self):
        return [(b["alpha"], b["critical"]) for b in self.boundary if b["critical"] is not None]

    def as_rows(self):
        return [
            {
                "alpha": b["alpha"],
                f"critical_{self.grid_units}": b["critical"],
                "status": "open" if b["critical"] is None else "closed",
                "detector": b["detector"],
            }
            for b in self.boundary
        ]

    def as_dict(self):
        return {
            "alpha_grid": list(self.alpha_grid),
            "R_grid": list(self.R_grid),
            "grid_units": self.grid_units,
            "boundary": self.boundary,
            "polyline": [list(p) for p in self.polyline],
            "open": [b["alpha"] for b in self.boundary if b["critical"] is None],
        }


def _first_moment(system: XLDASystem, c):
    return float(system.mesh.vertices[:, 0] @ weighted_mass_action(system.mesh, c, c))


def branch_metrics(system: XLDASystem, state: OrbitalState):
    """s = min over signs of ||psi+ -+ psi-||_S, d = <x1>+ - <x1>-, the total
    dipole <x1>+ + <x1>- and the bond-midpoint density ratio."""
    S = system.S
    c_plus, c_minus = state.coefficients
    s = math.sqrt(max(min(float((c_plus - c_minus) @ (S @ (c_plus - c_minus))), float((c_plus + c_minus) @ (S @ (c_plus + c_minus)))), 0.0))
    x_plus = _first_moment(system, c_plus)
    x_minus = _first_moment(system, c_minus)

    nuclei = system.spec.positions
    points = np.vstack([nuclei.mean(axis=0)[None], nuclei])
    density = system.mesh.interpolate_at(c_plus, points) ** 2 + system.mesh.interpolate_at(c_minus, points) ** 2
    at_nuclei = float(density[1:].mean())
    ratio = float(density[0]) / at_nuclei if at_nuclei > 0 else float("nan")
    return {"s": s, "d": x_plus - x_minus, "dipole": x_plus + x_minus, "midpoint_ratio": ratio}


def classify_branch(metrics, s_tol=None, d_tol=None):
    """Both electrons on one nucleus (|dipole| > d_tol) is ionic, ionic_left
    when they sit at +R e1. Otherwise s < s_tol is delocalized and spins on
    opposite nuclei (|d| > d_tol) antiferro."""
    s_tol = float(defaults("sweep.s_tol")) if s_tol is None else s_tol
    d_tol = float(defaults("sweep.d_tol")) if d_tol is None else d_tol
    if abs(metrics["dipole"]) > d_tol:
        return "ionic_left" if metrics["dipole"] > 0 else "ionic_right"
    if metrics["s"] < s_tol:
        return "delocalized"
    if abs(metrics["d"]) > d_tol:
        return "antiferro"
    return "unclassified"


def state_distance(S, a: OrbitalState, b: OrbitalState):
    """S-distance between two states, minimised over spin swap and orbital signs."""

    def dist(u, v):
        return min(float((u - v) @ (S @ (u - v))), float((u + v) @ (S @ (u + v))))

    direct = dist(a.c_plus, b.c_plus) + dist(a.c_minus, b.c_minus)
    swapped = dist(a.c_plus, b.c_minus) + dist(a.c_minus, b.c_plus)
    return math.sqrt(max(min(direct, swapped), 0.0))


class Sweeper:
    """Runs sweeps and phase-diagram columns, accumulating errors and summaries."""

    def __init__(self, hessian=None, workers=None, extra_local_rounds=0, grid_units="bond_length"):
        if grid_units not in GRID_UNITS:
            raise ValueError(f"grid_units must be one of {GRID_UNITS}, got {grid_units!r}")
        self.hessian = bool(defaults("sweep.hessian")) if hessian is None else hessian
        self.workers = int(defaults("sweep.workers")) if workers is None else workers
        self.extra_local_rounds = extra_local_rounds
        self.grid_units = grid_units
        self.errors = []
        self.summaries = []
        self.points = []
        self._masses = {}
        self.meshes = {}
        self.last_system = None

    def _parameters(self, fixed, fixed_value, value):
        """(alpha, R) of one grid point."""
        if fixed == "alpha":
            R = value / 2.0 if self.grid_units == "bond_length" else value
            return float(fixed_value), float(R)
        if fixed == "R":
            return float(value), float(fixed_value)
        return float(value), float(fixed_value) / 2.0

    def _system(self, alpha, R, previous: Optional[XLDASystem]):
        if previous is not None and previous.R == R:
            return previous if previous.alpha == alpha else previous.with_alpha(alpha)
        return build_system(R, alpha, extra_local_rounds=self.extra_local_rounds)

    def _mass(self, point: BranchPoint):
        if point.parameter not in self._masses:
            mesh = build_mesh(MeshConfig.from_settings(point.R, extra_local_rounds=self.extra_local_rounds))
            self._masses[point.parameter] = assemble_mass(mesh)
        return self._masses[point.parameter]

    def _solve_point(self, system: XLDASystem, init: str, parameter, initial: Optional[OrbitalState]):
        where = f"alpha={system.alpha} R={system.R} init={init}"
        try:
            state, report = scf_solve(system, SCFConfig.from_settings(init=init), initial=initial)
        except H2XLDAError as e:
            log.error(f"{where}: {e}")
            self.errors.append(f"{where}: {e}")
            return BranchPoint(system.alpha, system.R, "failed", init, float(parameter), error=str(e))

        metrics = branch_metrics(system, state)
        label = classify_branch(metrics)
        if label != init:
            log.info("init %s at alpha=%s R=%s landed on branch %s", init, system.alpha, system.R, label)
        point = BranchPoint(
            alpha=system.alpha,
            R=system.R,
            branch=label,
            init=init,
            parameter=float(parameter),
            energy=total_energy(system, state).as_dict(),
            converged=report.converged,
            iterations=report.iterations,
            residual=float(max(report.residuals)),
            state=state,
            **metrics,
        )
        if not report.converged:
            self.errors.append(f"{where}: SCF did not converge")
        if self.hessian and report.converged:
            try:
                point.hessian = smallest_eigenpairs(system, state, cfg=HessianConfig.from_settings())
            except H2XLDAError as e:
                self.errors.append(f"{where}: Hessian failed: {e}")
        return point

    def _chains(self, fixed, fixed_value, grid, inits):
        """Grid-major walk over all init chains in this process."""
        points = []
        previous_system = None
        last = {init: None for init in inits}
        for value in grid:
            alpha, R = self._parameters(fixed, fixed_value, value)
            system = self._system(alpha, R, previous_system)
            self._masses[float(value)] = system.S
            self.last_system = system
            self.meshes[system.mesh.hash] = {
                "hash": system.mesh.hash,
                "n_vertices": system.mesh.n_vertices,
                "n_cells": system.mesh.n_cells,
                "delta": system.delta,
                "R": system.R,
            }
            for init in inits:
                initial = None
                prior = last[init]
                if prior is not None and prior.branch == init and prior.state is not None:
                    if previous_system.mesh is system.mesh:
                        initial = prior.state
                    else:
                        initial = transfer_state(prior.state, previous_system, system)
                point = self._solve_point(system, init, value, initial)
                last[init] = point
                points.append(point)
            previous_system = system
        return points

    def dedupe(self, points, tol=None):
        """Drop points at the same grid value whose states coincide (first init wins)."""
        tol = float(defaults("sweep.dedupe_tol")) if tol is None else tol
        kept = []
        by_value = {}
        for point in points:
            by_value.setdefault(point.parameter, []).append(point)
        for value, group in by_value.items():
            unique = []
            for point in group:
                duplicate = None
                if point.state is not None:
                    S = self._mass(point)
                    duplicate = next(
                        (u for u in unique if u.state is not None and state_distance(S, u.state, point.state) < tol),
                        None,
                    )
                if duplicate is not None:
                    self.summaries.append(f"{value}: init {point.init} coincides with init {duplicate.init}")
                    continue
                unique.append(point)
            kept.extend(unique)
        return kept

    def sweep(self, fixed, fixed_value, grid, inits=None):
        if fixed not in FIXED_KINDS:
            raise ValueError(f"fixed must be one of {FIXED_KINDS}, got {fixed!r}")
        inits = list(defaults("sweep.inits") if inits is None else inits)
        grid = [float(g) for g in grid]
        if not inits:
            raise ValueError("sweep needs at least one init kind")
        if grid != sorted(grid):
            raise ValueError("sweep grid must be sorted")

        if self.workers > 1 and len(inits) > 1:
            from h2xlda.conf import settings

            tree = settings.as_dict()
            jobs = [(tree, self._options(), fixed, fixed_value, grid, [init]) for init in inits]
            with ProcessPoolExecutor(max_workers=min(self.workers, len(inits))) as pool:
                results = list(pool.map(_run_chain, jobs))
            points = []
            for chain_points, errors, meshes in results:
                points.extend(chain_points)
                self.errors.extend(errors)
                self.meshes.update(meshes)
            order = {init: k for k, init in enumerate(inits)}
            points.sort(key=lambda p: (grid.index(p.parameter), order[p.init]))
        else:
            points = self._chains(fixed, fixed_value, grid, inits)

        points = self.dedupe(points)
        self.points.extend(points)
        self.summaries.append(f"{len(points)} distinct states over {len(grid)} grid values ({fixed}={fixed_value})")
        return points

    def _options(self):
        return {"hessian": self.hessian, "extra_local_rounds": self.extra_local_rounds, "grid_units": self.grid_units}

    def phase_diagram(self, alpha_grid, R_grid, inits=None):
        alpha_grid = [float(a) for a in alpha_grid]
        if alpha_grid != sorted(alpha_grid) or list(R_grid) != sorted(R_grid):
            raise ValueError("phase diagram grids must be sorted")
        inits = list(defaults("phase.inits") if inits is None else inits)
        diagram = PhaseDiagram(alpha_grid=alpha_grid, R_grid=list(R_grid), grid_units=self.grid_units)
        for alpha in alpha_grid:
            self._masses = {}
            column = self.sweep("alpha", alpha, R_grid, inits)
            critical, detector = detect_bifurcation(column, with_detector=True)
            if critical is None:
                log.info("alpha=%s: no symmetry breaking in the sampled range", alpha)
            diagram.samples.extend(column)
            diagram.boundary.append({"alpha": alpha, "critical": critical, "detector": detector})
        return diagram


def _run_chain(job):
    tree, options, fixed, fixed_value, grid, inits = job
    from h2xlda.conf import settings

    settings.configure(tree)
    sweeper = Sweeper(workers=1, **options)
    points = sweeper._chains(fixed, fixed_value, grid, inits)
    return points, sweeper.errors, sweeper.meshes


def sweep(fixed, fixed_value, grid, inits=None, hessian=None, workers=None, grid_units="bond_length", extra_local_rounds=0):
    """Distinct converged (or failed) states along a grid, one chain per init."""
    sweeper = Sweeper(hessian=hessian, workers=workers, grid_units=grid_units, extra_local_rounds=extra_local_rounds)
    return sweeper.sweep(fixed, fixed_value, grid, inits)


def _crossing(p0, p1, g0, g1):
    if g0 == g1:
        return 0.5 * (p0 + p1)
    return p0 + g0 * (p1 - p0) / (g0 - g1)


def detect_bifurcation(branch, tol_energy=None, with_detector=False):
    """Parameter value where the delocalized branch loses stability.

    Primary: linear zero of the smallest constrained Hessian eigenvalue
    between the first two consecutive delocalized points where it goes from
    positive to non-positive. Fallback: the first interval where the
    antiferro energy falls below the delocalized one by more than 10 tol_energy.
    """
    tol_energy = float(defaults("scf.tol_energy")) if tol_energy is None else tol_energy
    delocalized = sorted((p for p in branch if p.branch == "delocalized"), key=lambda p: p.parameter)

    with_eigs = [p for p in delocalized if p.smallest_eigenvalue is not None]
    for a, b in zip(with_eigs, with_eigs[1:]):
        if a.smallest_eigenvalue > 0 >= b.smallest_eigenvalue:
            value = _crossing(a.parameter, b.parameter, a.smallest_eigenvalue, b.smallest_eigenvalue)
            return (value, "hessian") if with_detector else value

    antiferro = {}
    for p in branch:
        if p.branch == "antiferro" and p.converged:
            antiferro[p.parameter] = min(antiferro.get(p.parameter, math.inf), p.E_total)
    threshold = 10.0 * tol_energy
    previous = None
    for p in delocalized:
        gap = p.E_total - antiferro.get(p.parameter, p.E_total)
        if gap > threshold:
            if previous is None:
                value = p.parameter
            else:
                value = _crossing(previous[0], p.parameter, previous[1] - threshold, gap - threshold)
            return (value, "energy") if with_detector else value
        previous = (p.parameter, gap)
    return (None, None) if with_detector else None


def phase_diagram(alpha_grid, R_grid, inits=None, grid_units="bond_length", hessian=None, workers=None):
    """Critical grid value per alpha. Columns run in parallel when workers > 1."""
    hessian = bool(defaults("phase.hessian")) if hessian is None else hessian
    workers = int(defaults("sweep.workers")) if workers is None else workers
    if workers > 1 and len(alpha_grid) > 1:
        from h2xlda.conf import settings

        tree = settings.as_dict()
        alpha_grid = [float(a) for a in alpha_grid]
        jobs = [(tree, alpha, list(R_grid), inits, grid_units, hessian) for alpha in alpha_grid]
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            columns = list(pool.map(_run_column, jobs))
        diagram = PhaseDiagram(alpha_grid=alpha_grid, R_grid=list(R_grid), grid_units=grid_units)
        for column in columns:
            diagram.samples.extend(column.samples)
            diagram.boundary.extend(column.boundary)
        return diagram
    sweeper = Sweeper(hessian=hessian, workers=1, grid_units=grid_units)
    return sweeper.phase_diagram(alpha_grid, R_grid, inits)


def _run_column(job):
    tree, alpha, R_grid, inits, grid_units, hessian = job
    from h2xlda.conf import settings

    settings.configure(tree)
    return Sweeper(hessian=hessian, workers=1, grid_units=grid_units).phase_diagram([alpha], R_grid, inits)
