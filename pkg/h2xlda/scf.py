"""Self-consistent field iteration for the two spin orbitals.

The discrete functional is

    E(c+, c-) = sum_s c_s.T c_s + c_s.M_nuc c_s - alpha s.|c_s|^(8/3)  +  1/2 q.V(q)

with q = sum_s M_{c_s} c_s the exact P1 charge load, s the lumped masses and
V the symmetric Coulomb map. The SCF load, the Euler-Lagrange residual and
the Hessian are exact derivatives of this E.

Each iteration solves the Helmholtz problem (T - eps S) c~ = f per spin,
corrects eps from the raw update and renormalises.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from h2xlda.defaults import defaults
from h2xlda.exceptions import ConvergenceError, StateError
from h2xlda.hartree import CoulombOperator
from h2xlda.linsolve import SolverConfig, build_preconditioner, cg_solve
from h2xlda.mesh import Mesh, MeshConfig, build_mesh
from h2xlda.operators import (
    NuclearPotentialSpec,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    default_delta,
    dual_norm,
    lumped_mass,
    nuclear_field,
    transfer_field,
    weighted_mass_action,
)

log = logging.getLogger(__name__)

__all__ = [
    "OrbitalState",
    "SCFConfig",
    "SCFReport",
    "EnergyBreakdown",
    "XLDASystem",
    "build_system",
    "initial_guess",
    "effective_rhs",
    "helmholtz_update",
    "energy_correction",
    "total_energy",
    "scf_solve",
    "linear_ground_state",
    "transfer_state",
]

INIT_KINDS = ("delocalized", "antiferro", "ionic_left", "ionic_right", "custom")
ENERGY_UPDATES = ("greens_correction", "rayleigh")


@dataclass
class OrbitalState:
    """Coefficients of psi+ and psi-, their orbital energies, and the parameters they belong to.

    Orbital energies are the eigenvalues eps of (T + V_eff) c = eps S c,
    negative for bound states (the binding energy is -eps).
    """

    c_plus: np.ndarray
    c_minus: np.ndarray
    eps_plus: float
    eps_minus: float
    alpha: float
    R: float

    @property
    def coefficients(self):
        return (self.c_plus, self.c_minus)

    @property
    def eps(self):
        return (self.eps_plus, self.eps_minus)

    @property
    def density(self):
        """Nodal total density psi+^2 + psi-^2."""
        return self.c_plus**2 + self.c_minus**2

    def swapped(self):
        return replace(self, c_plus=self.c_minus.copy(), c_minus=self.c_plus.copy(), eps_plus=self.eps_minus, eps_minus=self.eps_plus)

    def mirrored(self, perm):
        """Reflection x -> -x, given the mirror vertex permutation of the mesh."""
        return replace(self, c_plus=self.c_plus[perm].copy(), c_minus=self.c_minus[perm].copy())

    def copy(self):
        return replace(self, c_plus=self.c_plus.copy(), c_minus=self.c_minus.copy())


@dataclass(frozen=True)
class SCFConfig:
    tol_energy: float = 1e-6
    tol_residual: Optional[float] = None
    max_iterations: int = 200
    beta: float = 0.5
    energy_update: str = "greens_correction"
    init: str = "delocalized"
    gaussian_zeta: float = 0.6
    eps_floor: float = 0.01
    restricted: bool = False
    oscillation_limit: int = 10

    def __post_init__(self):
        if not self.tol_energy > 0:
            raise ValueError(f"tol_energy must be positive, got {self.tol_energy}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.energy_update not in ENERGY_UPDATES:
            raise ValueError(f"unknown energy_update {self.energy_update!r}")
        if self.init not in INIT_KINDS:
            raise ValueError(f"unknown init kind {self.init!r}")
        if not self.gaussian_zeta > 0:
            raise ValueError(f"gaussian_zeta must be positive, got {self.gaussian_zeta}")

    @property
    def residual_tol(self):
        return 10 * self.tol_energy if self.tol_residual is None else self.tol_residual

    @classmethod
    def from_settings(cls, **overrides):
        values = dict(
            tol_energy=float(defaults("scf.tol_energy")),
            tol_residual=defaults("scf.tol_residual"),
            max_iterations=int(defaults("scf.max_iterations")),
            beta=float(defaults("scf.beta")),
            energy_update=defaults("scf.energy_update"),
            init=defaults("scf.init"),
            gaussian_zeta=float(defaults("scf.gaussian_zeta")),
            eps_floor=float(defaults("scf.eps_floor")),
            restricted=bool(defaults("scf.restricted")),
            oscillation_limit=int(defaults("scf.oscillation_limit")),
        )
        values.update(overrides)
        return cls(**values)

    def as_dict(self):
        return asdict(self)


@dataclass
class SCFReport:
    iterations: int = 0
    energy_history: list = field(default_factory=list)
    residuals: tuple = (float("nan"), float("nan"))
    clamp_events: list = field(default_factory=list)
    converged: bool = False
    oscillating: bool = False
    suggestion: Optional[str] = None
    linear_iterations: int = 0

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "energy_history": [float(e) for e in self.energy_history],
            "residuals": [float(r) for r in self.residuals],
            "clamp_events": list(self.clamp_events),
            "converged": self.converged,
            "oscillating": self.oscillating,
            "suggestion": self.suggestion,
            "linear_iterations": self.linear_iterations,
        }


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    nuclear: float
    hartree: float
    exchange: float

    @property
    def total(self):
        return self.kinetic + self.nuclear + self.hartree + self.exchange

    def as_dict(self):
        return {**asdict(self), "total": self.total}


class XLDASystem:
    """The discretised functional on one mesh: operators, nuclear potential,
    Coulomb map and exchange strength."""

    def __init__(
        self,
        mesh: Mesh,
        spec: NuclearPotentialSpec,
        alpha: float,
        solver: Optional[SolverConfig] = None,
        hartree_order: int = 1,
        hartree_center=(0.0, 0.0, 0.0),
        include_hartree: bool = True,
    ):
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        self.mesh = mesh
        self.spec = spec
        self.alpha = float(alpha)
        self.solver = solver or SolverConfig.from_settings()
        self.include_hartree = include_hartree
        self.T = assemble_stiffness(mesh)
        self.S = assemble_mass(mesh)
        self.lumped = lumped_mass(mesh)
        self.v_nuc = nuclear_field(mesh, spec)
        self.M_nuc = assemble_weighted_mass(mesh, self.v_nuc)
        self.free = mesh.interior_vertices
        self.boundary = mesh.boundary_vertices
        self.coulomb = CoulombOperator(mesh, self.solver, order=hartree_order, center=hartree_center, stiffness=self.T)
        self._helmholtz_cache = None

    def __repr__(self):
        return f"<XLDASystem R={self.R} alpha={self.alpha} delta={self.delta:.2e} {self.mesh!r}>"

    @property
    def R(self):
        return self.spec.R

    @property
    def delta(self):
        return self.spec.delta

    def with_alpha(self, alpha):
        """Same mesh and operators, different exchange strength."""
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        other = copy.copy(self)
        other.alpha = float(alpha)
        return other

    def charges(self, state: OrbitalState):
        """q_m = int eta_m (psi+^2 + psi-^2)."""
        return weighted_mass_action(self.mesh, state.c_plus, state.c_plus) + weighted_mass_action(
            self.mesh, state.c_minus, state.c_minus
        )

    def hartree_potential(self, charges, rtol=None):
        if not self.include_hartree:
            return np.zeros(self.mesh.n_vertices)
        return self.coulomb.variational_potential(charges, rtol=rtol)

    def coulomb_apply(self, charges, rtol=None):
        """The symmetric Coulomb map applied to a charge load (zero when Hartree is switched off)."""
        return self.hartree_potential(charges, rtol=rtol)

    def normalize(self, c):
        c = np.array(c, dtype=np.float64)
        c[self.boundary] = 0.0
        norm2 = float(c @ (self.S @ c))
        if not norm2 > 1e-300:
            raise StateError("cannot normalise a zero orbital")
        return c / np.sqrt(norm2)

    def helmholtz_preconditioner(self, eps):
        cached = self._helmholtz_cache
        if cached is not None and abs(eps - cached[0]) <= 0.2 * abs(cached[0]):
            return cached[1]
        A = (self.T - self.S * eps).constrained(self.boundary)
        M = build_preconditioner(A, self.solver, hierarchy=self.mesh)
        self._helmholtz_cache = (eps, M)
        return M


def build_system(R: float, alpha: float, mesh: Optional[Mesh] = None, extra_local_rounds=0, include_hartree=True, centers=None):
    """XLDASystem for half bond length R using the active run settings."""
    if mesh is None:
        mesh = build_mesh(MeshConfig.from_settings(R, extra_local_rounds=extra_local_rounds, centers=centers))
    positions = centers if centers is not None else ((R, 0.0, 0.0), (-R, 0.0, 0.0))
    delta = defaults("potential.delta")
    if delta is None:
        delta = default_delta(mesh, positions)
    spec = NuclearPotentialSpec(R=R, delta=float(delta), centers=centers)
    return XLDASystem(
        mesh,
        spec,
        alpha,
        solver=SolverConfig.from_settings(),
        hartree_order=int(defaults("hartree.boundary_order")),
        hartree_center=tuple(defaults("hartree.center")),
        include_hartree=include_hartree,
    )


def _gaussian(mesh: Mesh, center, zeta):
    d = mesh.vertices - np.asarray(center, dtype=np.float64)
    return np.exp(-zeta * (d * d).sum(axis=1))


def initial_guess(system: XLDASystem, kind: str, zeta: float = 0.6, custom=None) -> OrbitalState:
    """Normalised Gaussian starting orbitals g+- ~ exp(-zeta |x -+ R e1|^2).

    delocalized: both ~ g+ + g-; antiferro: psi+ ~ g+, psi- ~ g-;
    ionic_left: both ~ g+; ionic_right: both ~ g-; custom: `custom` = (c+, c-).
    """
    if not zeta > 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    mesh, R = system.mesh, system.R
    g_plus = _gaussian(mesh, (R, 0.0, 0.0), zeta)
    g_minus = _gaussian(mesh, (-R, 0.0, 0.0), zeta)

    if kind == "delocalized":
        c_plus = c_minus = g_plus + g_minus
    elif kind == "antiferro":
        c_plus, c_minus = g_plus, g_minus
    elif kind == "ionic_left":
        c_plus = c_minus = g_plus
    elif kind == "ionic_right":
        c_plus = c_minus = g_minus
    elif kind == "custom":
        if custom is None:
            raise ValueError("custom init needs explicit (c_plus, c_minus) fields")
        c_plus, c_minus = (np.asarray(c, dtype=np.float64) for c in custom)
    else:
        raise ValueError(f"unknown init kind {kind!r}")

    c_plus = system.normalize(c_plus)
    c_minus = system.normalize(c_minus)
    state = OrbitalState(c_plus, c_minus, 0.0, 0.0, system.alpha, R)

    v_ee = system.hartree_potential(system.charges(state))
    eps = []
    for c in state.coefficients:
        quotient = float(c @ (system.T @ c) + c @ (system.M_nuc @ c) + c @ weighted_mass_action(system.mesh, v_ee, c))
        eps.append(min(quotient, -_eps_floor()))
    state.eps_plus, state.eps_minus = eps
    return state


def _eps_floor():
    return float(defaults("scf.eps_floor"))


def _exchange_load(system: XLDASystem, c):
    return (4.0 / 3.0) * system.alpha * system.lumped * np.abs(c) ** (2.0 / 3.0) * c


def effective_rhs(system: XLDASystem, state: OrbitalState, v_ee):
    """Loads f_s = -[V_nuc + V_ee - 4/3 alpha |psi_s|^(2/3)] psi_s, so that (T - eps S) c = f."""
    out = []
    for c in state.coefficients:
        f = -(system.M_nuc @ c) - weighted_mass_action(system.mesh, v_ee, c) + _exchange_load(system, c)
        if not np.all(np.isfinite(f)):
            raise StateError("effective load is not finite")
        f[system.boundary] = 0.0
        out.append(f)
    return tuple(out)


def helmholtz_update(system: XLDASystem, eps: float, f, x0=None, cfg: Optional[SolverConfig] = None, eps_floor=None):
    """Raw update c~ solving (T - eps S) c~ = f with zero boundary values.

    Returns (c~, SolveReport, clamped); eps above -eps_floor is clamped first.
    """
    eps_floor = _eps_floor() if eps_floor is None else eps_floor
    clamped = eps > -eps_floor
    if clamped:
        log.info("clamping orbital energy %.6f to %.6f for the Helmholtz solve", eps, -eps_floor)
        eps = -eps_floor
    cfg = cfg or system.solver
    A = (system.T - system.S * eps).constrained(system.boundary)
    M = system.helmholtz_preconditioner(eps) if cfg.preconditioner == "multigrid" else None
    f = np.array(f, dtype=np.float64)
    f[system.boundary] = 0.0
    if x0 is not None:
        x0 = np.array(x0, dtype=np.float64)
        curvature = float(x0 @ (A @ x0))
        x0 = x0 * (float(x0 @ f) / curvature) if curvature > 0 else None
    c_tilde, report = cg_solve(A, f, x0, cfg, M=M)
    return c_tilde, report, clamped


def energy_correction(phi, phi_tilde, f, S) -> float:
    """First-order orbital-energy correction from the raw Helmholtz output.

    With (T - eps S) phi~ = f: d_eps = (<f, phi> - <f, phi~>) / <phi~, phi~>_S.
    The numerator vanishes at a fixed point phi~ = phi.
    """
    denominator = float(phi_tilde @ (S @ phi_tilde))
    if denominator < 1e-14:
        raise StateError(f"degenerate Helmholtz update (<phi~, phi~>_S = {denominator:.3e})")
    return (float(f @ phi) - float(f @ phi_tilde)) / denominator


def rayleigh_energy(system: XLDASystem, c, v_ee) -> float:
    """eps = c.(T + V_eff) c / c.S c for a single orbital in the frozen Hartree potential."""
    kinetic = float(c @ (system.T @ c))
    potential = float(c @ (system.M_nuc @ c) + c @ weighted_mass_action(system.mesh, v_ee, c))
    exchange = float(c @ _exchange_load(system, c))
    return (kinetic + potential - exchange) / float(c @ (system.S @ c))


def total_energy(system: XLDASystem, state: OrbitalState, v_ee=None, rtol=None) -> EnergyBreakdown:
    """Kinetic, nuclear, Hartree and exchange terms of the functional.

    The Hartree term is 1/2 q.V_ee, evaluated in stationary form by the
    Coulomb operator that produced V_ee.
    """
    c_plus, c_minus = state.coefficients
    charges = system.charges(state)
    if v_ee is None:
        v_ee = system.hartree_potential(charges, rtol=rtol)
    kinetic = float(c_plus @ (system.T @ c_plus)) + float(c_minus @ (system.T @ c_minus))
    nuclear = float(c_plus @ (system.M_nuc @ c_plus)) + float(c_minus @ (system.M_nuc @ c_minus))
    hartree = system.coulomb.hartree_energy(charges, v_ee) if system.include_hartree else 0.0
    exchange = -system.alpha * (
        float(system.lumped @ np.abs(c_plus) ** (8.0 / 3.0)) + float(system.lumped @ np.abs(c_minus) ** (8.0 / 3.0))
    )
    return EnergyBreakdown(kinetic=kinetic, nuclear=nuclear, hartree=hartree, exchange=exchange)


def euler_lagrange_residuals(system: XLDASystem, state: OrbitalState, v_ee):
    """Dual norms of (T - eps_s S) c_s - f_s over the interior vertices."""
    out = []
    for c, eps, f in zip(state.coefficients, state.eps, effective_rhs(system, state, v_ee)):
        r = system.T @ c - eps * (system.S @ c) - f
        out.append(dual_norm(r, system.lumped, system.free))
    return tuple(out)


def energy_gradient(system: XLDASystem, state: OrbitalState, v_ee):
    """dE/dc_s = 2 (T c_s - f_s), boundary entries zeroed."""
    out = []
    for c, f in zip(state.coefficients, effective_rhs(system, state, v_ee)):
        g = 2.0 * (system.T @ c - f)
        g[system.boundary] = 0.0
        out.append(g)
    return tuple(out)


def _sign_align(c_new, c_old, S):
    return -c_new if float(c_new @ (S @ c_old)) < 0 else c_new


def _orbital_step(system, cfg, c, eps, f, iteration, spin, report):
    c_tilde, solve, clamped = helmholtz_update(system, eps, f, x0=c, eps_floor=cfg.eps_floor)
    report.linear_iterations += solve.iterations
    if clamped:
        report.clamp_events.append({"iteration": iteration, "spin": spin, "eps": float(eps)})
        eps = -cfg.eps_floor
    if cfg.energy_update == "greens_correction":
        eps = eps + energy_correction(c, c_tilde, f, system.S)
    return _sign_align(system.normalize(c_tilde), c, system.S), eps


def scf_solve(system: XLDASystem, cfg: Optional[SCFConfig] = None, initial: Optional[OrbitalState] = None, custom=None):
    """Run the SCF loop. Returns (OrbitalState, SCFReport).

    Stops when both the energy change and the Euler-Lagrange residuals are
    below tolerance. Density mixing rho <- beta rho_new + (1 - beta) rho_old
    is applied to the Hartree potential, which is linear in the density.
    Out of iterations, the iterate with the smallest residual is returned
    with converged=False.
    """
    cfg = cfg or SCFConfig.from_settings()
    state = initial.copy() if initial is not None else initial_guess(system, cfg.init, cfg.gaussian_zeta, custom=custom)
    state.alpha, state.R = system.alpha, system.R
    if cfg.restricted:
        state = replace(state, c_minus=state.c_plus.copy(), eps_minus=state.eps_plus)

    report = SCFReport()
    v_state = system.hartree_potential(system.charges(state))
    v_mix = v_state
    energy = total_energy(system, state, v_state).total
    report.energy_history.append(energy)
    residuals = euler_lagrange_residuals(system, state, v_state)
    best = (max(residuals), state.copy(), residuals)
    sign_flips, last_sign = 0, 0

    for iteration in range(1, cfg.max_iterations + 1):
        v_in = v_state if iteration == 1 else cfg.beta * v_state + (1.0 - cfg.beta) * v_mix
        v_mix = v_in
        f_plus, f_minus = effective_rhs(system, state, v_in)

        c_plus, eps_plus = _orbital_step(system, cfg, state.c_plus, state.eps_plus, f_plus, iteration, "+", report)
        if cfg.restricted:
            c_minus, eps_minus = c_plus.copy(), eps_plus
        else:
            c_minus, eps_minus = _orbital_step(system, cfg, state.c_minus, state.eps_minus, f_minus, iteration, "-", report)

        state = OrbitalState(c_plus, c_minus, eps_plus, eps_minus, system.alpha, system.R)
        if cfg.energy_update == "rayleigh":
            state.eps_plus = rayleigh_energy(system, c_plus, v_in)
            state.eps_minus = rayleigh_energy(system, c_minus, v_in)
        for spin, eps in (("+", state.eps_plus), ("-", state.eps_minus)):
            if not np.isfinite(eps):
                raise ConvergenceError(f"orbital energy of spin {spin} became {eps}", report)

        v_state = system.hartree_potential(system.charges(state))
        previous, energy = energy, total_energy(system, state, v_state).total
        report.energy_history.append(energy)
        residuals = euler_lagrange_residuals(system, state, v_state)
        report.iterations = iteration
        if max(residuals) < best[0]:
            best = (max(residuals), state.copy(), residuals)

        change = energy - previous
        sign = int(np.sign(change))
        if sign and last_sign and sign != last_sign:
            sign_flips += 1
        last_sign = sign or last_sign
        log.debug("SCF %3d: E=%.10f dE=%.3e res=(%.2e, %.2e) eps=(%.6f, %.6f)", iteration, energy, change, *residuals, state.eps_plus, state.eps_minus)

        if abs(change) < cfg.tol_energy and max(residuals) < cfg.residual_tol:
            report.converged = True
            report.residuals = residuals
            break
    else:
        log.warning("SCF did not converge in %d iterations (alpha=%s, R=%s)", cfg.max_iterations, system.alpha, system.R)
        _, state, residuals = best
        report.residuals = residuals

    if sign_flips > cfg.oscillation_limit:
        report.oscillating = True
        report.suggestion = f"energy oscillated ({sign_flips} sign changes); reduce beta below {cfg.beta}"
        log.warning(report.suggestion)

    return state, report


def linear_ground_state(system: XLDASystem, eps0=-0.5, tol=1e-8, max_iterations=200, zeta=0.6):
    """Lowest eigenpair of (T + M_nuc) c = eps S c by the same Helmholtz /
    energy-correction iteration (no Hartree, no exchange).

    Returns (c, eps, rayleigh_quotient, iterations).
    """
    centers = system.spec.positions
    c = system.normalize(sum(_gaussian(system.mesh, p, zeta) for p in centers))
    eps = min(eps0, -_eps_floor())
    for iteration in range(1, max_iterations + 1):
        f = -(system.M_nuc @ c)
        f[system.boundary] = 0.0
        c_tilde, _, clamped = helmholtz_update(system, eps, f, x0=c)
        if clamped:
            eps = -_eps_floor()
        step = energy_correction(c, c_tilde, f, system.S)
        eps = eps + step
        c = _sign_align(system.normalize(c_tilde), c, system.S)
        if abs(step) < tol:
            break
    rayleigh = float(c @ (system.T @ c) + c @ (system.M_nuc @ c))
    return c, eps, rayleigh, iteration


def transfer_state(state: OrbitalState, source: XLDASystem, target: XLDASystem) -> OrbitalState:
    """Interpolate a state onto another system's mesh (for warm starts across bond lengths)."""
    c_plus = target.normalize(transfer_field(source.mesh, state.c_plus, target.mesh))
    c_minus = target.normalize(transfer_field(source.mesh, state.c_minus, target.mesh))
    return OrbitalState(c_plus, c_minus, state.eps_plus, state.eps_minus, target.alpha, target.R)
