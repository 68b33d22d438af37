"""Constrained second variation of the Lagrangian at a stationary state.

`HessianOperator.apply` returns half the second variation of

    L(c) = E(c) - sum_s eps_s (c_s.S c_s - 1),

i.e. <w, H w> = 1/2 d^2/dt^2 L(c + t w). The smallest eigenvalues of H on
the tangent space {c_s.S w_s = 0} classify the state: all positive for a
local minimiser, n negative for a saddle with n descent directions.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from h2xlda.defaults import defaults
from h2xlda.exceptions import StateError
from h2xlda.linsolve import JacobiPreconditioner, SolverConfig, cg_solve
from h2xlda.operators import assemble_weighted_mass
from h2xlda.scf import OrbitalState, XLDASystem, euler_lagrange_residuals, total_energy

log = logging.getLogger(__name__)

__all__ = [
    "HessianConfig",
    "HessianReport",
    "HessianOperator",
    "hessian_apply",
    "project_tangent",
    "smallest_eigenpairs",
    "classify",
    "second_difference",
]


@dataclass(frozen=True)
class HessianConfig:
    k: int = 6
    tol_eig: float = 1e-4
    max_iterations: int = 400
    variant: str = "full"
    method: str = "lobpcg"
    residual_threshold: float = 1e-3
    solver_rtol: float = 1e-12
    seed: int = 1234

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.variant not in ("full", "cross_spin"):
            raise ValueError(f"unknown Hessian variant {self.variant!r}")
        if self.method not in ("lobpcg", "lanczos"):
            raise ValueError(f"unknown eigen-solver {self.method!r}")

    @classmethod
    def from_settings(cls, **overrides):
        values = dict(
            k=int(defaults("hessian.k")),
            tol_eig=float(defaults("hessian.tol_eig")),
            max_iterations=int(defaults("hessian.max_iterations")),
            variant=defaults("hessian.variant"),
            method=defaults("hessian.method"),
            residual_threshold=float(defaults("hessian.residual_threshold")),
            solver_rtol=float(defaults("hessian.solver_rtol")),
            seed=int(defaults("hessian.seed")),
        )
        values.update(overrides)
        return cls(**values)


@dataclass
class HessianReport:
    eigenvalues: list
    n_negative: int
    classification: str
    residuals: list
    converged: bool
    variant: str = "full"
    method: str = "lobpcg"
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def smallest(self):
        return self.eigenvalues[0] if self.eigenvalues else float("nan")

    def as_dict(self):
        data = asdict(self)
        data.pop("eigenvectors")
        data["eigenvalues"] = [float(e) for e in self.eigenvalues]
        data["residuals"] = [float(r) for r in self.residuals]
        return data


def classify(eigenvalues, tol_eig, converged=True):
    """local_min if the smallest eigenvalue exceeds tol_eig, saddle(n) if n of
    them are below -tol_eig, otherwise inconclusive."""
    if not converged or len(eigenvalues) == 0:
        return "inconclusive"
    eigenvalues = np.sort(np.asarray(eigenvalues, dtype=np.float64))
    if eigenvalues[0] > tol_eig:
        return "local_min"
    n = int(np.sum(eigenvalues < -tol_eig))
    if n:
        return f"saddle({n})"
    return "inconclusive"


class HessianOperator:
    """Second variation at a fixed state, with all state-dependent operators assembled once."""

    def __init__(self, system: XLDASystem, state: OrbitalState, cfg: Optional[HessianConfig] = None, check=True):
        self.system = system
        self.state = state
        self.cfg = cfg or HessianConfig.from_settings()
        if check:
            charges = system.charges(state)
            residuals = euler_lagrange_residuals(system, state, system.hartree_potential(charges))
            if max(residuals) > self.cfg.residual_threshold:
                raise StateError(
                    f"Hessian needs a converged state; Euler-Lagrange residuals are "
                    f"({residuals[0]:.2e}, {residuals[1]:.2e}) > {self.cfg.residual_threshold:.1e}"
                )

        rtol = self.cfg.solver_rtol
        mesh = system.mesh
        c_plus, c_minus = state.coefficients
        self.products = [assemble_weighted_mass(mesh, c) for c in (c_plus, c_minus)]
        spin_charges = [M @ c for M, c in zip(self.products, (c_plus, c_minus))]

        if self.cfg.variant == "full":
            v = system.coulomb_apply(spin_charges[0] + spin_charges[1], rtol=rtol)
            potentials = (v, v)
        else:
            # each spin feels only the other spin's Hartree field
            potentials = (
                system.coulomb_apply(spin_charges[1], rtol=rtol),
                system.coulomb_apply(spin_charges[0], rtol=rtol),
            )

        self.blocks = []
        for c, eps, v in zip((c_plus, c_minus), state.eps, potentials):
            exchange = (20.0 / 9.0) * system.alpha * system.lumped * np.abs(c) ** (2.0 / 3.0)
            block = system.T.matrix + system.M_nuc.matrix + assemble_weighted_mass(mesh, v).matrix
            block = block - sp.diags(exchange) - eps * system.S.matrix
            self.blocks.append(block.tocsr())

    @property
    def n(self):
        return self.system.mesh.n_vertices

    def apply(self, w_plus, w_minus):
        system = self.system
        rtol = self.cfg.solver_rtol
        w_plus = np.array(w_plus, dtype=np.float64)
        w_minus = np.array(w_minus, dtype=np.float64)
        w_plus[system.boundary] = 0.0
        w_minus[system.boundary] = 0.0

        # v_c * (psi_s w_s), one Coulomb solve per spin
        u_plus = system.coulomb_apply(self.products[0] @ w_plus, rtol=rtol)
        u_minus = system.coulomb_apply(self.products[1] @ w_minus, rtol=rtol)
        if self.cfg.variant == "full":
            couple_plus = u_plus + u_minus
            couple_minus = u_plus + u_minus
        else:
            couple_plus, couple_minus = u_minus, u_plus

        r_plus = self.blocks[0] @ w_plus + 2.0 * (self.products[0] @ couple_plus)
        r_minus = self.blocks[1] @ w_minus + 2.0 * (self.products[1] @ couple_minus)
        r_plus[system.boundary] = 0.0
        r_minus[system.boundary] = 0.0
        return r_plus, r_minus

    def quadratic_form(self, w_plus, w_minus):
        r_plus, r_minus = self.apply(w_plus, w_minus)
        return float(w_plus @ r_plus) + float(w_minus @ r_minus)


def hessian_apply(system: XLDASystem, state: OrbitalState, w_plus, w_minus, variant="full"):
    """(r+, r-) = H (w+, w-) at a converged state."""
    cfg = HessianConfig.from_settings(variant=variant)
    return HessianOperator(system, state, cfg).apply(w_plus, w_minus)


def project_tangent(system: XLDASystem, state: OrbitalState, w_plus, w_minus):
    """w'_s = w_s - (c_s.S w_s) c_s, with boundary values zeroed."""
    out = []
    for c, w in zip(state.coefficients, (w_plus, w_minus)):
        w = np.array(w, dtype=np.float64)
        w[system.boundary] = 0.0
        out.append(w - float(c @ (system.S @ w)) * c)
    return tuple(out)


def lagrangian(system: XLDASystem, state: OrbitalState, c_plus, c_minus, rtol=None):
    trial = OrbitalState(c_plus, c_minus, state.eps_plus, state.eps_minus, state.alpha, state.R)
    energy = total_energy(system, trial, rtol=rtol).total
    for c, eps in zip((c_plus, c_minus), state.eps):
        energy -= eps * (float(c @ (system.S @ c)) - 1.0)
    return energy


def second_difference(system: XLDASystem, state: OrbitalState, w_plus, w_minus, t=1e-4, rtol=1e-12):
    """1/2 (L(c + t w) + L(c - t w) - 2 L(c)) / t^2, comparable to <w, H w>."""
    c_plus, c_minus = state.coefficients
    up = lagrangian(system, state, c_plus + t * w_plus, c_minus + t * w_minus, rtol=rtol)
    down = lagrangian(system, state, c_plus - t * w_plus, c_minus - t * w_minus, rtol=rtol)
    centre = lagrangian(system, state, c_plus, c_minus, rtol=rtol)
    return 0.5 * (up + down - 2.0 * centre) / t**2


class _ReducedProblem:
    """H, S and the constraint vectors on the interior unknowns of both spins."""

    def __init__(self, operator: HessianOperator):
        self.operator = operator
        system = operator.system
        self.free = system.free
        nf = len(self.free)
        self.nf = nf
        S_ff = system.S.matrix[self.free][:, self.free].tocsr()
        self.B = sp.block_diag([S_ff, S_ff], format="csr")
        c_plus, c_minus = operator.state.coefficients
        self.Y = np.zeros((2 * nf, 2))
        self.Y[:nf, 0] = c_plus[self.free]
        self.Y[nf:, 1] = c_minus[self.free]
        self.lumped = np.concatenate([system.lumped[self.free]] * 2)

    def embed(self, x):
        n = self.operator.n
        w_plus = np.zeros(n)
        w_minus = np.zeros(n)
        w_plus[self.free] = x[: self.nf]
        w_minus[self.free] = x[self.nf :]
        return w_plus, w_minus

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        r_plus, r_minus = self.operator.apply(*self.embed(x))
        return np.concatenate([r_plus[self.free], r_minus[self.free]])

    def matmat(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return self.matvec(X)
        return np.column_stack([self.matvec(X[:, j]) for j in range(X.shape[1])])

    def project(self, x):
        """Primal projection onto the tangent space (Y is S-normalised)."""
        return x - self.Y @ (self.Y.T @ (self.B @ x))

    def project_dual(self, r):
        return r - (self.B @ self.Y) @ (self.Y.T @ r)

    def residual(self, x, lam):
        r = self.project_dual(self.matvec(x) - lam * (self.B @ x))
        return float(np.sqrt(np.sum(r * r / self.lumped))) / float(np.sqrt(x @ (self.B @ x)))

    def preconditioner(self):
        system = self.operator.system
        shift = min(self.operator.state.eps)
        M = system.helmholtz_preconditioner(min(shift, -1e-2))
        if M is None:
            A = (system.T - system.S * min(shift, -1e-2)).constrained(system.boundary)
            M = JacobiPreconditioner(A)

        def apply(x):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 2:
                return np.column_stack([apply(x[:, j]) for j in range(x.shape[1])])
            out = []
            for part in (x[: self.nf], x[self.nf :]):
                full = np.zeros(self.operator.n)
                full[self.free] = part
                out.append(M(full)[self.free])
            return np.concatenate(out)

        return apply


def _lobpcg(problem: _ReducedProblem, cfg: HessianConfig):
    n = 2 * problem.nf
    block = min(cfg.k + 2, n - 2)
    rng = np.random.default_rng(cfg.seed)
    X = np.column_stack([problem.project(rng.standard_normal(n)) for _ in range(block)])
    A = sla.LinearOperator((n, n), matvec=problem.matvec, matmat=problem.matmat, dtype=np.float64)
    precondition = problem.preconditioner()
    M = sla.LinearOperator((n, n), matvec=precondition, matmat=precondition, dtype=np.float64)
    values, vectors = sla.lobpcg(
        A,
        X,
        B=problem.B,
        M=M,
        Y=problem.Y,
        tol=0.1 * cfg.tol_eig,
        maxiter=cfg.max_iterations,
        largest=False,
    )
    order = np.argsort(values)
    return values[order], vectors[:, order]


def _lanczos(problem: _ReducedProblem, cfg: HessianConfig):
    """S-inner-product Lanczos on the tangent space with full reorthogonalisation."""
    n = 2 * problem.nf
    B = problem.B
    mass_solver = SolverConfig(rtol=1e-12, max_iterations=10000, preconditioner="diagonal")

    def solve_B(r):
        x, _ = cg_solve(B, r, None, mass_solver)
        return x

    steps = min(cfg.max_iterations, n - 2)
    rng = np.random.default_rng(cfg.seed)
    q = problem.project(rng.standard_normal(n))
    q /= np.sqrt(q @ (B @ q))
    basis, alphas, betas = [], [], []
    for j in range(steps):
        basis.append(q)
        z = problem.project(solve_B(problem.project_dual(problem.matvec(q))))
        alphas.append(float(q @ (B @ z)))
        for _ in range(2):
            Q = np.column_stack(basis)
            z = z - Q @ (Q.T @ (B @ z))
        z = problem.project(z)
        beta = float(np.sqrt(max(z @ (B @ z), 0.0)))
        if beta < 1e-12 or j == steps - 1:
            break
        betas.append(beta)
        q = z / beta

    m = len(alphas)
    theta, Z = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas[: m - 1]))
    vectors = np.column_stack(basis) @ Z
    return theta, vectors


def smallest_eigenpairs(system: XLDASystem, state: OrbitalState, k=None, tol_eig=None, cfg: Optional[HessianConfig] = None, operator: Optional[HessianOperator] = None) -> HessianReport:
    """k smallest eigenvalues of P H P on the tangent space, with residuals and a classification."""
    overrides = {}
    if k is not None:
        overrides["k"] = k
    if tol_eig is not None:
        overrides["tol_eig"] = tol_eig
    cfg = cfg or HessianConfig.from_settings(**overrides)
    operator = operator or HessianOperator(system, state, cfg)
    problem = _ReducedProblem(operator)
    method = cfg.method
    # scipy's lobpcg refuses constraints once it switches to its dense path
    if method == "lobpcg" and 2 * problem.nf - 2 < 5 * (cfg.k + 2):
        log.info("%d tangent unknowns are too few for LOBPCG, using Lanczos", 2 * problem.nf)
        method = "lanczos"

    try:
        values, vectors = (_lobpcg if method == "lobpcg" else _lanczos)(problem, cfg)
    except (np.linalg.LinAlgError, ValueError) as e:
        log.error("eigen-solver failed: %s", e)
        return HessianReport([], 0, "inconclusive", [], False, cfg.variant, method)

    values = values[: cfg.k]
    vectors = vectors[:, : cfg.k]
    residuals = [problem.residual(vectors[:, j], values[j]) for j in range(len(values))]
    converged = len(values) == cfg.k and all(r < cfg.tol_eig for r in residuals)
    if not converged:
        log.warning("Hessian eigenpairs not converged: residuals %s", ["%.1e" % r for r in residuals])
    classification = classify(values, cfg.tol_eig, converged)
    report = HessianReport(
        eigenvalues=[float(v) for v in values],
        n_negative=int(np.sum(values < -cfg.tol_eig)),
        classification=classification,
        residuals=residuals,
        converged=converged,
        variant=cfg.variant,
        method=method,
        eigenvectors=vectors,
    )
    log.info("Hessian (%s): %s, eigenvalues %s", cfg.variant, classification, ", ".join("%.5f" % v for v in values))
    return report
