"""Preconditioned conjugate gradients and a geometric multigrid V-cycle.

The multigrid transfers come straight from the mesh refinement history: a
new vertex is the average of its parent edge, so prolongation is exact for
P1 fields and the coarse operators are Galerkin products P^T A P.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from h2xlda.defaults import defaults
from h2xlda.exceptions import SolverError
from h2xlda.features import HAS_NUMBA
from h2xlda.mesh import Mesh, is_nested
from h2xlda.operators import SparseOperator

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "cg_solve",
    "multigrid_preconditioner",
    "build_preconditioner",
    "JacobiPreconditioner",
    "MultigridPreconditioner",
]

PRECONDITIONERS = ("none", "diagonal", "multigrid")


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-8
    max_iterations: int = 10000
    preconditioner: str = "diagonal"
    smoother: str = "sgs"
    jacobi_weight: float = 0.5
    max_levels: int = 25

    def __post_init__(self):
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.smoother not in ("sgs", "jacobi"):
            raise ValueError(f"unknown smoother {self.smoother!r}")

    @classmethod
    def from_settings(cls, **overrides):
        values = dict(
            rtol=float(defaults("solver.rtol")),
            max_iterations=int(defaults("solver.max_iterations")),
            preconditioner=defaults("solver.preconditioner"),
            smoother=defaults("solver.smoother"),
            jacobi_weight=float(defaults("solver.jacobi_weight")),
            max_levels=int(defaults("solver.max_levels")),
        )
        values.update(overrides)
        return cls(**values)

    def with_rtol(self, rtol):
        return SolverConfig(**{**asdict(self), "rtol": rtol})

    def as_dict(self):
        return asdict(self)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    breakdown: bool = False
    converged: bool = True

    def as_dict(self):
        return asdict(self)


def _matrix(A):
    return A.matrix if isinstance(A, SparseOperator) else A


class JacobiPreconditioner:
    def __init__(self, A):
        d = np.asarray(_matrix(A).diagonal(), dtype=np.float64)
        if np.any(d <= 0):
            raise SolverError("diagonal preconditioner needs a positive diagonal")
        self.inverse = 1.0 / d

    def __call__(self, r):
        return self.inverse * r


def cg_solve(A, b, x0=None, cfg: SolverConfig = SolverConfig(), M: Optional[Callable] = None):
    """Solve A x = b for symmetric positive definite A.

    Returns (x, SolveReport). The reported residual is recomputed from
    scratch. A non-positive curvature p^T A p aborts with SolverError; running
    out of iterations returns the best iterate with converged=False.
    """
    A = _matrix(A)
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side is not finite")
    if M is None and cfg.preconditioner != "none":
        if cfg.preconditioner == "multigrid":
            log.debug("no multigrid handle supplied, using the diagonal preconditioner")
        M = JacobiPreconditioner(A)

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(iterations=0, residual=0.0)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    z = r if M is None else M(r)
    p = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), float(np.linalg.norm(r)) / bnorm

    for it in range(1, cfg.max_iterations + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if not pAp > 0 or not np.isfinite(pAp):
            res = float(np.linalg.norm(b - A @ x)) / bnorm
            report = SolveReport(iterations=it, residual=res, breakdown=True, converged=False)
            log.error("CG breakdown at iteration %d: p^T A p = %r (operator not SPD)", it, pAp)
            raise SolverError(f"operator is not positive definite (p^T A p = {pAp:.3e} at iteration {it})", report)

        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res

        if res <= cfg.rtol:
            r = b - A @ x
            true_res = float(np.linalg.norm(r)) / bnorm
            if true_res <= cfg.rtol:
                return x, SolveReport(iterations=it, residual=true_res)
            log.debug("CG recurrence drifted: %.3e vs true %.3e, continuing", res, true_res)

        z = r if M is None else M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    true_res = float(np.linalg.norm(b - A @ best_x)) / bnorm
    log.warning("CG hit max_iterations=%d, best residual %.3e", cfg.max_iterations, true_res)
    return best_x, SolveReport(iterations=cfg.max_iterations, residual=true_res, converged=False)


def prolongation(step) -> sp.csr_matrix:
    """Prolongation of one refinement step: identity on old vertices, edge average on new ones.

    A bisection round may split an edge ending in a midpoint created earlier
    in the same round; those averages are resolved in creation order.
    """
    n_c, k = step.n_coarse, len(step.parent_edges)
    n_f = n_c + k
    parents = np.asarray(step.parent_edges, dtype=np.int64).reshape(-1, 2)
    embed = sp.csr_matrix((np.ones(n_c), (np.arange(n_c), np.arange(n_c))), shape=(n_f, n_c))
    average = sp.csr_matrix(
        (np.full(2 * k, 0.5), (np.repeat(np.arange(n_c, n_f), 2), parents.ravel())), shape=(n_f, n_f)
    )
    P = embed
    # `average` is strictly lower triangular, so this terminates after the nesting depth
    for _ in range(k + 1):
        nxt = (embed + average @ P).tocsr()
        if (nxt != P).nnz == 0:
            break
        P = nxt
    return P.tocsr()


if HAS_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _gauss_seidel(indptr, indices, data, diag, x, b, forward):
        n = b.shape[0]
        for step in range(n):
            i = step if forward else n - 1 - step
            s = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            x[i] = s / diag[i]
        return x


class _Level:
    def __init__(self, A: sp.csr_matrix):
        self.A = A.tocsr()
        self.A.sort_indices()
        self.diag = self.A.diagonal()
        self._lower = None
        self._upper = None

    def gauss_seidel(self, x, b, forward):
        if HAS_NUMBA:
            return _gauss_seidel(self.A.indptr, self.A.indices, self.A.data, self.diag, x, b, forward)
        if self._lower is None:
            self._lower = sp.tril(self.A, format="csr")
            self._upper = sp.triu(self.A, format="csr")
        if forward:
            rhs = b - (self._upper @ x - self.diag * x)
            return sla.spsolve_triangular(self._lower, rhs, lower=True)
        rhs = b - (self._lower @ x - self.diag * x)
        return sla.spsolve_triangular(self._upper, rhs, lower=False)


class MultigridPreconditioner:
    """One V-cycle per application: one pre- and one post-smoothing step per
    level, direct Cholesky solve on the coarsest level.

    Acts on full-length vectors of a Dirichlet-constrained operator: fixed
    entries are passed through unchanged (the constrained rows are identity).
    """

    def __init__(self, operators, prolongations, free, smoother="sgs", jacobi_weight=0.5):
        self.levels = [_Level(A) for A in operators]
        self.prolongations = [P.tocsr() for P in prolongations]
        self.restrictions = [P.T.tocsr() for P in prolongations]
        self.free = np.asarray(free, dtype=np.int64)
        self.smoother = smoother
        self.weight = jacobi_weight
        coarse = self.levels[0].A.toarray()
        self._coarse = scipy.linalg.cho_factor(coarse) if coarse.size else None

    @property
    def n_levels(self):
        return len(self.levels)

    def _smooth(self, level, x, b, forward):
        if self.smoother == "jacobi":
            return x + self.weight * (b - level.A @ x) / level.diag
        return level.gauss_seidel(x, b, forward)

    def _cycle(self, k, b):
        if k == 0:
            if self._coarse is None:
                return np.zeros_like(b)
            return scipy.linalg.cho_solve(self._coarse, b)
        level = self.levels[k]
        x = self._smooth(level, np.zeros_like(b), b, forward=True)
        r = b - level.A @ x
        x = x + self.prolongations[k - 1] @ self._cycle(k - 1, self.restrictions[k - 1] @ r)
        return self._smooth(level, x, b, forward=False)

    def vcycle(self, b):
        """One V-cycle on the reduced (free-dof) system."""
        return self._cycle(self.n_levels - 1, np.asarray(b, dtype=np.float64))

    def __call__(self, r):
        z = np.array(r, dtype=np.float64)
        z[self.free] = self.vcycle(r[self.free])
        return z

    def as_linear_operator(self, n):
        return sla.LinearOperator((n, n), matvec=self, dtype=np.float64)


def _level_sizes(meshes: Sequence[Mesh]):
    fine = meshes[-1]
    if len(meshes) > 1:
        for coarse, finer in zip(meshes[:-1], meshes[1:]):
            if not is_nested(coarse, finer):
                raise SolverError("multigrid hierarchy is not nested")
        return [m.n_vertices for m in meshes]
    return [fine.n_vertices]


def _prolongation_between(fine: Mesh, n_coarse, n_fine):
    P = sp.identity(n_coarse, format="csr")
    for step in fine.history:
        if step.n_coarse >= n_coarse and step.n_fine <= n_fine:
            P = prolongation(step) @ P
    if P.shape[0] != n_fine:
        raise SolverError(f"refinement history does not connect {n_coarse} to {n_fine} vertices")
    return P.tocsr()


def multigrid_preconditioner(
    hierarchy: Union[Mesh, Sequence[Mesh]],
    A_levels: Optional[Sequence[SparseOperator]] = None,
    *,
    operator: Optional[SparseOperator] = None,
    smoother: str = "sgs",
    jacobi_weight: float = 0.5,
    max_levels: int = 25,
) -> MultigridPreconditioner:
    """Build a V-cycle preconditioner.

    `hierarchy` is either a list of nested meshes (coarse to fine) or a
    single mesh, whose refinement history then supplies one level per step.
    Level operators are either given (`A_levels`, constrained, coarse to
    fine) or formed as Galerkin products of the fine `operator`.
    """
    if isinstance(hierarchy, Mesh):
        fine = hierarchy
        sizes = [fine.history[0].n_coarse] if fine.history else []
        sizes += [step.n_fine for step in fine.history] or [fine.n_vertices]
    else:
        meshes = list(hierarchy)
        if not meshes:
            raise SolverError("empty multigrid hierarchy")
        fine = meshes[-1]
        sizes = _level_sizes(meshes)

    interior = ~fine.boundary_mask
    # drop coarse levels without free unknowns, then cap the depth
    sizes = [n for n in sizes if interior[:n].any()] or [fine.n_vertices]
    sizes = sizes[-max_levels:]
    frees = [np.flatnonzero(interior[:n]) for n in sizes]

    prolongations = []
    for (n_c, free_c), (n_f, free_f) in zip(zip(sizes[:-1], frees[:-1]), zip(sizes[1:], frees[1:])):
        P = _prolongation_between(fine, n_c, n_f)
        prolongations.append(P[free_f][:, free_c].tocsr())

    if A_levels is not None:
        A_levels = list(A_levels)[-len(sizes):]
        if len(A_levels) != len(sizes):
            raise SolverError(f"{len(A_levels)} level operators for {len(sizes)} levels")
        operators = [_matrix(A)[free][:, free] for A, free in zip(A_levels, frees)]
    else:
        if operator is None:
            raise SolverError("either A_levels or the fine operator is required")
        operators = [_matrix(operator)[frees[-1]][:, frees[-1]].tocsr()]
        for P in reversed(prolongations):
            operators.insert(0, (P.T @ operators[0] @ P).tocsr())

    log.debug("multigrid: %d levels, sizes %s", len(sizes), [len(f) for f in frees])
    return MultigridPreconditioner(operators, prolongations, frees[-1], smoother=smoother, jacobi_weight=jacobi_weight)


def build_preconditioner(A, cfg: SolverConfig, hierarchy=None):
    """Preconditioner handle for `cfg.preconditioner` (None for 'none')."""
    if cfg.preconditioner == "none":
        return None
    if cfg.preconditioner == "multigrid":
        if hierarchy is not None:
            return multigrid_preconditioner(
                hierarchy,
                operator=A,
                smoother=cfg.smoother,
                jacobi_weight=cfg.jacobi_weight,
                max_levels=cfg.max_levels,
            )
        log.debug("multigrid requested without a hierarchy, falling back to diagonal")
    return JacobiPreconditioner(A)
