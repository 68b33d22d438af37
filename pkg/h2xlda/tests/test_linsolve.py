import numpy as np
import pytest

from h2xlda.exceptions import SolverError
from h2xlda.linsolve import (
    JacobiPreconditioner,
    SolverConfig,
    build_preconditioner,
    cg_solve,
    multigrid_preconditioner,
    prolongation,
)
from h2xlda.mesh import MeshConfig, build_box_mesh, build_mesh, refine_uniform
from h2xlda.operators import assemble_mass, assemble_stiffness


@pytest.fixture(scope="module")
def graded_mesh():
    return build_mesh(MeshConfig(half_extent=10.0, local_refine_rounds=4, global_refine_rounds=1))


def dirichlet_laplacian(mesh):
    return assemble_stiffness(mesh).constrained(mesh.boundary_vertices)


def interior_rhs(mesh, rng):
    b = rng.standard_normal(mesh.n_vertices)
    b[mesh.boundary_vertices] = 0.0
    return b


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rtol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")
    assert SolverConfig().with_rtol(1e-3).rtol == 1e-3


def test_mass_solve(graded_mesh):
    S = assemble_mass(graded_mesh)
    ones = np.ones(graded_mesh.n_vertices)
    x, report = cg_solve(S, S @ ones, cfg=SolverConfig(rtol=1e-12))
    assert report.converged
    assert np.abs(x - 1.0).max() < 1e-8


def test_residual_is_recomputed(graded_mesh, rng):
    A = assemble_stiffness(graded_mesh) + assemble_mass(graded_mesh)
    b = rng.standard_normal(graded_mesh.n_vertices)
    x, report = cg_solve(A, b, cfg=SolverConfig(rtol=1e-10))
    assert report.converged
    assert report.residual <= 1e-10
    assert np.linalg.norm(b - A @ x) / np.linalg.norm(b) == pytest.approx(report.residual, rel=1e-3, abs=1e-14)


def test_initial_guess_is_used(graded_mesh, rng):
    A = assemble_stiffness(graded_mesh) + assemble_mass(graded_mesh)
    b = rng.standard_normal(graded_mesh.n_vertices)
    x, _ = cg_solve(A, b, cfg=SolverConfig(rtol=1e-10))
    _, report = cg_solve(A, b, x0=x, cfg=SolverConfig(rtol=1e-8))
    assert report.iterations <= 1


def test_zero_rhs():
    mesh = build_box_mesh(MeshConfig(initial_cells_per_axis=3))
    x, report = cg_solve(assemble_mass(mesh), np.zeros(mesh.n_vertices))
    assert not np.any(x)
    assert report.iterations == 0


def test_non_spd_operator_raises(graded_mesh, rng):
    S = assemble_mass(graded_mesh)
    with pytest.raises(SolverError) as info:
        cg_solve(S * -1.0, rng.standard_normal(graded_mesh.n_vertices), cfg=SolverConfig(preconditioner="none"))
    assert info.value.report.breakdown
    assert not info.value.report.converged


def test_jacobi_needs_positive_diagonal(graded_mesh):
    with pytest.raises(SolverError):
        JacobiPreconditioner(assemble_mass(graded_mesh) * -1.0)


def test_nonfinite_rhs_raises(graded_mesh):
    b = np.zeros(graded_mesh.n_vertices)
    b[0] = np.inf
    with pytest.raises(SolverError):
        cg_solve(assemble_mass(graded_mesh), b)


def test_iteration_cap_returns_best_iterate(graded_mesh, rng):
    A = dirichlet_laplacian(graded_mesh)
    b = interior_rhs(graded_mesh, rng)
    x, report = cg_solve(A, b, cfg=SolverConfig(rtol=1e-12, max_iterations=3))
    assert not report.converged
    assert report.iterations == 3
    assert report.residual <= 1.0
    assert np.all(np.isfinite(x))


def test_prolongation_reproduces_affine_fields(box_mesh):
    fine = refine_uniform(box_mesh, 1)
    P = prolongation(fine.history[-1])
    field = box_mesh.vertices @ np.array([1.0, -2.0, 0.5]) + 3.0
    assert np.allclose(P @ field, fine.vertices @ np.array([1.0, -2.0, 0.5]) + 3.0, atol=1e-12)


def test_single_level_multigrid_is_exact(rng):
    mesh = build_box_mesh(MeshConfig(initial_cells_per_axis=4))
    A = dirichlet_laplacian(mesh)
    M = multigrid_preconditioner(mesh, operator=A)
    assert M.n_levels == 1
    x, report = cg_solve(A, interior_rhs(mesh, rng), cfg=SolverConfig(rtol=1e-10), M=M)
    assert report.iterations == 1


@pytest.mark.parametrize("smoother", ["sgs", "jacobi"])
def test_vcycle_is_symmetric(graded_mesh, rng, smoother):
    A = dirichlet_laplacian(graded_mesh)
    M = multigrid_preconditioner(graded_mesh, operator=A, smoother=smoother)
    n = len(M.free)
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    a, b = u @ M.vcycle(v), v @ M.vcycle(u)
    assert a == pytest.approx(b, rel=1e-9)
    assert u @ M.vcycle(u) > 0


def test_nested_mesh_hierarchy(box_mesh, rng):
    meshes = [refine_uniform(box_mesh, k) for k in range(3)]
    A_levels = [dirichlet_laplacian(m) for m in meshes]
    M = multigrid_preconditioner(meshes, A_levels)
    assert M.n_levels == 3
    x, report = cg_solve(A_levels[-1], interior_rhs(meshes[-1], rng), cfg=SolverConfig(rtol=1e-10), M=M)
    assert report.converged


def test_hierarchy_must_be_nested():
    a = build_box_mesh(MeshConfig(initial_cells_per_axis=2))
    b = build_box_mesh(MeshConfig(initial_cells_per_axis=4))
    with pytest.raises(SolverError, match="not nested"):
        multigrid_preconditioner([a, b], operator=dirichlet_laplacian(b))


def test_multigrid_beats_diagonal(graded_mesh, rng):
    A = dirichlet_laplacian(graded_mesh)
    b = interior_rhs(graded_mesh, rng)
    cfg = SolverConfig(rtol=1e-10, preconditioner="multigrid")
    x_mg, mg = cg_solve(A, b, cfg=cfg, M=build_preconditioner(A, cfg, hierarchy=graded_mesh))
    x_d, diag = cg_solve(A, b, cfg=SolverConfig(rtol=1e-10))
    assert mg.converged and diag.converged
    assert mg.iterations < diag.iterations
    assert np.abs(x_mg - x_d).max() < 1e-6 * np.abs(x_d).max()


@pytest.mark.slow
def test_multigrid_iterations_barely_grow_under_refinement(rng):
    """Multigrid CG iteration counts grow by less than 1.5x per global refinement round."""
    cfg = SolverConfig(rtol=1e-10, preconditioner="multigrid")
    iterations = []
    for rounds in (1, 2):
        mesh = build_mesh(MeshConfig(half_extent=10.0, local_refine_rounds=2, global_refine_rounds=rounds))
        A = dirichlet_laplacian(mesh)
        _, report = cg_solve(A, interior_rhs(mesh, rng), cfg=cfg, M=build_preconditioner(A, cfg, hierarchy=mesh))
        assert report.converged
        iterations.append(report.iterations)
    assert iterations[1] < 1.5 * iterations[0]


def test_build_preconditioner_kinds(graded_mesh):
    A = dirichlet_laplacian(graded_mesh)
    assert build_preconditioner(A, SolverConfig(preconditioner="none")) is None
    assert isinstance(build_preconditioner(A, SolverConfig()), JacobiPreconditioner)
    # multigrid without a hierarchy degrades to the diagonal
    assert isinstance(build_preconditioner(A, SolverConfig(preconditioner="multigrid")), JacobiPreconditioner)


def test_prolongation_of_a_bisection_round(box_mesh):
    """Midpoints of edges created in the same round resolve to coarse vertices."""
    fine = build_mesh(MeshConfig(half_extent=10.0, local_refine_rounds=1, global_refine_rounds=0))
    step = fine.history[-1]
    P = prolongation(step)
    assert P.shape == (fine.n_vertices, step.n_coarse)
    coarse = fine.vertices[: step.n_coarse]
    weights = np.array([0.3, 1.0, -0.7])
    assert np.allclose(P @ (coarse @ weights), fine.vertices @ weights, atol=1e-12)
    assert np.allclose(P.sum(axis=1), 1.0)
