import math

import numpy as np
import pytest

from h2xlda.continuation import (
    BRANCH_COLUMNS,
    BranchPoint,
    PhaseDiagram,
    Sweeper,
    branch_metrics,
    classify_branch,
    detect_bifurcation,
    phase_diagram,
    state_distance,
    sweep,
)
from h2xlda.hessian import HessianReport
from h2xlda.scf import OrbitalState, initial_guess


def point(parameter, branch="delocalized", energy=-1.0, eigenvalue=None, converged=True, init=None, state=None):
    hessian = None
    if eigenvalue is not None:
        hessian = HessianReport([eigenvalue], int(eigenvalue < -1e-4), "", [0.0], converged)
    return BranchPoint(
        alpha=0.93,
        R=parameter / 2,
        branch=branch,
        init=init or branch,
        parameter=parameter,
        energy={"total": energy},
        hessian=hessian,
        converged=True,
        state=state,
    )


def test_bifurcation_from_hessian_sign_change():
    branch = [point(1.0, eigenvalue=0.2), point(2.0, eigenvalue=-0.2)]
    assert detect_bifurcation(branch) == pytest.approx(1.5)
    assert detect_bifurcation(branch, with_detector=True) == (pytest.approx(1.5), "hessian")


def test_bifurcation_interpolates_linearly():
    branch = [point(3.0, eigenvalue=-0.1), point(1.0, eigenvalue=0.3), point(2.0, eigenvalue=0.1)]
    assert detect_bifurcation(branch) == pytest.approx(2.5)


def test_unconverged_eigenvalues_are_ignored():
    branch = [point(1.0, eigenvalue=0.2), point(2.0, eigenvalue=-0.2, converged=False)]
    assert branch[1].smallest_eigenvalue is None
    assert detect_bifurcation(branch) is None


def test_bifurcation_from_energy_gap():
    branch = [
        point(1.0),
        point(1.0, "antiferro"),
        point(2.0),
        point(2.0, "antiferro"),
        point(3.0),
        point(3.0, "antiferro", energy=-1.1),
    ]
    value, detector = detect_bifurcation(branch, tol_energy=1e-6, with_detector=True)
    assert detector == "energy"
    assert 2.0 < value < 2.01


def test_energy_gap_at_the_first_point():
    branch = [point(1.0), point(1.0, "antiferro", energy=-1.5)]
    assert detect_bifurcation(branch, tol_energy=1e-6) == 1.0


def test_no_bifurcation():
    branch = [point(1.0, eigenvalue=0.3), point(2.0, eigenvalue=0.1), point(2.0, "antiferro", energy=-0.9)]
    assert detect_bifurcation(branch) is None
    assert detect_bifurcation(branch, with_detector=True) == (None, None)
    assert detect_bifurcation([]) is None


@pytest.mark.parametrize(
    "metrics, expected",
    [
        ({"s": 0.0, "d": 0.0, "dipole": 0.0}, "delocalized"),
        ({"s": 0.8, "d": 1.5, "dipole": 0.01}, "antiferro"),
        ({"s": 0.0, "d": 0.0, "dipole": 1.4}, "ionic_left"),
        ({"s": 0.0, "d": 0.0, "dipole": -1.4}, "ionic_right"),
        ({"s": 0.5, "d": 0.1, "dipole": 0.0}, "unclassified"),
    ],
)
def test_classify_branch(metrics, expected):
    assert classify_branch(metrics, s_tol=1e-3, d_tol=0.2) == expected


def test_classify_branch_uses_settings(tiny_settings):
    tiny_settings.set("sweep.s_tol", 0.6)
    assert classify_branch({"s": 0.5, "d": 0.1, "dipole": 0.0}) == "delocalized"


def test_branch_metrics(tiny_system):
    delocalized = branch_metrics(tiny_system, initial_guess(tiny_system, "delocalized"))
    assert delocalized["s"] == 0.0
    assert delocalized["d"] == 0.0
    assert delocalized["midpoint_ratio"] > 0

    antiferro = branch_metrics(tiny_system, initial_guess(tiny_system, "antiferro"))
    assert antiferro["s"] > 0.1
    assert antiferro["d"] > 0.2
    assert abs(antiferro["dipole"]) < 0.1 * antiferro["d"]
    assert classify_branch(antiferro, s_tol=1e-3, d_tol=0.2) == "antiferro"

    left = branch_metrics(tiny_system, initial_guess(tiny_system, "ionic_left"))
    assert classify_branch(left, s_tol=1e-3, d_tol=0.2) == "ionic_left"


def test_state_distance(tiny_system):
    S = tiny_system.S
    a = initial_guess(tiny_system, "antiferro")
    flipped = OrbitalState(-a.c_plus, a.c_minus, *a.eps, a.alpha, a.R)
    assert state_distance(S, a, a) == 0.0
    assert state_distance(S, a, a.swapped()) == 0.0
    assert state_distance(S, a, flipped) == 0.0
    b = initial_guess(tiny_system, "delocalized")
    assert state_distance(S, a, b) > 0.1
    assert state_distance(S, a, b) == pytest.approx(state_distance(S, b, a))


def test_grid_parameters():
    by_bond = Sweeper(grid_units="bond_length")
    assert by_bond._parameters("alpha", 0.93, 3.0) == (0.93, 1.5)
    assert by_bond._parameters("R", 1.0, 2.0) == (2.0, 1.0)
    assert by_bond._parameters("bond_length", 2.0, 10.0) == (10.0, 1.0)
    assert Sweeper(grid_units="R")._parameters("alpha", 0.93, 1.5) == (0.93, 1.5)
    with pytest.raises(ValueError):
        Sweeper(grid_units="angstrom")


def test_sweep_argument_checks():
    sweeper = Sweeper(hessian=False, workers=1)
    with pytest.raises(ValueError):
        sweeper.sweep("delta", 1.0, [1.0])
    with pytest.raises(ValueError):
        sweeper.sweep("alpha", 1.0, [3.0, 2.0])
    with pytest.raises(ValueError):
        sweeper.sweep("alpha", 1.0, [2.0], inits=[])


def test_dedupe_keeps_the_first_init(tiny_system):
    a = initial_guess(tiny_system, "antiferro")
    b = initial_guess(tiny_system, "delocalized")
    sweeper = Sweeper(hessian=False, workers=1)
    sweeper._masses[2.0] = tiny_system.S
    sweeper._masses[3.0] = tiny_system.S
    points = [
        point(2.0, "antiferro", init="delocalized", state=a),
        point(2.0, "antiferro", init="antiferro", state=a.swapped()),
        point(2.0, "delocalized", init="ionic_left", state=b),
        point(2.0, "failed", init="ionic_right"),
        point(3.0, "antiferro", init="antiferro", state=a),
    ]
    kept = sweeper.dedupe(points, tol=1e-8)
    assert [(p.parameter, p.init) for p in kept] == [
        (2.0, "delocalized"),
        (2.0, "ionic_left"),
        (2.0, "ionic_right"),
        (3.0, "antiferro"),
    ]
    assert any("coincides with init delocalized" in s for s in sweeper.summaries)


def test_branch_point_rows():
    p = point(2.0, energy=-1.25)
    p.energy.update(kinetic=1.0, nuclear=-3.0, hartree=1.0, exchange=-0.25)
    row = p.as_row()
    assert list(row) == BRANCH_COLUMNS
    assert row["bond_length"] == 2.0
    assert row["n_negative_eigs"] is None
    assert p.molecular_energy == pytest.approx(-1.25 + 0.5)
    data = p.as_dict()
    assert data["hessian"] is None
    assert data["init"] == "delocalized"
    failed = BranchPoint(0.93, 1.0, "failed", "antiferro", 2.0, error="boom")
    assert math.isnan(failed.E_total)


def test_phase_diagram_rows():
    diagram = PhaseDiagram(alpha_grid=[0.5, 1.0], R_grid=[2.0, 3.0])
    diagram.boundary = [
        {"alpha": 0.5, "critical": None, "detector": None},
        {"alpha": 1.0, "critical": 2.7, "detector": "hessian"},
    ]
    rows = diagram.as_rows()
    assert rows[0] == {"alpha": 0.5, "critical_bond_length": None, "status": "open", "detector": None}
    assert rows[1]["status"] == "closed"
    assert diagram.polyline == [(1.0, 2.7)]
    assert diagram.as_dict()["open"] == [0.5]


@pytest.mark.slow
def test_alpha_zero_inits_collapse(tiny_settings):
    """At alpha = 0 every init, the ionic ones included, lands on one delocalized state."""
    tiny_settings.set("scf.tol_energy", 1e-9)
    tiny_settings.set("scf.max_iterations", 400)
    sweeper = Sweeper(hessian=False, workers=1)
    points = sweeper.sweep("alpha", 0.0, [2.0], inits=["delocalized", "antiferro", "ionic_left", "ionic_right"])
    assert len(points) == 1
    assert points[0].branch == "delocalized"
    assert points[0].converged
    assert not sweeper.errors
    assert len(sweeper.meshes) == 1


@pytest.mark.slow
def test_sweep_warm_starts_along_the_grid(tiny_settings):
    points = sweep("alpha", 0.0, [1.8, 2.0], inits=["delocalized"], hessian=False, workers=1)
    assert [p.parameter for p in points] == [1.8, 2.0]
    assert all(p.branch == "delocalized" and p.converged for p in points)
    assert points[0].R == 0.9


@pytest.mark.acceptance
def test_bond_length_bifurcation():
    """At alpha = 0.93 the symmetric branch loses to the antiferro one near bond length 2.75."""
    grid = [2.0, 2.5, 3.0, 3.5, 4.0, 4.5]
    points = sweep("alpha", 0.93, grid, inits=["delocalized", "antiferro"], hessian=False, workers=1)
    by_branch = {}
    for p in points:
        by_branch.setdefault(p.branch, {})[p.parameter] = p.E_total
    assert 2.0 not in by_branch.get("antiferro", {})
    for value in (3.0, 3.5, 4.0, 4.5):
        assert by_branch["antiferro"][value] < by_branch["delocalized"][value]
    critical = detect_bifurcation(points, tol_energy=1e-6)
    assert critical is not None
    assert 2.4 <= critical <= 3.1
    assert np.isfinite(critical)


@pytest.mark.acceptance
def test_branch_ordering_at_bond_length_two():
    """Antiferro is the lowest branch wherever it is distinct; the ionic pair
    only separates at large alpha, where it undercuts the delocalized branch."""
    alphas = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0]
    inits = ["delocalized", "antiferro", "ionic_left", "ionic_right"]
    points = sweep("bond_length", 2.0, alphas, inits=inits, hessian=False, workers=1)
    by_alpha = {}
    for p in points:
        if p.converged:
            energies = by_alpha.setdefault(p.alpha, {})
            energies[p.branch] = min(p.E_total, energies.get(p.branch, math.inf))

    assert set(by_alpha[0.0]) == {"delocalized"}
    for alpha, energies in by_alpha.items():
        if "antiferro" in energies:
            assert energies["antiferro"] == min(energies.values()), alpha
    for alpha in (6.0, 8.0):
        energies = by_alpha[alpha]
        ionic = [energies[b] for b in ("ionic_left", "ionic_right") if b in energies]
        assert ionic, alpha
        assert min(ionic) < energies["delocalized"]


@pytest.mark.acceptance
def test_phase_boundary_moves_out_at_small_alpha():
    """On a 4x4 grid the critical bond length at the smallest alpha exceeds the one at the largest."""
    diagram = phase_diagram([0.6, 0.8, 1.0, 1.2], [1.5, 2.5, 3.5, 4.5], inits=["delocalized", "antiferro"], hessian=False, workers=1)
    assert [b["alpha"] for b in diagram.boundary] == [0.6, 0.8, 1.0, 1.2]
    assert len(diagram.samples) >= 16
    first, last = diagram.boundary[0]["critical"], diagram.boundary[-1]["critical"]
    assert last is not None
    assert first is None or first > last
