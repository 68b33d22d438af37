from dataclasses import dataclass

from h2xlda.defaults import hash as default_hash

REQUIRED = {
    "solve": ["system.alpha", "system.bond_length"],
    "hessian": ["system.alpha", "system.bond_length"],
    "sweep": ["sweep.fixed", "sweep.value", "sweep.grid"],
    "phase": ["phase.alpha_grid", "phase.bond_grid"],
    "soliton": [],
    "compare": ["compare.alphas", "compare.bond_length"],
}

CHOICES = {
    "solver.preconditioner": {"none", "diagonal", "multigrid"},
    "solver.smoother": {"sgs", "jacobi"},
    "scf.energy_update": {"greens_correction", "rayleigh"},
    "scf.init": {"delocalized", "antiferro", "ionic_left", "ionic_right"},
    "hessian.variant": {"full", "cross_spin"},
    "hessian.method": {"lobpcg", "lanczos"},
    "sweep.fixed": {"alpha", "R", "bond_length"},
    "sweep.grid_units": {"bond_length", "R"},
    "compare.init": {"delocalized", "antiferro", "ionic_left", "ionic_right"},
}

POSITIVE = [
    "mesh.half_extent",
    "mesh.h_min_floor",
    "scf.tol_energy",
    "scf.gaussian_zeta",
    "scf.eps_floor",
    "hessian.tol_eig",
    "sweep.s_tol",
    "sweep.d_tol",
    "soliton.r_max",
    "soliton.step",
]

NON_NEGATIVE_INT = ["mesh.local_refine_rounds", "mesh.global_refine_rounds"]


@dataclass(frozen=True)
class ConfigIssue:
    key: str
    message: str

    def __str__(self):
        return f"{self.key}: {self.message}"


def _number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def check_settings(settings, command=None):
    """Validate a run settings object. Returns a (possibly empty) list of ConfigIssue."""

    def value(key):
        val = settings.get(key)
        return default_hash.get(key) if val is None else val

    errors = []
    for key in REQUIRED.get(command, []):
        if settings.get(key) is None:
            errors.append(ConfigIssue(key, "is required and has no default"))

    for key, allowed in CHOICES.items():
        val = settings.get(key)
        if val is not None and val not in allowed:
            errors.append(ConfigIssue(key, f"must be one of {sorted(allowed)}, got {val!r}"))

    for key in POSITIVE:
        val = value(key)
        if not _number(val) or val <= 0:
            errors.append(ConfigIssue(key, f"must be a positive number, got {val!r}"))

    for key in NON_NEGATIVE_INT:
        val = value(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            errors.append(ConfigIssue(key, f"must be a non-negative integer, got {val!r}"))

    cells = value("mesh.initial_cells_per_axis")
    if not isinstance(cells, int) or cells < 1:
        errors.append(ConfigIssue("mesh.initial_cells_per_axis", f"must be >= 1, got {cells!r}"))

    rtol = value("solver.rtol")
    if not _number(rtol) or not 0 < rtol < 1:
        errors.append(ConfigIssue("solver.rtol", f"must lie in (0, 1), got {rtol!r}"))

    beta = value("scf.beta")
    if not _number(beta) or not 0 < beta <= 1:
        errors.append(ConfigIssue("scf.beta", f"must lie in (0, 1], got {beta!r}"))

    if value("hartree.boundary_order") not in (0, 1):
        errors.append(ConfigIssue("hartree.boundary_order", "must be 0 or 1 for variational runs"))

    k = value("hessian.k")
    if not isinstance(k, int) or k < 1:
        errors.append(ConfigIssue("hessian.k", f"must be >= 1, got {k!r}"))

    alpha = settings.get("system.alpha")
    if alpha is not None and (not _number(alpha) or alpha < 0):
        errors.append(ConfigIssue("system.alpha", f"must be a non-negative number, got {alpha!r}"))

    bond = settings.get("system.bond_length")
    if bond is not None:
        if not _number(bond) or bond <= 0:
            errors.append(ConfigIssue("system.bond_length", f"must be positive, got {bond!r}"))
        elif bond / 2 + 1 >= value("mesh.half_extent"):
            errors.append(ConfigIssue("system.bond_length", "nuclei too close to the domain boundary"))

    for key in ("sweep.grid", "phase.alpha_grid", "phase.bond_grid", "compare.alphas"):
        grid = settings.get(key)
        if grid is None:
            continue
        if not isinstance(grid, list) or not grid or not all(_number(g) for g in grid):
            errors.append(ConfigIssue(key, "must be a non-empty list of numbers"))
        elif list(grid) != sorted(grid):
            errors.append(ConfigIssue(key, "must be sorted ascending"))

    for key in ("sweep.inits", "solve.inits", "phase.inits"):
        inits = settings.get(key)
        if inits is None:
            continue
        if not isinstance(inits, list) or not inits:
            errors.append(ConfigIssue(key, "must be a non-empty list of init kinds"))
            continue
        bad = [i for i in inits if i not in CHOICES["scf.init"]]
        if bad:
            errors.append(ConfigIssue(key, f"unknown init kinds {bad!r}"))

    return errors
