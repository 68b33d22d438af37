# If a documented h2xlda option is NOT configured in the run settings, use these values.
# Keys are dotted paths into the YAML configuration tree.

hash = {
    # mesh
    "mesh.half_extent": 25.0,
    "mesh.initial_cells_per_axis": 2,
    "mesh.local_refine_rounds": 8,
    "mesh.global_refine_rounds": 2,
    "mesh.h_min_floor": 1e-4,
    "mesh.max_vertices": 2_000_000,
    "mesh.volume_floor": 1e-18,
    # potential
    "potential.delta": None,  # None: half the minimum diameter at the nuclei, clamped below
    "potential.delta_min": 1e-4,
    "potential.delta_max": 1e-2,
    # linear solver
    "solver.rtol": 1e-8,
    "solver.max_iterations": 10000,
    "solver.preconditioner": "multigrid",
    "solver.smoother": "sgs",
    "solver.jacobi_weight": 0.5,
    "solver.max_levels": 25,
    # hartree
    "hartree.boundary_order": 1,
    "hartree.center": [0.0, 0.0, 0.0],
    # scf
    "scf.tol_energy": 1e-6,
    "scf.tol_residual": None,  # None: 10 * tol_energy
    "scf.max_iterations": 200,
    "scf.beta": 0.5,
    "scf.energy_update": "greens_correction",
    "scf.init": "delocalized",
    "scf.gaussian_zeta": 0.6,
    "scf.eps_floor": 0.01,
    "scf.restricted": False,
    "scf.oscillation_limit": 10,
    # hessian
    "hessian.k": 6,
    "hessian.tol_eig": 1e-4,
    "hessian.max_iterations": 400,
    "hessian.variant": "full",
    "hessian.method": "lobpcg",
    "hessian.residual_threshold": 1e-3,
    "hessian.solver_rtol": 1e-12,
    "hessian.seed": 1234,
    # continuation
    "sweep.s_tol": 1e-3,
    "sweep.d_tol": 0.2,
    "sweep.dedupe_tol": 1e-4,
    "sweep.inits": ["delocalized", "antiferro"],
    "sweep.hessian": False,
    "sweep.workers": 1,
    "sweep.grid_units": "bond_length",
    "solve.inits": ["delocalized", "antiferro"],
    "solve.restricted_reference": True,
    "compare.init": "antiferro",
    "phase.inits": ["delocalized", "antiferro"],
    "phase.hessian": True,
    # soliton
    "soliton.r_max": 20.0,
    "soliton.step": 1e-3,
    "soliton.bracket": [1.0, 8.0],
    "soliton.tolerance": 1e-13,
    "soliton.box_half_width": 6.0,
    "soliton.box_points": 49,
    "soliton.extra_local_rounds": 4,
    # output
    "output.root": "h2xlda-output",
    "output.vtk": True,
}

# These intentionally have no defaults (a run MUST set a value if its command uses them):
# system.alpha
# system.bond_length
# sweep.fixed, sweep.value, sweep.grid
# phase.alpha_grid, phase.bond_grid
# compare.alphas, compare.bond_length

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "standard": {"format": "%(asctime)s %(levelname)-7s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "standard",
        },
    },
    "loggers": {
        "": {"handlers": ["console"], "level": "INFO"},
        "h2xlda": {"level": "INFO", "propagate": True},
        "numba": {"level": "WARNING"},
    },
}


def defaults(key: str):
    """Try to get a setting from the active run settings.
    If empty or doesn't exist, fall back to a value from defaults hash."""
    from h2xlda.conf import settings

    val = settings.get(key)
    if val is None:
        val = hash.get(key)
    return val
