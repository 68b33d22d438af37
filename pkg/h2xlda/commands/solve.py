import logging
from typing import Any

from h2xlda.commands.base import BaseCommand, system_parameters
from h2xlda.continuation import Sweeper
from h2xlda.defaults import defaults
from h2xlda.operations.checkpoint import save_mesh, save_state
from h2xlda.operations.fields import state_fields, write_matrix_market, write_vtk
from h2xlda.operations.tables import write_branch_csv
from h2xlda.scf import SCFConfig, scf_solve, total_energy

log = logging.getLogger(__name__)


class Command(BaseCommand):
    help = """Run the SCF iteration at one (alpha, bond length) from every init in solve.inits.
    States that converge to the same solution are reported once.
    Writes a checkpoint and field dump per distinct state, branches.csv and summary.json.
    """
    name = "solve"

    def add_arguments(self, parser):
        parser.add_argument(
            "--export-matrices",
            action="store_true",
            help="Also write the mesh (mesh.npz) and the stiffness, mass and nuclear matrices in Matrix Market format.",
        )

    def handle(self, **options: Any) -> int:
        self.setup(options)
        alpha, R = system_parameters()
        sweeper = Sweeper(hessian=False, workers=1)

        with self.manifest.stage("scf"):
            points = sweeper.sweep("R", R, [alpha], list(defaults("solve.inits")))

        system = sweeper.last_system
        self.manifest.meshes.extend(sweeper.meshes.values())

        if options.get("export_matrices"):
            save_mesh(self.output_path("mesh.npz"), system.mesh)
            for name, operator in (("stiffness", system.T), ("mass", system.S), ("nuclear", system.M_nuc)):
                write_matrix_market(self.output_path(f"{name}.mtx"), operator, comment=f"delta={system.delta!r}")

        states = []
        for point in points:
            entry = point.as_dict()
            if point.state is not None:
                entry["checkpoint"] = self.output_path(f"state_{point.init}.npz").name
                save_state(self.output.path(entry["checkpoint"]), point.state, system.mesh, delta=system.delta)
                if defaults("output.vtk"):
                    vtk = self.output_path(f"fields_{point.init}.vtk")
                    write_vtk(vtk, system.mesh, state_fields(system, point.state))
            states.append(entry)

        summary = {
            "alpha": alpha,
            "R": R,
            "bond_length": 2 * R,
            "delta": system.delta,
            "nuclear_repulsion": 1.0 / (2.0 * R),
            "distinct_states": len(points),
            "states": states,
            "errors": sweeper.errors,
            "summaries": sweeper.summaries,
        }
        if defaults("solve.restricted_reference"):
            with self.manifest.stage("restricted"):
                state, report = scf_solve(system, SCFConfig.from_settings(restricted=True, init="delocalized"))
            summary["restricted"] = {"energy": total_energy(system, state).as_dict(), "scf": report.as_dict()}

        write_branch_csv(self.output_path("branches.csv"), points)
        self.write_json("summary.json", summary)

        for point in points:
            print(f"{point.init:>12} -> {point.branch:<12} E={point.E_total:.8f} converged={point.converged}")
        for msg in sweeper.summaries:
            print(msg)

        code = _exit_code(points)
        self.finish("ok" if code == 0 else "failed")
        return code


def _exit_code(points):
    if any(p.converged for p in points):
        return 0
    if all(p.branch == "failed" for p in points):
        return 4
    return 3
