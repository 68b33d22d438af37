from argparse import ArgumentParser
from typing import Any

from h2xlda.commands.base import BaseCommand
from h2xlda.continuation import phase_diagram
from h2xlda.defaults import defaults
from h2xlda.operations.tables import write_branch_csv, write_phase


class Command(BaseCommand):
    help = """Symmetry-breaking bond length for every alpha in phase.alpha_grid over phase.bond_grid.
    Writes phase.csv, the boundary polyline in phase.json, and all sampled branches in branches.csv.
    """
    name = "phase"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--workers", type=int, default=None, help="Worker processes (one per alpha column).")

    def handle(self, **options: Any) -> int:
        self.setup(options)
        with self.manifest.stage("phase"):
            diagram = phase_diagram(
                defaults("phase.alpha_grid"),
                defaults("phase.bond_grid"),
                inits=defaults("phase.inits"),
                grid_units="bond_length",
                workers=options.get("workers"),
            )

        write_phase(self.output_path("phase.csv"), self.output_path("phase.json"), diagram)
        write_branch_csv(self.output_path("branches.csv"), diagram.samples)
        for row in diagram.as_rows():
            print(f"alpha={row['alpha']}: {row['status']} {row['critical_bond_length']} ({row['detector']})")

        failed = all(p.branch == "failed" for p in diagram.samples)
        self.finish("failed" if failed else "ok")
        return 4 if failed else 0
