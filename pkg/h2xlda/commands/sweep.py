import logging
from argparse import ArgumentParser
from typing import Any

from h2xlda.commands.base import BaseCommand
from h2xlda.commands.solve import _exit_code
from h2xlda.continuation import Sweeper, detect_bifurcation
from h2xlda.defaults import defaults
from h2xlda.operations.tables import write_branch_csv

log = logging.getLogger(__name__)


class Command(BaseCommand):
    help = """Sweep one parameter with the other fixed (sweep.fixed, sweep.value, sweep.grid),
    following every init in sweep.inits with warm starts. Writes branches.csv and summary.json.
    """
    name = "sweep"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--workers", type=int, default=None, help="Worker processes (one per init chain).")
        parser.add_argument("--hessian", action="store_true", default=None, help="Attach Hessian reports to converged points.")

    def handle(self, **options: Any) -> int:
        self.setup(options)
        sweeper = Sweeper(
            hessian=options.get("hessian"),
            workers=options.get("workers"),
            grid_units=defaults("sweep.grid_units"),
        )
        with self.manifest.stage("sweep"):
            points = sweeper.sweep(defaults("sweep.fixed"), defaults("sweep.value"), defaults("sweep.grid"), defaults("sweep.inits"))

        self.manifest.meshes.extend(sweeper.meshes.values())

        critical, detector = detect_bifurcation(points, with_detector=True)
        write_branch_csv(self.output_path("branches.csv"), points)
        self.write_json(
            "summary.json",
            {
                "points": [p.as_dict() for p in points],
                "critical": critical,
                "detector": detector,
                "errors": sweeper.errors,
                "summaries": sweeper.summaries,
            },
        )
        for msg in sweeper.summaries:
            print(msg)
        for msg in sweeper.errors:
            print(f"- {msg}")
        if critical is not None:
            print(f"Symmetry breaking at {critical:.4f} ({detector} detector)")

        code = _exit_code(points)
        self.finish("ok" if code == 0 else "failed")
        return code
