import logging
from argparse import ArgumentParser
from typing import Any

from h2xlda.commands.base import BaseCommand, system_parameters
from h2xlda.hessian import HessianConfig, smallest_eigenpairs
from h2xlda.operations.checkpoint import load_state
from h2xlda.operators import transfer_field
from h2xlda.scf import OrbitalState, SCFConfig, build_system, scf_solve

log = logging.getLogger(__name__)


class Command(BaseCommand):
    help = """Smallest constrained Hessian eigenvalues of a converged state and its classification.
    The state comes from --state (a solve checkpoint) or from an SCF run at system.alpha, system.bond_length.
    """
    name = "hessian"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--state", dest="state", default=None, help="Checkpoint written by `solve`.")
        parser.add_argument(
            "--compare-variants",
            dest="compare_variants",
            action="store_true",
            help="Also run the cross-spin-only variant and log any disagreement in classification.",
        )

    def handle(self, **options: Any) -> int:
        self.setup(options)
        alpha, R = system_parameters()
        system = build_system(R, alpha)
        self.manifest.add_mesh(system.mesh, delta=system.delta, R=R)

        if options.get("state"):
            state, mesh = load_state(options["state"])
            if mesh.hash != system.mesh.hash:
                log.info("checkpoint mesh differs from the configured mesh, interpolating")
                state = OrbitalState(
                    system.normalize(transfer_field(mesh, state.c_plus, system.mesh)),
                    system.normalize(transfer_field(mesh, state.c_minus, system.mesh)),
                    state.eps_plus,
                    state.eps_minus,
                    alpha,
                    R,
                )
            with self.manifest.stage("scf"):
                state, report = scf_solve(system, initial=state)
        else:
            with self.manifest.stage("scf"):
                state, report = scf_solve(system, SCFConfig.from_settings())
        if not report.converged:
            print("SCF did not converge; the Hessian needs a stationary state.")
            self.write_json("hessian.json", {"scf": report.as_dict(), "hessian": None})
            self.finish("failed")
            return 3

        cfg = HessianConfig.from_settings()
        with self.manifest.stage("hessian"):
            result = smallest_eigenpairs(system, state, cfg=cfg)
        data = {"alpha": alpha, "R": R, "bond_length": 2 * R, "scf": report.as_dict(), "hessian": result.as_dict()}

        if options.get("compare_variants"):
            other = "cross_spin" if cfg.variant == "full" else "full"
            with self.manifest.stage("hessian_variant"):
                alt = smallest_eigenpairs(system, state, cfg=HessianConfig.from_settings(variant=other))
            data["variant_" + other] = alt.as_dict()
            if alt.classification != result.classification:
                log.warning(
                    "Hessian variants disagree: %s gives %s, %s gives %s; the %s result stands",
                    cfg.variant, result.classification, other, alt.classification, cfg.variant,
                )

        self.write_json("hessian.json", data)
        print(f"{result.classification}: " + ", ".join(f"{e:.6f}" for e in result.eigenvalues))
        self.finish("ok" if result.converged else "failed")
        return 0 if result.converged else 3
