import logging
from typing import Any

from h2xlda.commands.base import BaseCommand
from h2xlda.defaults import defaults
from h2xlda.scf import SCFConfig, build_system, scf_solve
from h2xlda.soliton import compare_rescaled, rescale_to_mass_one, solve_normalized_profile

log = logging.getLogger(__name__)


class Command(BaseCommand):
    help = """Compare rescaled large-alpha orbitals with the radial profile for each alpha in compare.alphas
    at compare.bond_length. Writes rescale.json.
    """
    name = "compare"

    def handle(self, **options: Any) -> int:
        self.setup(options)
        alphas = [float(a) for a in defaults("compare.alphas")]
        R = float(defaults("compare.bond_length")) / 2.0

        with self.manifest.stage("shooting"):
            profile = rescale_to_mass_one(solve_normalized_profile())

        base = build_system(R, alphas[0], extra_local_rounds=int(defaults("soliton.extra_local_rounds")))
        self.manifest.add_mesh(base.mesh, delta=base.delta, R=R)
        reports, failures = [], []
        state = None
        for alpha in alphas:
            system = base.with_alpha(alpha)
            with self.manifest.stage(f"scf_alpha_{alpha}"):
                cfg = SCFConfig.from_settings(init=defaults("compare.init"))
                state, report = scf_solve(system, cfg, initial=state)
            if not report.converged:
                failures.append(alpha)
                log.warning(f"alpha={alpha}: SCF did not converge, comparison skipped")
                state = None
                continue
            result = compare_rescaled(system, state, profile)
            reports.append(result.as_dict())
            print(f"alpha={alpha}: H1 {result.h1_distances}, E/alpha^2={result.energy_ratio:.6f} (2F={result.reference_ratio:.6f})")

        self.write_json("rescale.json", {"bond_length": 2 * R, "reports": reports, "unconverged": failures})
        self.finish("ok" if reports else "failed")
        return 0 if reports else 3
