from argparse import ArgumentParser
from typing import Any

from h2xlda.commands.base import BaseCommand
from h2xlda.operations.tables import write_profile_csv
from h2xlda.soliton import F_energy, SolitonConfig, pin_oracle, profile_integrals, rescale_to_mass_one, solve_normalized_profile


class Command(BaseCommand):
    help = """Radial ground state of the large-alpha limit problem.
    Writes profile.csv (mass-one phi), profile_normalized.csv and soliton.json.
    With --pin the oracle constants are written to soliton_oracle.json for h2xlda/data/.
    """
    name = "soliton"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--pin", action="store_true", help="Write the oracle constants file.")

    def handle(self, **options: Any) -> int:
        self.setup(options)
        cfg = SolitonConfig.from_settings()
        with self.manifest.stage("shooting"):
            normalized = solve_normalized_profile(cfg)
        profile = rescale_to_mass_one(normalized)
        terms = profile_integrals(profile)

        write_profile_csv(self.output_path("profile.csv"), profile)
        write_profile_csv(self.output_path("profile_normalized.csv"), normalized)
        self.write_json(
            "soliton.json",
            {
                "u0": normalized.center_value,
                "M0": normalized.mass,
                "E": profile.E,
                "F": F_energy(profile),
                "mass": terms["mass"],
                "kinetic": terms["kinetic"],
                "exchange": terms["exchange"],
                "max_ode_residual": float(abs(normalized.ode_residual()).max()),
                "config": cfg.as_dict(),
            },
        )
        if options.get("pin"):
            path = self.output_path("soliton_oracle.json")
            pin_oracle(normalized, cfg, path)
            print(f"Copy {path} to h2xlda/data/ to pin it.")

        print(f"M0={normalized.mass:.10f} E={profile.E:.10f} F={F_energy(profile):.10f}")
        self.finish()
        return 0
