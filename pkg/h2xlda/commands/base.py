import logging
from argparse import ArgumentParser
from typing import Any

from h2xlda.conf import settings
from h2xlda.defaults import defaults
from h2xlda.exceptions import ConfigError
from h2xlda.operations.manifest import OutputDirectory, RunManifest
from h2xlda.operations.tables import write_json

log = logging.getLogger(__name__)


class BaseCommand:
    """A subcommand. `handle` returns the process exit code."""

    help = ""
    name = None

    def add_arguments(self, parser: ArgumentParser) -> None:
        pass

    def handle(self, **options: Any) -> int:
        raise NotImplementedError

    def setup(self, options):
        self.output = OutputDirectory(self.name, root=options.get("output")).create()
        # command-line flags ride along so `replay` can hand them back
        recorded = {k: v for k, v in options.items() if k not in ("output", "manifest")}
        config = {**settings.resolved(), "command": self.name, "options": recorded}
        self.manifest = RunManifest(command=self.name, config=config)
        log.info(f"{self.name}: writing into {self.output.directory}")

    def write_json(self, name, data):
        path = self.output.path(name)
        write_json(path, data)
        self.manifest.outputs.append(path.name)
        return path

    def output_path(self, name):
        path = self.output.path(name)
        self.manifest.outputs.append(path.name)
        return path

    def finish(self, status="ok"):
        self.manifest.status = status
        self.manifest.write(self.output)


def system_parameters():
    """(alpha, R) from system.alpha and system.bond_length."""
    alpha = defaults("system.alpha")
    bond = defaults("system.bond_length")
    if alpha is None or bond is None:
        raise ConfigError("system.alpha and system.bond_length are required")
    return float(alpha), float(bond) / 2.0
