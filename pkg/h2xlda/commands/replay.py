from argparse import ArgumentParser
from typing import Any

from h2xlda.commands.base import BaseCommand
from h2xlda.conf import load_tree, settings
from h2xlda.exceptions import ConfigError


class Command(BaseCommand):
    help = """Re-run the command recorded in a run manifest with the exact configuration it echoes.
    Outputs go to the usual directory of that command under the output root.
    """
    name = "replay"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("manifest", help="manifest.json written by an earlier run.")

    def handle(self, **options: Any) -> int:
        from h2xlda.check import check_settings
        from h2xlda.cli import load_command

        tree = load_tree(options["manifest"])
        command = tree.pop("command", None)
        recorded = tree.pop("options", None) or {}
        if command is None or command == self.name:
            raise ConfigError(f"{options['manifest']} does not record a replayable command")
        settings.configure(tree)
        issues = check_settings(settings, command)
        if issues:
            raise ConfigError("; ".join(str(i) for i in issues))
        return load_command(command).handle(**{**recorded, "output": options.get("output"), "manifest": None})
