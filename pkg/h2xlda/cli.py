"""`h2xlda` executable: argument parsing, settings, logging and exit codes."""
import argparse
import copy
import importlib
import logging
import logging.config
import sys

from h2xlda import __version__
from h2xlda.check import check_settings
from h2xlda.commands import COMMANDS
from h2xlda.conf import load_settings, settings
from h2xlda.defaults import LOGGING
from h2xlda.exceptions import ConfigError, H2XLDAError

log = logging.getLogger(__name__)


def load_command(name):
    module = importlib.import_module(f"h2xlda.commands.{name}")
    return module.Command()


def build_parser():
    parser = argparse.ArgumentParser(prog="h2xlda", description="Stationary states of the spin-polarised XLDA functional for H2.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = load_command(name)
        sub = subparsers.add_parser(name, help=command.help.strip().splitlines()[0], description=command.help)
        sub.add_argument("-c", "--config", dest="config", default=None, help="YAML config file (or a run manifest).")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override a config key.")
        sub.add_argument("-o", "--output", dest="output", default=None, help="Output root (default: $H2XLDA_OUTPUT_ROOT or output.root).")
        sub.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
        command.add_arguments(sub)
    return parser


def configure_logging(verbose=False):
    config = copy.deepcopy(LOGGING)
    if verbose:
        config["loggers"][""]["level"] = "DEBUG"
        config["loggers"]["h2xlda"]["level"] = "DEBUG"
    logging.config.dictConfig(config)


def main(argv=None):
    parser = build_parser()
    options = vars(parser.parse_args(argv))
    configure_logging(options.pop("verbose"))
    name = options.pop("command")

    try:
        run = load_settings(options.pop("config"), options.pop("overrides"))
        settings.configure(run.as_dict())
        issues = check_settings(settings, name)
        if issues:
            for issue in issues:
                print(f"config error: {issue}", file=sys.stderr)
            return ConfigError.exit_code
        return load_command(name).handle(**options)
    except H2XLDAError as e:
        log.error(f"{name} failed: {e}")
        return e.exit_code
    except ValueError as e:
        # parameter dataclasses reject bad values in __post_init__
        log.error(f"{name}: invalid configuration: {e}")
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
