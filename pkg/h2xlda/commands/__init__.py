"""Subcommands of the `h2xlda` executable, one module per command."""

COMMANDS = ["solve", "sweep", "phase", "hessian", "soliton", "compare", "replay"]
