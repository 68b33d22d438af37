"""Run manifests and the output directory every command writes into."""
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from h2xlda import __version__
from h2xlda.defaults import defaults
from h2xlda.exceptions import ConfigError
from h2xlda.operations.tables import write_json

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
OUTPUT_ROOT_ENV = "H2XLDA_OUTPUT_ROOT"


class OutputDirectory:
    """A command's output directory. `path(name)` refuses anything that would
    resolve outside it."""

    def __init__(self, command, root=None):
        root = root or os.environ.get(OUTPUT_ROOT_ENV) or defaults("output.root")
        self.root = Path(root)
        self.directory = (self.root / command).resolve()
        self.written = []

    def create(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def path(self, name):
        target = (self.directory / name).resolve()
        if self.directory != target.parent and self.directory not in target.parents:
            raise ConfigError(f"Refusing to write {name!r} outside {self.directory}")
        self.written.append(target.name)
        return target


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    manifest_version: int = MANIFEST_VERSION
    meshes: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "ok"

    def add_mesh(self, mesh, delta=None, R=None):
        entry = {"hash": mesh.hash, "n_vertices": mesh.n_vertices, "n_cells": mesh.n_cells, "delta": delta, "R": R}
        if entry not in self.meshes:
            self.meshes.append(entry)
        return entry

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    def as_dict(self):
        return {
            "manifest_version": self.manifest_version,
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "meshes": self.meshes,
            "timings": self.timings,
            "outputs": sorted(self.outputs),
            "status": self.status,
        }

    def write(self, output: OutputDirectory):
        path = output.path(MANIFEST_NAME)
        write_json(path, self.as_dict())
        log.info(f"Wrote run manifest {path}")
        return path
