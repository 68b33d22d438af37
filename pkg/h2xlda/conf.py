"""Run settings: a YAML key-value tree addressed by dotted keys.

The CLI configures the module-level `settings` object; library code reads
values through `h2xlda.defaults.defaults(key)`, which falls back to the
defaults table for anything the run did not set.
"""
import copy
import json
import logging
from pathlib import Path

import yaml

from h2xlda.exceptions import ConfigError

log = logging.getLogger(__name__)


class Settings:
    def __init__(self, tree=None):
        self._tree = {}
        if tree:
            self.configure(tree)

    def configure(self, tree):
        if not isinstance(tree, dict):
            raise ConfigError(f"Configuration root must be a mapping, got {type(tree).__name__}")
        self._tree = copy.deepcopy(tree)

    def reset(self):
        self._tree = {}

    def get(self, key, default=None):
        node = self._tree
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key, value):
        parts = key.split(".")
        node = self._tree
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"Cannot set {key!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = value

    def __contains__(self, key):
        return self.get(key) is not None

    def as_dict(self):
        return copy.deepcopy(self._tree)

    def resolved(self):
        """The run tree merged over the defaults table, as a nested dict."""
        from h2xlda.defaults import hash as default_hash

        merged = Settings()
        for key, value in sorted(default_hash.items()):
            merged.set(key, copy.deepcopy(value))
        for key, value in flatten(self._tree).items():
            merged.set(key, copy.deepcopy(value))
        return merged.as_dict()


def flatten(tree, prefix=""):
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            flat.update(flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _coerce(value):
    """PyYAML resolves `1e-8` (no dot) to a string; read such scalars as floats."""
    if isinstance(value, dict):
        return {k: _coerce(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_coerce(v) for v in value]
    if isinstance(value, str) and any(ch.isdigit() for ch in value):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def load_tree(path):
    """Read a YAML config file. A run manifest (JSON) is accepted too: its
    `config` section is the tree that produced it."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as f:
            # JSON goes through json: PyYAML reads 1e-08 as a string
            tree = json.load(f) if path.suffix == ".json" else yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file {path} does not exist")
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"Config file {path} is not valid: {e}")

    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"Config file {path} must hold a mapping at the top level")
    if "manifest_version" in tree:
        log.info(f"Replaying run manifest {path}")
        tree = tree.get("config") or {}
    return _coerce(tree)


def parse_override(text):
    """`scf.beta=0.3` -> ("scf.beta", 0.3). Values are parsed as YAML scalars."""
    if "=" not in text:
        raise ConfigError(f"Override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"Override {text!r} has an empty key")
    try:
        value = _coerce(yaml.safe_load(raw))
    except yaml.YAMLError as e:
        raise ConfigError(f"Override {text!r}: {e}")
    return key, value


def load_settings(path=None, overrides=()):
    tree = load_tree(path) if path else {}
    run = Settings(tree)
    for text in overrides:
        key, value = parse_override(text)
        run.set(key, value)
    return run


settings = Settings()
