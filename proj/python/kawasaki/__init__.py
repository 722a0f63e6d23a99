"""Python front end to the Kawasaki multiscale verification core."""

import json

from ._core import (
    ConfigError,
    NumericalError,
    PotentialSpec,
    PreconditionError,
    bspline_eval,
    defect,
    fit_rate,
    free_energy,
    gram_matrix,
    hneg1_norm,
    l2_norm,
    project,
    simulate,
    version,
)
from . import _core

__all__ = [
    "ConfigError",
    "NumericalError",
    "PotentialSpec",
    "PreconditionError",
    "bspline_eval",
    "canonical_config",
    "config_hash",
    "defect",
    "fit_rate",
    "free_energy",
    "gram_matrix",
    "hneg1_norm",
    "l2_norm",
    "project",
    "run",
    "simulate",
    "version",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def run(config):
    """Run an experiment from a config dict (or JSON text) and return the report as a dict."""
    return json.loads(_core._run_json(_dump(config)))


def config_hash(config):
    return _core._config_hash_json(_dump(config))


def canonical_config(config):
    return json.loads(_core._canonical_config_json(_dump(config)))
