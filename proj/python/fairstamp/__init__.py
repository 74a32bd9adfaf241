"""Bias editing with fairness stamps on a small transformer.

The heavy lifting lives in the compiled ``_core`` module. Pipeline stages take
a config dict with the same layout as the command-line tool's JSON file.
"""

import json

from ._core import (
    FairstampError,
    Model,
    ModelConfig,
    Stamp,
    StampedModel,
    icat,
    kl_divergence,
    train_base,
)

__all__ = [
    "FairstampError",
    "Model",
    "ModelConfig",
    "Stamp",
    "StampedModel",
    "default_config",
    "icat",
    "kl_divergence",
    "run",
    "train_base",
]

COMMANDS = ("gen", "train-base", "trace", "edit", "eval", "continual", "all")


def default_config():
    from . import _core

    return json.loads(_core._default_config())


def run(command, config):
    """Run one pipeline stage. ``config`` is a dict; missing keys take defaults.

    ``trace`` returns the location report and ``eval`` the metric report of
    the edited model, both as dicts. Other stages return None.
    """
    from . import _core

    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    out = _core._run(command, json.dumps(config))
    return json.loads(out) if out else None
