"""Bundled benchmark problems and their published reference values."""

from __future__ import annotations

import json
from importlib import resources

NAMES = (
    "chattering",
    "double_integrator",
    "switched_lqr",
    "double_tank",
    "quadrotor",
)


def path(name: str) -> str:
    """Filesystem path of a bundled problem file."""
    if name not in NAMES:
        raise KeyError(f"unknown benchmark {name!r}; available: {NAMES}")
    return str(resources.files(__package__).joinpath(f"{name}.prob"))


def load(name: str):
    from ..probfile import load_problem

    return load_problem(path(name))


def expected(name: str) -> dict:
    """Reference hierarchy values (bounds, sizes, masses) where published."""
    text = resources.files(__package__).joinpath("expected.json").read_text()
    return json.loads(text)[name]
