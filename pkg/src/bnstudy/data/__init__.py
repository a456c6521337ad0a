"""Bundled network definitions."""

from importlib import resources
from pathlib import Path


def asia_path() -> Path:
    """Location of the bundled 7-variable lung-cancer screening network."""
    return Path(resources.files(__package__) / "asia.json")
