"""Distributed statistical model checking of priced timed automata networks."""

from pathlib import Path

__version__ = "0.1.0"


def models_dir() -> Path:
    """Directory holding the bundled example models."""
    return Path(__file__).parent / "models"
