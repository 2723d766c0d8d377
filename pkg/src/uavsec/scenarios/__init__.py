"""Shipped scenario library (JSON files)."""

from importlib import resources


def path(name: str):
    """Filesystem path of a shipped scenario, e.g. ``path("hover")``."""
    if not name.endswith(".json"):
        name += ".json"
    return resources.files(__package__).joinpath(name)


def names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).iterdir() if p.name.endswith(".json"))
