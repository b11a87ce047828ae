"""Shipped fixture files (site graph, tasks, raw trajectory corpus, pipeline config)."""

from pathlib import Path

FIXTURE_DIR = Path(__file__).parent


def fixture_path(name: str) -> Path:
    path = FIXTURE_DIR / name
    if not path.exists():
        raise FileNotFoundError(path)
    return path
