import subprocess
from functools import lru_cache
from importlib import metadata
from pathlib import Path

# Bumped whenever a JSON/CSV output layout changes.
SPEC_VERSION = "1.0"


@lru_cache(maxsize=None)
def version_string() -> str:
    """``git describe`` of the source checkout if available, else the package version."""
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    if out.returncode != 0 or not out.stdout.strip():
        return base
    return f"{base}+g{out.stdout.strip()}"
