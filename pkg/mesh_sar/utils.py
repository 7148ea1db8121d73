import hashlib
import json
from importlib import metadata

import numpy as np

import mesh_sar


def seed_stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Returns a counter-based random generator keyed by (seed, purpose, index).

    Streams with different keys are independent, so parallel workers can draw
    from their own stream and still reproduce a single-threaded run.

    Args:
        seed: Run seed from the config.
        purpose: Short label of what the numbers are used for (e.g. "vae-noise").
        index: Sample, step or worker index within that purpose.

    Returns:
        np.random.Generator: Philox generator for this key.

    Example:
        >>> rng = seed_stream(7, "sample", 3)
        >>> rng.standard_normal(2).shape
        (2,)
    """
    digest = hashlib.sha256(f"{int(seed)}:{purpose}:{int(index)}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def get_versions() -> dict[str, str]:
    """Versions of mesh_sar and its numeric stack, recorded in run manifests."""
    versions = {"mesh_sar": mesh_sar.__version__}
    for package in ("numpy", "scipy", "pandas"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def stable_hash(payload: dict) -> str:
    """SHA-256 of the canonical JSON encoding of ``payload``."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
