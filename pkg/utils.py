"""
CryptoTVP - Utility Functions
Seed derivation, configuration hashing, random-generator construction
and small formatting helpers shared by the services and the CLI.
"""

import hashlib
import json

import numpy as np

SEED_RULE = "sha256('{master_seed}:{window_index}:{model_tag}')[:8] as big-endian uint64"


def derive_window_seed(master_seed, window_index, model_tag):
    """
    Derive the seed of one (model, window) job.
    Combines master seed, window index and model tag so every job owns an
    independent stream regardless of execution order.
    """
    message = f"{master_seed}:{window_index}:{model_tag}".encode()
    return int.from_bytes(hashlib.sha256(message).digest()[:8], "big")


def make_generator(seed):
    """Seeded PCG64 generator."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn_generators(seed, count):
    """Independent child generators of one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def stable_json_dumps(obj):
    """JSON with sorted keys and fixed separators, so equal objects hash equally."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def hash_config(config_dict):
    """SHA-256 of a configuration mapping."""
    return hashlib.sha256(stable_json_dumps(config_dict).encode()).hexdigest()


def format_elapsed(seconds):
    """Format a duration into a short human-readable string."""
    total_seconds = int(round(seconds))
    if total_seconds <= 0:
        return "under a second"

    hours = total_seconds // 3600
    minutes = (total_seconds % 3600) // 60
    secs = total_seconds % 60

    parts = []
    if hours > 0:
        parts.append(f"{hours}h")
    if minutes > 0:
        parts.append(f"{minutes}m")
    if secs > 0 and hours == 0:
        parts.append(f"{secs}s")
    return " ".join(parts)
