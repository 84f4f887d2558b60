"""Top-down seed derivation so every pipeline stage is independently
reproducible from one master seed."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named stage of a seeded pipeline."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
