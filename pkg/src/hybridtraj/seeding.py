"""Deterministic seed derivation.

A single run seed fans out into per-purpose streams (data generation,
parameter init, rollouts, selection, evaluation runs) by stable hashing,
so repeated runs and the multi-run averaging protocol are reproducible.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63 - 1)
