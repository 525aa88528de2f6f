"""Deterministic seed derivation.

Every random draw in the project flows from one root seed. Subsystems get
independent streams by deriving child seeds from (root, purpose, *parts),
so re-running any stage with the same root reproduces it bit for bit.
"""

import hashlib


def derive_seed(root: int, purpose: str, *parts) -> int:
    """Derive a 64-bit child seed from a root seed and a labelled path."""
    key = ":".join([str(int(root)), purpose] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
