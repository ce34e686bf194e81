"""Order-independent seed derivation."""
from __future__ import annotations

import hashlib
import json


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed from ``master`` and a tuple of labels/indices (sha256 of their JSON form)."""
    payload = json.dumps([int(master), *parts], separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big") >> 1
