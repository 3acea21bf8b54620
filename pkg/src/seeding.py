"""
Seed derivation for reproducible, order-independent randomness.

Every random draw in the loop comes from a numpy Generator seeded with
derive_seed(base, round_index, stage, index). The mix packs the tuple
as little-endian fields and takes the first 8 bytes of its BLAKE2b
digest, so a seed depends only on its own coordinates and never on how
many draws happened before it or on which worker computes it.
"""

import hashlib
import struct

MASK64 = (1 << 64) - 1


def derive_seed(base: int, round_index: int, stage: str, index: int = 0) -> int:
    """64-bit seed for one (round, stage, item) coordinate"""
    payload = struct.pack("<QqQ", base & MASK64, round_index, index & MASK64) + stage.encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")

