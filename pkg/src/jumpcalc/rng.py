"""Counter-based random streams keyed by (master seed, path index, role).

Every Monte Carlo path owns its own Philox stream, so a path's draws do not
depend on how paths are batched or distributed over workers.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def role_id(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def stream(master_seed: int, path_index: int, role: str) -> np.random.Generator:
    """Independent generator for one (path, role) pair.

    The path index and role occupy the high counter words; Philox increments
    from the low word, so streams never overlap for fewer than 2**128 draws.
    """
    if master_seed < 0 or path_index < 0:
        raise ValueError("seeds and path indices must be non-negative")
    bitgen = np.random.Philox(
        key=master_seed & _MASK64,
        counter=[0, 0, role_id(role), path_index & _MASK64],
    )
    return np.random.Generator(bitgen)
