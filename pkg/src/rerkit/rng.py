"""Named random sub-streams derived from one root seed.

Each stage asks for ``substream(seed, "train", class_id)`` and so on; the
stream depends only on the root seed and the name path, so adding a stage
never perturbs the draws of another.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def substream(seed: int, *names) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(n) for n in names]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
