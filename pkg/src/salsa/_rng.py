import hashlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(part).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator named by ``(seed, *keys)``.

    Streams depend only on their name, never on how many draws other
    streams have made, so results do not depend on evaluation order.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
