import zlib

import numpy as np


def stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def make_stream(seed, name="default"):
    """Named, seedable generator over the counter-based Philox bit generator.

    Two streams with the same seed but different names are independent; the
    same (seed, name) pair always reproduces the same draws.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=(stream_key(name),))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(rng):
    return int(rng.integers(0, 2 ** 31 - 1))
