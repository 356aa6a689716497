"""Named sub-seeds derived from one run seed."""
import zlib

import numpy as np


def sub_seed(seed, name):
    """Stable 32-bit seed for component ``name`` (e.g. "data", "init", "shuffle")."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])
