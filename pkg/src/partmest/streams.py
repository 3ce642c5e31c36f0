"""Counter-based random streams.

All randomness in the package flows through Philox substreams addressed by
(master seed, rep, lane, block): the seed keys the generator and the three
indices sit in the high words of the counter, so streams are independent and
reproducible no matter how work is scheduled across workers.
"""

import os

import numpy as np

ENV_WORKERS = "PARTMEST_WORKERS"


def philox_stream(seed, lane=0, block=0, rep=0):
    """Independent Generator for (seed, rep, lane, block)."""
    bg = np.random.Philox(key=np.uint64(seed),
                          counter=[0, np.uint64(rep), np.uint64(lane),
                                   np.uint64(block)])
    return np.random.Generator(bg)


def default_workers():
    """Worker count from the environment, else single-process."""
    raw = os.environ.get(ENV_WORKERS, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
