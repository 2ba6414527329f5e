"""Deterministic randomness for the whole toolkit.

All random draws flow from Philox, a counter-based generator: a stream is
fully determined by (seed, stream id, counter), so any point in a run can be
reproduced without replaying the draws before it.  Training resumption relies
on this: step k uses counter k, no matter how the process got to step k.
"""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Purpose tags keeping independent random streams from colliding."""

    INIT = 0        # parameter initialization, counter = net index
    WORLD = 1       # synthetic world construction
    BATCH = 2       # mini-batch index sampling, counter = global step
    NOISE_D = 3     # generator noise inside discriminator updates
    NOISE_G = 4     # generator noise inside the joint update
    PAIRING = 5     # positive selection for the instance loss
    RANK_NEG = 6    # negative descriptor draws for ranking losses
    CLASSIFIER = 7  # final classifier fitting (shuffles, synthesis noise)
    GENERIC = 8     # one-off consumers (tests, ad hoc sampling)


def stream(seed: int, stream_id: int, counter: int = 0) -> np.random.Generator:
    """Return a fresh generator for (seed, stream_id, counter).

    The same triple always yields the same draw sequence, on any platform.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream_id)], dtype=np.uint64)
    ctr = np.array([np.uint64(counter & 0xFFFFFFFFFFFFFFFF), 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=ctr, key=key))
