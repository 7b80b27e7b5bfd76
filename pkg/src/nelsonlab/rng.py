"""Counter-based random-number streams.

Every trajectory owns an independent Philox stream keyed by
(master seed, trajectory index), so ensembles are bit-reproducible
regardless of chunking, thread count or execution order.

Draw-order contract per stream: initial state first, then noise
phases (colored driving only), then Wiener increments in step order.
"""

import numpy as np


def trajectory_stream(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for one trajectory of one ensemble."""
    key = np.array([master_seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
