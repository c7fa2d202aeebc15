"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
``(stream, seed)`` and whose counter is positioned by a block index. Events are
grouped in fixed-size blocks, so the numbers an event sees depend only on
``(seed, stream, event_index)`` and never on evaluation order or on how many
workers share the job.
"""

import numpy as np

MASK64 = (1 << 64) - 1
BLOCK_SIZE = 1024

# stream identifiers; never renumber, outputs depend on them
SELECT = 1
THETA = 2
THETA_NODES = 3
HORIZON = 4


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Generator for block ``block`` of stream ``stream`` under ``seed``."""
    seed, stream, block = int(seed), int(stream), int(block)
    if seed < 0 or block < 0:
        raise ValueError("seed and block must be non-negative")
    key = ((stream & MASK64) << 64) | (seed & MASK64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, block & MASK64, 0]))


def block_of(event_index: int) -> tuple[int, int]:
    """Return ``(block, offset)`` locating an event inside its block."""
    return divmod(int(event_index), BLOCK_SIZE)
