"""Named deterministic RNG sub-streams.

All randomness in an experiment flows from one integer seed; each consumer
(field init, sampler jitter, ray batches, ...) draws from its own named
sub-stream so adding a consumer never perturbs the others.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {
    "field-init": 0,
    "sampler": 1,
    "batch": 2,
    "init-solve": 3,
    "stats": 4,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=(_STREAMS[name],)))


def substream_int(seed: int, name: str) -> int:
    """A stable 63-bit integer key derived from the named sub-stream."""
    return int(substream(seed, name).integers(0, 2 ** 63 - 1))
