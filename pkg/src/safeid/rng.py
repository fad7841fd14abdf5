from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Named, reproducible random stream derived from one master seed.

    Streams with different ``path`` are statistically independent; equal
    ``(seed, path)`` always yields the same sample sequence.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def derive_seed(self) -> int:
        """A 63-bit integer summarising this stream, handy for logging."""
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.path)
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# stream ids used by the simulator
W_STREAM = 1
ETA_STREAM = 2
