from dataclasses import dataclass

import numpy as np

# Purposes get disjoint streams under the same (seed, stream) pair.
SAMPLES = 0
NOISE = 1
BUCKETS = 2
MONTE_CARLO = 3


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) pair naming an independent, reproducible random stream.

    Streams are derived with `SeedSequence` spawn keys and fed to the
    counter-based Philox generator, so each (seed, stream, purpose) triple
    reproduces the same draws regardless of which thread consumes it.
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self, purpose: int = SAMPLES) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, purpose))
        return np.random.Generator(np.random.Philox(seq))
