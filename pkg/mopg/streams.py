"""Counter-based random streams and the ledger that tracks which ones were handed out."""
from collections import defaultdict
from threading import RLock
from typing import DefaultDict, FrozenSet, List, Optional, Set, Tuple

import numpy as np

from .errors import ArgumentError, StreamReuseError
from .logger import logger

StreamKey = Tuple[int, ...]

# Batch tags used by the trainer; never reuse a tag for a different purpose.
BATCH_RETURNS = 0
BATCH_GRADIENT = 1
BATCH_EVAL = 2


class StreamLedger:
    """Records every stream key issued in a run and rejects duplicates."""

    def __init__(self):
        self._lock = RLock()
        self._issued: Set[StreamKey] = set()
        self._per_batch: DefaultDict[Tuple[int, int], int] = defaultdict(int)

    def claim(self, key: StreamKey):
        with self._lock:
            if key in self._issued:
                raise StreamReuseError(f'stream {key} was already issued')
            self._issued.add(key)
            if len(key) >= 3:
                self._per_batch[(key[1], key[2])] += 1

    def issued(self) -> FrozenSet[StreamKey]:
        with self._lock:
            return frozenset(self._issued)

    def count(self, episode: int, batch: int) -> int:
        with self._lock:
            return self._per_batch[(episode, batch)]

    def __len__(self) -> int:
        with self._lock:
            return len(self._issued)


class StreamFactory:
    """Derives independent generators from (seed, *counters).

    The same counters always give the same generator, whichever order or
    process asks for them.
    """

    def __init__(self, seed: int, ledger: Optional[StreamLedger] = None):
        if int(seed) < 0:
            raise ArgumentError(f'seed must be non-negative, got {seed}')
        self.seed = int(seed)
        self.ledger = ledger

    def key(self, *counters: int) -> StreamKey:
        return (self.seed,) + tuple(int(c) for c in counters)

    def stream(self, *counters: int) -> np.random.Generator:
        key = self.key(*counters)
        if self.ledger is not None:
            self.ledger.claim(key)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))

    def streams(self, episode: int, batch: int, count: int) -> List[np.random.Generator]:
        """One generator per trajectory index in ``range(count)``."""
        out = [self.stream(episode, batch, index) for index in range(count)]
        logger.debug('Issued %d streams for episode=%d batch=%d', count, episode, batch)
        return out
