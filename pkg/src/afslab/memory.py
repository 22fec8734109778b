"""Bounded episodic memory with reservoir insertion and uniform retrieval.

Reservoir sampling keeps each stream sample in the buffer with probability
capacity / samples_seen, without knowing the stream length in advance. Only
stream samples count toward `tot`; retrieval never mutates the buffer.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .stream import Sample


@dataclass
class MemoryBuffer:
    capacity: int
    slots: list[Sample] = field(default_factory=list)
    tot: int = 0  # stream samples offered so far

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidConfigError(f"capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.slots)


def reservoir_update(
    buffer: MemoryBuffer, batch: list[Sample], rng: np.random.Generator
) -> None:
    """Offer a batch of stream samples to the buffer, one at a time.

    While the buffer has room the sample is appended; afterwards it replaces
    slot j drawn uniformly from [0, tot], kept only if j lands inside the
    buffer. Samples are stored by value so later mutation of the source
    cannot corrupt memory.
    """
    for s in batch:
        stored = Sample(features=np.array(s.features, copy=True), label=s.label, uid=s.uid)
        if buffer.tot < buffer.capacity:
            buffer.slots.append(stored)
        else:
            j = int(rng.integers(0, buffer.tot + 1))
            if j < buffer.capacity:
                buffer.slots[j] = stored
        buffer.tot += 1


def random_retrieve(
    buffer: MemoryBuffer, size: int, rng: np.random.Generator
) -> list[Sample]:
    """Draw min(size, len) stored samples uniformly without replacement.

    An empty buffer yields an empty batch, which lets training bootstrap
    before any memory exists.
    """
    if size < 0:
        raise InvalidInputError(f"size must be non-negative, got {size}")
    n = len(buffer.slots)
    if n == 0 or size == 0:
        return []
    k = min(size, n)
    picks = rng.choice(n, size=k, replace=False)
    return [buffer.slots[int(i)] for i in picks]


def class_histogram(buffer: MemoryBuffer) -> Counter:
    """Count stored samples per class label."""
    return Counter(s.label for s in buffer.slots)
