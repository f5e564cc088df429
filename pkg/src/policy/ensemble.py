"""Temporal ensembling of overlapping action chunks."""
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Tuple

import numpy as np

from src.utils.errors import InvalidConfig, NoPrediction


@dataclass
class EnsembleBuffer:
    """Chunks keyed by the policy tick they were predicted at, oldest first."""

    chunk_size: int
    entries: Deque[Tuple[int, np.ndarray]] = field(default_factory=deque)

    def push(self, birth: int, chunk: np.ndarray) -> None:
        chunk = np.asarray(chunk, dtype=float)
        if chunk.shape[0] != self.chunk_size:
            raise InvalidConfig(f"chunk has {chunk.shape[0]} steps, expected {self.chunk_size}")
        if self.entries and birth <= self.entries[-1][0]:
            raise InvalidConfig("chunk birth ticks must be strictly increasing")
        self.entries.append((birth, chunk))
        while self.entries and self.entries[0][0] + self.chunk_size <= birth:
            self.entries.popleft()

    def predictions(self, now: int) -> List[np.ndarray]:
        return [chunk[now - birth] for birth, chunk in self.entries if 0 <= now - birth < self.chunk_size]


def ensemble_action(buffer: EnsembleBuffer, now: int, m: float) -> np.ndarray:
    """Weighted mean of every buffered prediction for tick ``now``.

    Weights are exp(-m * i) with i = 0 for the oldest prediction.

    Raises:
        NoPrediction: If no buffered chunk covers ``now``
    """
    predictions = buffer.predictions(now)
    if not predictions:
        raise NoPrediction(f"no buffered chunk covers tick {now}")
    weights = np.exp(-m * np.arange(len(predictions)))
    return (weights[:, None] * np.stack(predictions)).sum(axis=0) / weights.sum()
