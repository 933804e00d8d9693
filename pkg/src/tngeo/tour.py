"""Tours as permutations of city indices, and their TSPLIB lengths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidTourError(ValueError):
    pass


def is_permutation(order, n: int | None = None) -> bool:
    order = np.asarray(order)
    n = len(order) if n is None else n
    return order.ndim == 1 and len(order) == n and np.array_equal(np.sort(order), np.arange(n))


def all_permutations(tours: np.ndarray) -> bool:
    """Row-wise permutation check for a ``(count, N)`` array."""
    tours = np.asarray(tours)
    return bool(np.all(np.sort(tours, axis=1) == np.arange(tours.shape[1])))


def tour_length(dist: np.ndarray, order) -> int:
    """Closed tour length, including the edge back to the first city."""
    order = np.asarray(order, dtype=np.int64)
    if not is_permutation(order, dist.shape[0]):
        raise InvalidTourError(f"not a permutation of 0..{dist.shape[0] - 1}: {order}")
    return int(dist[order, np.roll(order, -1)].sum())


def tour_lengths(dist: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Lengths of a ``(count, N)`` batch of tours (validity is not checked)."""
    tours = np.asarray(tours)
    return dist[tours, np.roll(tours, -1, axis=1)].sum(axis=1)


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    cost: int | None = None

    @classmethod
    def of(cls, dist, order):
        order = tuple(int(c) for c in order)
        return cls(order, tour_length(dist, order))

    def __len__(self):
        return len(self.order)
