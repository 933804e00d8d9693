"""Classical reference solvers: swap and 2-opt hill climbing, Held-Karp.

Both local searches start from the sequential tour ``0..N-1``, scan moves in
row-major order and restart the scan from the top after the first strictly
improving move. Changing the scan order changes the local optimum reached.
"""
from __future__ import annotations

import numpy as np

from tngeo.tour import Tour, tour_length, tour_lengths

HELD_KARP_MAX_CITIES = 18


class CapacityError(ValueError):
    pass


def _swap_moves(n):
    i, j = np.triu_indices(n, k=1)
    perms = np.tile(np.arange(n), (len(i), 1))
    rows = np.arange(len(i))
    perms[rows, i] = j
    perms[rows, j] = i
    return perms


def _two_opt_moves(n):
    perms = []
    for i in range(n - 2):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            p = np.arange(n)
            p[i + 1:j + 1] = p[i + 1:j + 1][::-1]
            perms.append(p)
    return np.asarray(perms)


def _first_improvement(dist, moves):
    n = dist.shape[0]
    order = np.arange(n)
    best = tour_length(dist, order)
    while True:
        candidates = order[moves]
        lengths = tour_lengths(dist, candidates)
        better = np.flatnonzero(lengths < best)
        if len(better) == 0:
            return Tour(tuple(int(c) for c in order), int(best))
        first = better[0]
        order = candidates[first]
        best = lengths[first]


def swap_local_search(instance) -> Tour:
    if instance.dimension < 3:
        raise ValueError("swap search needs at least 3 cities")
    return _first_improvement(instance.dist, _swap_moves(instance.dimension))


def two_opt_local_search(instance) -> Tour:
    if instance.dimension < 4:
        raise ValueError("2-opt needs at least 4 cities")
    return _first_improvement(instance.dist, _two_opt_moves(instance.dimension))


def held_karp(instance) -> tuple[int, Tour]:
    """Exact optimum by dynamic programming over subsets (city 0 fixed first)."""
    dist = np.asarray(instance.dist, dtype=np.int64)
    n = dist.shape[0]
    if n > HELD_KARP_MAX_CITIES:
        raise CapacityError(f"Held-Karp limited to {HELD_KARP_MAX_CITIES} cities, got {n}")
    if n <= 3:
        order = tuple(range(n))
        return tour_length(dist, order), Tour.of(dist, order)
    m = n - 1  # cities 1..n-1 are encoded as bits 0..m-1
    full = 1 << m
    inf = np.iinfo(np.int64).max // 4
    cost = np.full((full, m), inf, dtype=np.int64)
    parent = np.full((full, m), -1, dtype=np.int8)
    for c in range(m):
        cost[1 << c, c] = dist[0, c + 1]
    sub = dist[1:, 1:]
    for mask in range(1, full):
        row = cost[mask]
        if not np.any(row < inf):
            continue
        # extend every end city of `mask` to each city not yet in it
        missing = [c for c in range(m) if not mask >> c & 1]
        if not missing:
            continue
        ends = np.flatnonzero((np.arange(m) >= 0) & ((mask >> np.arange(m)) & 1).astype(bool))
        cand = row[ends][:, None] + sub[np.ix_(ends, missing)]
        best_end = np.argmin(cand, axis=0)
        best = cand[best_end, np.arange(len(missing))]
        for idx, c in enumerate(missing):
            nm = mask | (1 << c)
            if best[idx] < cost[nm, c]:
                cost[nm, c] = best[idx]
                parent[nm, c] = ends[best_end[idx]]
    last = cost[full - 1] + dist[1:, 0]
    end = int(np.argmin(last))
    optimum = int(last[end])
    order = []
    mask = full - 1
    while end >= 0:
        order.append(end + 1)
        prev = int(parent[mask, end])
        mask ^= 1 << end
        end = prev
    order = [0] + order[::-1]
    tour = Tour.of(dist, order)
    assert tour.cost == optimum
    return optimum, tour


def random_tours(n_cities: int, count: int, rng) -> np.ndarray:
    """``count`` independent uniform permutations (Fisher-Yates per row)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    base = np.tile(np.arange(n_cities, dtype=np.int64), (count, 1))
    return rng.permuted(base, axis=1)
