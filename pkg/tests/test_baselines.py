import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tngeo import tsplib
from tngeo.baselines import (
    CapacityError,
    held_karp,
    random_tours,
    swap_local_search,
    two_opt_local_search,
)
from tngeo.tour import all_permutations, tour_length
from tngeo.tsplib import TspInstance

from oracles import brute_optimum


def square():
    return TspInstance.from_coords("sq", [(0, 0), (10, 0), (10, 10), (0, 10)])


def test_swap_optimal_start_is_returned():
    t = swap_local_search(square())
    assert t.order == (0, 1, 2, 3) and t.cost == 40


def test_two_opt_uncrosses():
    inst = TspInstance.from_coords("x", [(0, 0), (10, 10), (10, 0), (0, 10)])
    assert tour_length(inst.dist, [0, 1, 2, 3]) > 40
    assert two_opt_local_search(inst).cost == 40


def test_burma14_swap_gap():
    t = swap_local_search(tsplib.load_benchmark("burma14"))
    assert round(100 * (t.cost - 3323) / 3323, 1) == 7.1


def random_instance(seed, n):
    pts = np.random.default_rng(seed).integers(0, 100, size=(n, 2))
    return TspInstance.from_coords(f"r{seed}", pts)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 8))
def test_held_karp_matches_brute_force(seed, n):
    inst = random_instance(seed, n)
    opt, tour = held_karp(inst)
    assert opt == brute_optimum(inst.dist) == tour.cost
    assert sorted(tour.order) == list(range(n))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 9))
def test_local_searches_are_local_optima(seed, n):
    inst = random_instance(seed, n)
    opt, _ = held_karp(inst)
    for search in (swap_local_search, two_opt_local_search):
        t = search(inst)
        assert t.cost >= opt
        assert sorted(t.order) == list(range(n))
    # no single swap improves the swap result
    t = list(swap_local_search(inst).order)
    for i in range(n):
        for j in range(i + 1, n):
            u = t.copy()
            u[i], u[j] = u[j], u[i]
            assert tour_length(inst.dist, u) >= tour_length(inst.dist, t)


def test_held_karp_small_and_capacity():
    assert held_karp(TspInstance.from_coords("two", [(0, 0), (3, 4)]))[0] == 10
    with pytest.raises(CapacityError):
        held_karp(tsplib.load_benchmark("ulysses22"))


def test_random_tours():
    rng = np.random.default_rng(0)
    tours = random_tours(7, 1000, rng)
    assert tours.shape == (1000, 7) and all_permutations(tours)
    # first position is roughly uniform
    counts = np.bincount(tours[:, 0], minlength=7)
    assert np.all(np.abs(counts - 1000 / 7) < 4 * np.sqrt(1000 / 7))
    with pytest.raises(ValueError):
        random_tours(5, 0, rng)
