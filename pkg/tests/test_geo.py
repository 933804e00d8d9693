import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tngeo import geo, tsplib
from tngeo.geo import (
    GeoConfig,
    Population,
    build_surrogate,
    cost_histograms,
    cyclic_canonical,
    draw_training_set,
    extract_kgrams,
    temperature,
)
from tngeo.tour import tour_length
from tngeo.training import TrainConfig


def tiny_config(**kw):
    base = dict(
        bond_dim=4, n_init_samples=64, n_train_samples=32, n_new_samples=64,
        n_iters=3, train=TrainConfig(max_epochs=3),
    )
    base.update(kw)
    return GeoConfig(**base)


def test_temperature_schedule():
    cfg = GeoConfig(n_iters=9)
    assert temperature(1, cfg) == pytest.approx(0.1)
    assert temperature(9, cfg) == pytest.approx(1e-4)
    assert temperature(5, cfg) == pytest.approx(math.sqrt(0.1 * 1e-4))
    with pytest.raises(ValueError):
        temperature(10, cfg)
    assert temperature(1, GeoConfig(n_iters=1)) == 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        GeoConfig(n_iters=0)
    with pytest.raises(ValueError):
        GeoConfig(t_init=1e-5, t_final=1e-4)
    with pytest.raises(ValueError):
        GeoConfig(k_sites=1)
    assert GeoConfig(k_sites="full").k_sites is None
    assert GeoConfig(k_sites="4").label() == "k4"


def test_presets():
    desk = geo.desk_preset()
    assert (desk.bond_dim, desk.n_init_samples, desk.n_train_samples, desk.n_new_samples, desk.n_iters) == (
        64, 2**14, 2**12, 2**14, 16)
    paper = geo.paper_preset()
    assert (paper.bond_dim, paper.n_init_samples, paper.n_train_samples, paper.n_new_samples, paper.n_iters) == (
        128, 2**16, 2**14, 2**16, 64)
    assert paper.train.learning_rate == 0.1 and paper.train.tolerance == 1e-4


def test_two_point_surrogate():
    pop = build_surrogate([[0, 1, 2], [0, 2, 1]], [7, 5], temperature=0.5)
    assert pop.costs.tolist() == [5, 7]
    np.testing.assert_allclose(pop.weights, [1 / (1 + math.e ** -1), 1 / (1 + math.e)], rtol=1e-12)
    assert pop.weights[0] == pytest.approx(0.731, abs=1e-3)


def test_surrogate_high_temperature_is_uniform():
    pop = build_surrogate(np.array([[0, 1, 2, 3], [1, 0, 2, 3], [2, 1, 0, 3]]), [3, 2, 1], math.inf)
    np.testing.assert_allclose(pop.weights, 1 / 3)


def test_surrogate_drops_duplicates_and_breaks_ties_lexicographically():
    tours = [[2, 1, 0], [0, 2, 1], [2, 1, 0], [0, 1, 2]]
    pop = build_surrogate(tours, [4, 4, 4, 9], 1.0)
    assert len(pop) == 3
    assert pop.tours.tolist() == [[0, 2, 1], [2, 1, 0], [0, 1, 2]]


def test_draw_point_mass_and_uniform():
    rng = np.random.default_rng(0)
    point = build_surrogate([[1, 0, 2]], [3], 0.1)
    assert draw_training_set(point, 5, rng).tolist() == [[1, 0, 2]] * 5
    m, n = 6, 60_000
    tours = np.array([np.roll(np.arange(6), i) for i in range(m)])
    uniform = build_surrogate(tours, np.arange(m), math.inf)
    drawn = draw_training_set(uniform, n, rng)
    counts = np.array([np.sum(np.all(drawn == t, axis=1)) for t in uniform.tours])
    sigma = math.sqrt(n * (1 / m) * (1 - 1 / m))
    assert np.all(np.abs(counts - n / m) < 4 * sigma)
    with pytest.raises(ValueError):
        draw_training_set(uniform, 0, rng)


def test_kgrams():
    assert extract_kgrams([0, 1, 2, 3], 2).tolist() == [[0, 1], [1, 2], [2, 3], [3, 0]]
    full = extract_kgrams([0, 1, 2, 3], 4)
    assert full.tolist() == [[0, 1, 2, 3], [1, 2, 3, 0], [2, 3, 0, 1], [3, 0, 1, 2]]


@given(st.permutations(list(range(9))), st.integers(2, 9))
def test_kgram_count(tour, k):
    grams = extract_kgrams([tour, tour[::-1]], k)
    assert grams.shape == (18, k)


def test_population_dedup_modes():
    exact = Population(4)
    assert exact.add(np.array([[0, 1, 2, 3], [1, 2, 3, 0], [0, 1, 2, 3]]), [5, 5, 5]) == 2
    assert sorted(exact.counts.tolist()) == [1, 2]
    cyc = Population(4, dedup="cyclic")
    assert cyc.add(np.array([[0, 1, 2, 3], [1, 2, 3, 0], [0, 3, 2, 1]]), [5, 5, 5]) == 1
    assert cyclic_canonical(np.array([[2, 3, 0, 1]])).tolist() == [[0, 1, 2, 3]]


def test_histograms_share_edges():
    h = cost_histograms({"a": [10, 20], "b": [15, 40]}, max_dist=10, bins=4)
    assert h["edges"][0] == 1.0 and h["edges"][-1] == 4.0
    assert sum(h["counts"]["a"]) == 2 and sum(h["counts"]["b"]) == 2


def test_run_geo_small_deterministic_and_monotone():
    inst = tsplib.load_benchmark("burma14")
    a = geo.run_geo(inst, tiny_config(seed=3))
    b = geo.run_geo(inst, tiny_config(seed=3))
    assert a.to_json() == b.to_json()
    costs = [a.initial_best_cost] + a.best_costs
    assert all(x >= y for x, y in zip(costs, costs[1:]))
    assert tour_length(inst.dist, a.best_order) == a.best_cost
    assert geo.best_tour(a, inst).cost == a.best_cost


def test_run_geo_ksite_and_one_iteration():
    inst = tsplib.load_benchmark("ulysses16")
    rec = geo.run_geo(inst, tiny_config(k_sites=4, n_iters=1))
    assert len(rec.iterations) == 1
    assert rec.best_cost <= rec.initial_best_cost
    with pytest.raises(ValueError):
        geo.run_geo(inst, tiny_config(k_sites=17))


def test_first_iteration_matches_run():
    inst = tsplib.load_benchmark("burma14")
    cfg = tiny_config(seed=5, n_iters=1)
    first = geo.first_iteration(inst, cfg)
    rec = geo.run_geo(inst, cfg)
    assert rec.initial_best_cost == first.initial_costs.min()
    assert rec.iterations[0].n_train_distinct == len(np.unique(first.drawn, axis=0))


def test_record_exports(tmp_path):
    inst = tsplib.load_benchmark("burma14")
    rec = geo.run_geo(inst, tiny_config(n_iters=2))
    rec.write_json(tmp_path / "r.json")
    rec.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "iteration,temperature,best_cost" and len(lines) == 4


def test_warm_start_and_cap_run():
    inst = tsplib.load_benchmark("burma14")
    rec = geo.run_geo(inst, replace(tiny_config(), warm_start=True, population_cap=50))
    assert len(rec.iterations) == 3
