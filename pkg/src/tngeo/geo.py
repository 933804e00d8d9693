"""The generator-enhanced optimisation loop for the TSP.

Each iteration builds a rank-based softmax surrogate over every distinct tour
seen so far, draws a training set from it with replacement, fits a freshly
initialised MPS Born machine (full or k-site) to that set, and evaluates
every tour sampled from the trained model.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from tngeo import mps
from tngeo.baselines import random_tours
from tngeo.tour import Tour, all_permutations, tour_lengths
from tngeo.training import TrainConfig, TrainingDiverged, fit

log = logging.getLogger(__name__)


@dataclass
class GeoConfig:
    t_init: float = 0.1
    t_final: float = 0.0001
    n_iters: int = 64
    n_init_samples: int = 2**16
    n_train_samples: int = 2**14
    n_new_samples: int = 2**16
    bond_dim: int = 128
    # None means the full N-site model
    k_sites: int | None = None
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_start: bool = False
    dedup: str = "exact"  # or "cyclic"
    population_cap: int | None = None
    hist_bins: int = 100

    def __post_init__(self):
        if isinstance(self.k_sites, str):
            self.k_sites = None if self.k_sites == "full" else int(self.k_sites)
        if isinstance(self.train, dict):
            self.train = _train_config_from_dict(self.train)
        if not self.t_init >= self.t_final > 0:
            raise ValueError("need t_init >= t_final > 0")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.k_sites is not None and self.k_sites < 2:
            raise ValueError("k_sites must be >= 2")
        if self.dedup not in ("exact", "cyclic"):
            raise ValueError(f"unknown dedup mode {self.dedup!r}")

    def label(self) -> str:
        return "full" if self.k_sites is None else f"k{self.k_sites}"


def _train_config_from_dict(d):
    from tngeo.training import AdamWConfig

    d = dict(d)
    if isinstance(d.get("adamw"), dict):
        d["adamw"] = AdamWConfig(**d["adamw"])
    return TrainConfig(**d)


def paper_preset(**overrides) -> GeoConfig:
    return GeoConfig(**overrides)


DESK_MAX_EPOCHS = 40


def desk_preset(**overrides) -> GeoConfig:
    base = dict(
        bond_dim=64,
        n_init_samples=2**14,
        n_train_samples=2**12,
        n_new_samples=2**14,
        n_iters=16,
        # a single CPU cannot afford fits that run to the tolerance
        train=TrainConfig(max_epochs=DESK_MAX_EPOCHS),
    )
    base.update(overrides)
    return GeoConfig(**base)


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def temperature(t: int, config: GeoConfig) -> float:
    """Exponential schedule from ``t_init`` (t=1) to ``t_final`` (t=n_iters)."""
    if config.n_iters == 1:
        return config.t_init
    if not 1 <= t <= config.n_iters:
        raise ValueError(f"iteration {t} outside 1..{config.n_iters}")
    frac = (t - 1) / (config.n_iters - 1)
    return config.t_init * (config.t_final / config.t_init) ** frac


# -- population ----------------------------------------------------------------


def _row_keys(tours: np.ndarray) -> np.ndarray:
    """Byte keys whose order is the lexicographic order of the rows."""
    big = np.ascontiguousarray(tours.astype(">u2"))
    return big.view(np.dtype((np.void, 2 * tours.shape[1]))).ravel()


def cyclic_canonical(tours: np.ndarray) -> np.ndarray:
    """Rotate each tour to start at city 0 and fix its direction."""
    tours = np.atleast_2d(tours)
    n = tours.shape[1]
    start = np.argmax(tours == 0, axis=1)
    idx = (start[:, None] + np.arange(n)) % n
    rot = np.take_along_axis(tours, idx, axis=1)
    flip = rot[:, 1] > rot[:, -1]
    rot[flip, 1:] = rot[flip, :0:-1]
    return rot


class Population:
    """All tours seen so far, stored as distinct rows with multiplicities."""

    def __init__(self, n_cities: int, dedup: str = "exact"):
        self.n_cities = n_cities
        self.dedup = dedup
        self.tours = np.empty((0, n_cities), dtype=np.int64)
        self.costs = np.empty(0, dtype=np.int64)
        self.counts = np.empty(0, dtype=np.int64)

    def __len__(self):
        return int(self.counts.sum())

    @property
    def n_distinct(self) -> int:
        return len(self.tours)

    def add(self, tours: np.ndarray, costs: np.ndarray) -> int:
        """Merge a batch; returns how many previously unseen tours it held."""
        tours = np.asarray(tours, dtype=np.int64)
        if self.dedup == "cyclic":
            tours = cyclic_canonical(tours)
        before = self.n_distinct
        all_tours = np.concatenate([self.tours, tours])
        all_costs = np.concatenate([self.costs, np.asarray(costs, dtype=np.int64)])
        all_counts = np.concatenate([self.counts, np.ones(len(tours), dtype=np.int64)])
        _, first, inverse = np.unique(
            _row_keys(all_tours), return_index=True, return_inverse=True
        )
        self.counts = np.bincount(inverse.ravel(), weights=all_counts).astype(np.int64)
        self.tours = all_tours[first]
        self.costs = all_costs[first]
        return self.n_distinct - before


@dataclass
class WeightedPopulation:
    tours: np.ndarray  # distinct, in rank order
    costs: np.ndarray
    weights: np.ndarray
    effective_temperature: float

    def __len__(self):
        return len(self.weights)


def build_surrogate(tours, costs, temperature: float, cap: int | None = None) -> WeightedPopulation:
    """Rank-based softmax over distinct tours.

    Duplicates are dropped, tours are ranked by cost (ties broken by
    lexicographic order) and weighted ``exp(-rank / (temperature * M))`` with
    ``M`` the number of distinct tours.
    """
    tours = np.atleast_2d(np.asarray(tours, dtype=np.int64))
    costs = np.asarray(costs, dtype=np.int64)
    if len(tours) == 0:
        raise ValueError("surrogate needs at least one tour")
    _, first = np.unique(_row_keys(tours), return_index=True)
    tours, costs = tours[first], costs[first]
    order = np.argsort(costs, kind="stable")
    if cap is not None:
        order = order[:cap]
    tours, costs = tours[order], costs[order]
    m = len(tours)
    eff = temperature * m
    if math.isinf(eff):
        weights = np.full(m, 1.0 / m)
    else:
        weights = np.exp(-np.arange(m) / eff)
        weights /= weights.sum()
    return WeightedPopulation(tours, costs, weights, eff)


def draw_training_set(pop: WeightedPopulation, n: int, rng) -> np.ndarray:
    """``n`` tours drawn with replacement according to the surrogate weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    idx = rng.choice(len(pop), size=n, p=pop.weights)
    return pop.tours[idx]


def extract_kgrams(tours, k: int) -> np.ndarray:
    """All N cyclic windows of length k from every tour."""
    tours = np.atleast_2d(np.asarray(tours, dtype=np.int64))
    n = tours.shape[1]
    if not 2 <= k <= n:
        raise ValueError(f"k={k} outside [2, {n}]")
    idx = (np.arange(n)[:, None] + np.arange(k)[None, :]) % n
    return tours[:, idx].reshape(-1, k)


# -- run record ------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    temperature: float
    effective_temperature: float
    n_distinct: int
    n_train_distinct: int
    best_cost: int
    new_best_cost: int
    new_mean_cost: float
    new_distinct: int
    nll_initial: float
    nll_final: float
    # medians over the first and last ten recorded epochs of the fit
    nll_head_median: float
    nll_tail_median: float
    epochs: int
    fallbacks: int


@dataclass
class GeoRunRecord:
    instance: str
    n_cities: int
    max_dist: int
    config: dict
    initial_best_cost: int
    iterations: list[IterationRecord] = field(default_factory=list)
    best_order: list[int] = field(default_factory=list)
    best_cost: int = 0
    histograms: dict | None = None
    aborted: str | None = None

    @property
    def best_costs(self) -> list[int]:
        return [it.best_cost for it in self.iterations]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "temperature", "best_cost"])
            w.writerow([0, "", self.initial_best_cost])
            for it in self.iterations:
                w.writerow([it.iteration, repr(it.temperature), it.best_cost])


class GeoAborted(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


def cost_histograms(cost_sets: dict, max_dist: int, bins: int = 100) -> dict:
    """Histograms of ``cost / max_dist`` with edges shared by every set."""
    arrays = {k: np.asarray(v, dtype=np.float64) / max_dist for k, v in cost_sets.items()}
    lo = min(a.min() for a in arrays.values())
    hi = max(a.max() for a in arrays.values())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = {k: np.histogram(a, bins=edges)[0].tolist() for k, a in arrays.items()}
    return {"edges": edges.tolist(), "counts": counts}


def sample_model(model, n_cities, n, k, rng):
    canon = mps.right_canonicalize(model)
    if k is None:
        return mps.sample_permutations(canon, n, rng)
    return mps.sample_permutations_ksite(canon, n_cities, n, rng)


def _streams(config: GeoConfig):
    """Independent generators for init, surrogate draws and sampling, plus model seeds."""
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, draw_rng, sample_rng, seed_rng = (np.random.default_rng(s) for s in seeds)
    model_seeds = seed_rng.integers(0, 2**63 - 1, size=config.n_iters)
    return init_rng, draw_rng, sample_rng, model_seeds


@dataclass
class FirstIteration:
    """Everything the first GEO iteration sees before training."""

    initial_tours: np.ndarray
    initial_costs: np.ndarray
    surrogate: WeightedPopulation
    drawn: np.ndarray
    model_seed: int
    sample_rng: np.random.Generator


def first_iteration(instance, config: GeoConfig) -> FirstIteration:
    """Reproduce the data of iteration 1 of :func:`run_geo` for the same config."""
    init_rng, draw_rng, sample_rng, model_seeds = _streams(config)
    n = instance.dimension
    tours = random_tours(n, config.n_init_samples, init_rng)
    costs = tour_lengths(instance.dist, tours)
    pop = Population(n, config.dedup)
    pop.add(tours, costs)
    surrogate = build_surrogate(pop.tours, pop.costs, temperature(1, config), config.population_cap)
    drawn = draw_training_set(surrogate, config.n_train_samples, draw_rng)
    return FirstIteration(tours, costs, surrogate, drawn, int(model_seeds[0]), sample_rng)


def run_geo(instance, config: GeoConfig, callback=None) -> GeoRunRecord:
    """Run the full optimisation loop; ``callback(record)`` after each iteration."""
    n = instance.dimension
    k = config.k_sites
    if k is not None and k > n:
        raise ValueError(f"k_sites={k} exceeds the number of cities {n}")
    dist = instance.dist
    init_rng, draw_rng, sample_rng, model_seeds = _streams(config)

    pop = Population(n, config.dedup)
    tours = random_tours(n, config.n_init_samples, init_rng)
    costs = tour_lengths(dist, tours)
    pop.add(tours, costs)
    best_idx = int(np.argmin(costs))
    best_order, best_cost = tours[best_idx].copy(), int(costs[best_idx])
    record = GeoRunRecord(
        instance=instance.name,
        n_cities=n,
        max_dist=instance.max_dist,
        config=asdict(config),
        initial_best_cost=best_cost,
        best_order=best_order.tolist(),
        best_cost=best_cost,
    )
    cost_sets = {"initial": costs}
    sites = n if k is None else k
    model = None

    for t in range(1, config.n_iters + 1):
        temp = temperature(t, config)
        surrogate = build_surrogate(pop.tours, pop.costs, temp, config.population_cap)
        drawn = draw_training_set(surrogate, config.n_train_samples, draw_rng)
        samples = drawn if k is None else extract_kgrams(drawn, k)
        weights = np.full(len(samples), 1.0 / len(samples))
        if model is None or not config.warm_start:
            model = mps.init_random(sites, n, config.bond_dim, int(model_seeds[t - 1]))
        try:
            model, trace = fit(model, samples, weights, config.train)
        except TrainingDiverged as exc:
            record.aborted = str(exc)
            raise GeoAborted(f"iteration {t}: {exc}", record) from exc
        new, fallbacks = sample_model(model, n, config.n_new_samples, k, sample_rng)
        if not all_permutations(new):
            raise AssertionError("sampler produced an invalid tour")
        new_costs = tour_lengths(dist, new)
        fresh = pop.add(new, new_costs)
        i = int(np.argmin(new_costs))
        if new_costs[i] < best_cost:
            best_cost, best_order = int(new_costs[i]), new[i].copy()
        cost_sets[f"iter{t}"] = new_costs
        it = IterationRecord(
            iteration=t,
            temperature=temp,
            effective_temperature=surrogate.effective_temperature,
            n_distinct=pop.n_distinct,
            n_train_distinct=int(len(np.unique(_row_keys(samples)))),
            best_cost=best_cost,
            new_best_cost=int(new_costs[i]),
            new_mean_cost=float(new_costs.mean()),
            new_distinct=fresh,
            nll_initial=trace.nll[0],
            nll_final=trace.final,
            nll_head_median=float(np.median(trace.nll[:10])),
            nll_tail_median=float(np.median(trace.nll[-10:])),
            epochs=trace.epochs[-1],
            fallbacks=fallbacks,
        )
        record.iterations.append(it)
        record.best_cost, record.best_order = best_cost, best_order.tolist()
        log.info(
            "%s %s t=%d T=%.3g best=%d new_best=%d mean=%.1f epochs=%d",
            instance.name, config.label(), t, temp, best_cost, it.new_best_cost,
            it.new_mean_cost, it.epochs,
        )
        if callback is not None:
            callback(record)

    if config.hist_bins:
        record.histograms = cost_histograms(cost_sets, instance.max_dist, config.hist_bins)
    return record


def best_tour(record: GeoRunRecord, instance) -> Tour:
    return Tour.of(instance.dist, record.best_order)
