"""Command-line experiment runner.

Every mode writes plain data files into ``--out``; nothing is plotted.
Settings can come from a ``key = value`` config file (``--config``) whose
keys are the long flag names; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from tngeo import geo, mps
from tngeo.baselines import HELD_KARP_MAX_CITIES, held_karp, swap_local_search, two_opt_local_search
from tngeo.tour import Tour, tour_lengths
from tngeo.training import dmrg_fit, fit
from tngeo.tsplib import KNOWN_OPTIMA, resolve_instance

log = logging.getLogger("tngeo")

MODES = ("geo", "swap", "two-opt", "held-karp", "bonddim-study", "trainer-compare", "table1")
STOCHASTIC_MODES = ("geo", "bonddim-study", "trainer-compare", "table1")
TABLE1_METHODS = ("swap", "2-opt", "k=2", "k=4", "k=8", "full")
BONDDIM_CHIS = (4, 16, 64)


# -- formatting ----------------------------------------------------------------


def format_gap(value) -> str:
    """Three significant figures, ties to even, no trailing zeros."""
    d = Decimal(str(value))
    if d == 0:
        return "0"
    exp = d.adjusted() - 2
    q = d.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_EVEN)
    text = format(q, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def gap_percent(found: int, optimum: int) -> float:
    return 100.0 * (int(found) - int(optimum)) / int(optimum)


def reference_optimum(instance) -> int | None:
    """Published optimum if bundled, Held-Karp if small enough, else None."""
    if instance.name in KNOWN_OPTIMA:
        return KNOWN_OPTIMA[instance.name]
    if instance.dimension <= HELD_KARP_MAX_CITIES:
        return held_karp(instance)[0]
    return None


# -- geometry --------------------------------------------------------------------


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def segments_cross(p1, p2, q1, q2) -> bool:
    """True if the open segments intersect at a single interior point."""
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def count_crossings(coords, order) -> int:
    pts = np.asarray(coords, dtype=np.float64)[list(order)]
    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    count = 0
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # these two edges share city order[0]
            if segments_cross(*edges[i], *edges[j]):
                count += 1
    return count


def emit_tour_geometry(instance, tour, path) -> int:
    """Write the closed tour polyline as CSV; returns the crossing count."""
    order = list(tour.order if isinstance(tour, Tour) else tour)
    crossings = count_crossings(instance.coords, order)
    with open(path, "w", newline="") as fh:
        fh.write(f"# crossings: {crossings}\n")
        w = csv.writer(fh)
        w.writerow(["position", "city", "x", "y"])
        for pos, city in enumerate(order + order[:1]):
            x, y = instance.coords[city]
            w.writerow([pos, city + 1, repr(float(x)), repr(float(y))])
    return crossings


# -- histograms ------------------------------------------------------------------


def shared_edges(arrays, bins: int) -> np.ndarray:
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def mass(values, edges, weights=None) -> np.ndarray:
    counts, _ = np.histogram(values, bins=edges, weights=weights)
    return counts / counts.sum()


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def sample_tv(a, b, bins: int = 100) -> float:
    """Total-variation distance between two sample sets on a shared binning."""
    edges = shared_edges([a, b], bins)
    return tv_distance(mass(a, edges), mass(b, edges))


def _write_hist(path, edges, columns: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", *columns])
        for i in range(len(edges) - 1):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1]))]
                       + [repr(float(c[i])) for c in columns.values()])


# -- experiments -------------------------------------------------------------------


def run_geo_seeds(instance, config: geo.GeoConfig, seeds, out: Path, fmt: str = "json"):
    records = []
    for seed in seeds:
        cfg = replace(config, seed=seed)
        rec = geo.run_geo(instance, cfg)
        stem = f"{instance.name}_{seed}"
        if fmt == "json":
            rec.write_json(out / f"run_{stem}.json")
        else:
            rec.write_csv(out / f"run_{stem}.csv")
        if rec.histograms:
            h = rec.histograms
            _write_hist(out / f"hist_{stem}.csv", np.asarray(h["edges"]),
                        {k: np.asarray(v) for k, v in h["counts"].items()})
        emit_tour_geometry(instance, rec.best_order, out / f"tour_{stem}.csv")
        log.info("%s seed %d: best %d", instance.name, seed, rec.best_cost)
        records.append(rec)
    return records


def run_table1(instances, config: geo.GeoConfig, seeds, out: Path | None = None,
               methods=TABLE1_METHODS) -> list[dict]:
    """Gap (%) of each method on each instance; TN-GEO cells use the best seed."""
    rows = []
    for inst in instances:
        opt = reference_optimum(inst)
        row = {"instance": inst.name, "optimum": "n/a" if opt is None else opt}
        for method in methods:
            if method == "swap":
                cost = swap_local_search(inst).cost
            elif method == "2-opt":
                cost = two_opt_local_search(inst).cost
            else:
                k = None if method == "full" else int(method[2:])
                if k is not None and k > inst.dimension:
                    row[method] = "n/a"
                    continue
                cfg = replace(config, k_sites=k)
                cost = min(geo.run_geo(inst, replace(cfg, seed=s)).best_cost for s in seeds)
            row[method] = f"n/a ({cost})" if opt is None else format_gap(gap_percent(cost, opt))
        rows.append(row)
        log.info("table1 %s", row)
    if out is not None:
        with open(out / "table1.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["instance", "optimum", *methods])
            w.writeheader()
            w.writerows(rows)
    return rows


def run_bonddim_study(instance, chis, config: geo.GeoConfig, seed: int = 0,
                      out: Path | None = None) -> dict:
    """First-iteration sampling quality for several bond dimensions.

    The target is the surrogate distribution itself (its exact weights over
    the population); ``tv_drawn`` compares against the finite training draw.
    """
    cfg = replace(config, seed=seed, k_sites=None)
    first = geo.first_iteration(instance, cfg)
    dist, scale = instance.dist, instance.max_dist
    sur = first.surrogate
    sets = {
        "initial": first.initial_costs / scale,
        "drawn": tour_lengths(dist, first.drawn) / scale,
    }
    base_rng = np.random.SeedSequence([seed, 0xB0D])
    for chi, ss in zip(chis, base_rng.spawn(len(chis))):
        model = mps.init_random(instance.dimension, instance.dimension, chi, first.model_seed)
        model, _ = fit(model, first.drawn, None, cfg.train)
        tours, _ = geo.sample_model(model, instance.dimension, cfg.n_new_samples, None,
                                    np.random.default_rng(ss))
        sets[f"chi{chi}"] = tour_lengths(dist, tours) / scale
    target_x = sur.costs / scale
    edges = shared_edges([target_x, *sets.values()], cfg.hist_bins)
    masses = {"initial": mass(sets["initial"], edges),
              "target": mass(target_x, edges, weights=sur.weights)}
    masses.update({k: mass(v, edges) for k, v in sets.items() if k != "initial"})
    tv = {chi: {"tv_target": tv_distance(masses[f"chi{chi}"], masses["target"]),
                "tv_drawn": tv_distance(masses[f"chi{chi}"], masses["drawn"])}
          for chi in chis}
    if out is not None:
        _write_hist(out / f"hist_bonddim_{instance.name}_{seed}.csv", edges, masses)
    return {"edges": edges, "masses": masses, "tv": tv}


def _aligned_rows(ad, dm):
    n = max(len(ad), len(dm))
    for i in range(n):
        a = ad.rows()[i] if i < len(ad) else (i, None, None)
        d = dm.rows()[i] if i < len(dm) else (i, None, None)
        yield [i, *("" if v is None else repr(float(v)) for v in (a[1], a[2], d[1], d[2]))]


def run_trainer_compare(instance, chis, config: geo.GeoConfig, seed: int = 0,
                        out: Path | None = None) -> dict:
    """Gradient training against two-site sweeps on the same first-iteration data."""
    cfg = replace(config, seed=seed, k_sites=None)
    first = geo.first_iteration(instance, cfg)
    tcfg = replace(cfg.train, track_entropy=True)
    result = {}
    for chi in chis:
        init = mps.init_random(instance.dimension, instance.dimension, chi, first.model_seed)
        _, ad = fit(init, first.drawn, None, tcfg)
        _, dm = dmrg_fit(init, first.drawn, None, tcfg)
        result[chi] = {"ad": ad, "dmrg": dm}
        if out is not None:
            with open(out / f"trace_{instance.name}_chi{chi}_{seed}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "ad_nll", "ad_entropy", "dmrg_nll", "dmrg_entropy"])
                w.writerows(_aligned_rows(ad, dm))
    return result


# -- argument handling ---------------------------------------------------------------


def _parse_k(text):
    return None if str(text).lower() == "full" else int(text)


def _parse_seeds(text):
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    seeds = []
    for part in str(text).replace(" ", "").split(","):
        if "-" in part:
            a, b = part.split("-")
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tngeo", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--instance", action="append",
                   help="TSPLIB file or bundled name; repeat for table1")
    p.add_argument("--mode", choices=MODES, default="geo")
    p.add_argument("--preset", choices=sorted(geo.PRESETS), default="desk")
    p.add_argument("--chi", type=int, action="append",
                   help="bond dimension; repeat for bonddim-study / trainer-compare")
    p.add_argument("--k", type=_parse_k, help="k-site model size or 'full'")
    p.add_argument("--iters", type=int)
    p.add_argument("--seeds", type=_parse_seeds, default=[0], help="e.g. 0,1,2 or 0-4")
    p.add_argument("--t-init", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--samples-init", type=int)
    p.add_argument("--samples-train", type=int)
    p.add_argument("--samples-new", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_LIST_KEYS = {"instance", "chi"}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _coerce_config(parser, values: dict) -> dict:
    actions = {a.dest: a for a in parser._actions}
    out = {}
    for key, value in values.items():
        if key not in actions or key == "config":
            raise ValueError(f"unknown config key {key!r}")
        conv = actions[key].type or str
        if key in _LIST_KEYS:
            out[key] = [conv(v.strip()) for v in value.split(",") if v.strip()]
        else:
            out[key] = conv(value)
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if pre.config is not None:
        parser.set_defaults(**_coerce_config(parser, read_config_file(pre.config)))
    args = parser.parse_args(argv)
    if not args.instance:
        parser.error("--instance is required")
    if args.mode in STOCHASTIC_MODES and not args.seeds:
        parser.error("--seeds must be non-empty")
    return args


def config_from_args(args) -> geo.GeoConfig:
    cfg = geo.PRESETS[args.preset]()
    overrides = {}
    if args.chi:
        overrides["bond_dim"] = args.chi[0]
    if args.k is not None:
        overrides["k_sites"] = args.k
    for flag, name in (("iters", "n_iters"), ("t_init", "t_init"), ("t_final", "t_final"),
                       ("samples_init", "n_init_samples"), ("samples_train", "n_train_samples"),
                       ("samples_new", "n_new_samples")):
        if getattr(args, flag) is not None:
            overrides[name] = getattr(args, flag)
    train = cfg.train
    if args.max_epochs is not None:
        train = replace(train, max_epochs=args.max_epochs)
    if args.learning_rate is not None:
        train = replace(train, learning_rate=args.learning_rate)
    return replace(cfg, train=train, **overrides)


def _baseline_result(inst, tour: Tour, out: Path, mode: str, fmt: str) -> dict:
    opt = reference_optimum(inst)
    res = {"instance": inst.name, "mode": mode, "cost": tour.cost, "optimum": opt,
           "gap": None if opt is None else format_gap(gap_percent(tour.cost, opt)),
           "order": list(tour.order)}
    stem = f"{mode}_{inst.name}"
    if fmt == "json":
        (out / f"{stem}.json").write_text(json.dumps(res, sort_keys=True, indent=1))
    else:
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance", "mode", "cost", "optimum", "gap"])
            w.writerow([inst.name, mode, tour.cost, "" if opt is None else opt, res["gap"] or ""])
    emit_tour_geometry(inst, tour, out / f"tour_{stem}.csv")
    return res


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    instances = [resolve_instance(s) for s in args.instance]
    config = config_from_args(args)

    if args.mode == "table1":
        rows = run_table1(instances, config, args.seeds, out)
        for row in rows:
            print(",".join(str(row[c]) for c in ["instance", *TABLE1_METHODS]))
        return 0

    for inst in instances:
        if args.mode == "geo":
            for rec in run_geo_seeds(inst, config, args.seeds, out, args.format):
                print(f"{inst.name} seed={rec.config['seed']} best={rec.best_cost}")
        elif args.mode in ("swap", "two-opt"):
            search = swap_local_search if args.mode == "swap" else two_opt_local_search
            res = _baseline_result(inst, search(inst), out, args.mode, args.format)
            print(f"{inst.name} {args.mode} cost={res['cost']} gap={res['gap']}")
        elif args.mode == "held-karp":
            _, tour = held_karp(inst)
            res = _baseline_result(inst, tour, out, args.mode, args.format)
            print(f"{inst.name} held-karp cost={res['cost']}")
        elif args.mode == "bonddim-study":
            chis = args.chi or list(BONDDIM_CHIS)
            rows = []
            for seed in args.seeds:
                study = run_bonddim_study(inst, chis, config, seed, out)
                for chi in chis:
                    rows.append([seed, chi, study["tv"][chi]["tv_target"], study["tv"][chi]["tv_drawn"]])
                    print(f"{inst.name} seed={seed} chi={chi} tv={study['tv'][chi]['tv_target']:.4f}")
            with open(out / f"bonddim_tv_{inst.name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["seed", "chi", "tv_target", "tv_drawn"])
                w.writerows(rows)
        elif args.mode == "trainer-compare":
            chis = args.chi or [16]
            for seed in args.seeds:
                res = run_trainer_compare(inst, chis, config, seed, out)
                for chi, tr in res.items():
                    print(f"{inst.name} seed={seed} chi={chi} ad_nll={tr['ad'].final:.4f} "
                          f"dmrg_nll={tr['dmrg'].final:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
