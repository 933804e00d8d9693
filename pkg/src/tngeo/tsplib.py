"""TSPLIB instance parsing and the integer distance conventions of TSPLIB.

Only NODE_COORD_SECTION files with EUC_2D, GEO or ATT edge weights are
supported. Distances follow the TSPLIB reference code bit for bit, since the
benchmark optima (and every gap we report) are defined in those units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SUPPORTED_TYPES = ("EUC_2D", "GEO", "ATT")

# Published TSPLIB optima for the bundled benchmark instances.
KNOWN_OPTIMA = {
    "burma14": 3323,
    "ulysses16": 6859,
    "ulysses22": 7013,
    "att48": 10628,
    "eil51": 426,
    "berlin52": 7542,
}

BENCHMARKS = tuple(KNOWN_OPTIMA)


class TsplibError(ValueError):
    """Malformed TSPLIB input."""


class UnsupportedFormatError(TsplibError):
    pass


class StructureError(TsplibError):
    pass


def euc2d_distance(a, b) -> int:
    # nint(x) = (int)(x + 0.5)
    return int(math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) + 0.5)


_PI = 3.141592
_RRR = 6378.388


def _geo_radians(x: float) -> float:
    deg = int(x)
    minutes = x - deg
    return _PI * (deg + 5.0 * minutes / 3.0) / 180.0


def geo_distance(a, b) -> int:
    """TSPLIB geographical distance; coordinates are DDD.MM latitude/longitude.

    Identical points yield 1, as in the reference code. Matrix construction
    overrides the diagonal to 0.
    """
    lat1, lon1 = _geo_radians(a[0]), _geo_radians(a[1])
    lat2, lon2 = _geo_radians(b[0]), _geo_radians(b[1])
    q1 = math.cos(lon1 - lon2)
    q2 = math.cos(lat1 - lat2)
    q3 = math.cos(lat1 + lat2)
    arg = 0.5 * ((1.0 + q1) * q2 - (1.0 - q1) * q3)
    arg = min(1.0, max(-1.0, arg))
    return int(_RRR * math.acos(arg) + 1.0)


def att_distance(a, b) -> int:
    """TSPLIB pseudo-Euclidean distance."""
    r = math.sqrt(((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) / 10.0)
    t = int(r + 0.5)
    return t + 1 if t < r else t


DISTANCE_FUNCTIONS = {
    "EUC_2D": euc2d_distance,
    "GEO": geo_distance,
    "ATT": att_distance,
}


def distance_matrix(coords, edge_weight_type: str) -> np.ndarray:
    fn = DISTANCE_FUNCTIONS[edge_weight_type]
    n = len(coords)
    dist = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = fn(coords[i], coords[j])
    return dist


@dataclass(frozen=True)
class TspInstance:
    name: str
    dimension: int
    edge_weight_type: str
    coords: np.ndarray
    dist: np.ndarray = field(repr=False)

    @property
    def max_dist(self) -> int:
        return int(self.dist.max())

    @classmethod
    def from_coords(cls, name, coords, edge_weight_type="EUC_2D"):
        if edge_weight_type not in SUPPORTED_TYPES:
            raise UnsupportedFormatError(
                f"unsupported EDGE_WEIGHT_TYPE {edge_weight_type!r}"
            )
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        dist = distance_matrix([tuple(c) for c in coords], edge_weight_type)
        dist.setflags(write=False)
        coords.setflags(write=False)
        return cls(name, len(coords), edge_weight_type, coords, dist)


def _split_header(line: str, lineno: int) -> tuple[str, str]:
    if ":" not in line:
        raise TsplibError(f"line {lineno}: malformed header {line!r}")
    key, value = line.split(":", 1)
    return key.strip().upper(), value.strip()


def parse_instance(text: str) -> TspInstance:
    """Parse the text of a TSPLIB ``.tsp`` file."""
    header: dict[str, str] = {}
    coords: list[tuple[float, float]] = []
    in_coords = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.upper().startswith("EOF"):
            break
        if line.upper().startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        if in_coords:
            parts = line.split()
            if len(parts) != 3:
                # another section keyword ends the coordinate block
                if ":" in line or parts[0].isalpha():
                    in_coords = False
                    key, value = _split_header(line, lineno)
                    header[key] = value
                    continue
                raise TsplibError(f"line {lineno}: bad coordinate row {line!r}")
            try:
                coords.append((float(parts[1]), float(parts[2])))
            except ValueError:
                raise TsplibError(
                    f"line {lineno}: bad coordinate row {line!r}"
                ) from None
            continue
        if line.upper().endswith("_SECTION"):
            raise UnsupportedFormatError(
                f"line {lineno}: unsupported section {line!r}"
            )
        key, value = _split_header(line, lineno)
        header[key] = value

    for key in ("NAME", "DIMENSION", "EDGE_WEIGHT_TYPE"):
        if key not in header:
            raise TsplibError(f"missing {key} header")
    ewt = header["EDGE_WEIGHT_TYPE"].upper()
    if ewt not in SUPPORTED_TYPES:
        raise UnsupportedFormatError(f"unsupported EDGE_WEIGHT_TYPE {ewt!r}")
    try:
        dimension = int(header["DIMENSION"])
    except ValueError:
        raise TsplibError(f"bad DIMENSION {header['DIMENSION']!r}") from None
    if len(coords) != dimension:
        raise StructureError(
            f"DIMENSION is {dimension} but {len(coords)} coordinates were given"
        )
    name = header["NAME"].split()[0] if header["NAME"] else ""
    if name.lower().endswith(".tsp"):
        name = name[:-4]  # some files carry the file name in NAME
    return TspInstance.from_coords(name, coords, ewt)


def parse_tour(text: str) -> np.ndarray:
    """Parse a ``.opt.tour`` file into a 0-based city order."""
    order: list[int] = []
    in_tour = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.upper().startswith("TOUR_SECTION"):
            in_tour = True
            continue
        if not in_tour:
            continue
        for tok in line.split():
            v = int(tok)
            if v == -1:
                return np.asarray(order, dtype=np.int64) - 1
            order.append(v)
    if not in_tour:
        raise TsplibError("no TOUR_SECTION found")
    return np.asarray(order, dtype=np.int64) - 1


def read_instance(path) -> TspInstance:
    return parse_instance(Path(path).read_text())


def _data_file(name: str):
    return resources.files("tngeo").joinpath("data").joinpath(name)


def load_benchmark(name: str) -> TspInstance:
    """Load one of the bundled TSPLIB instances by name, e.g. ``"burma14"``."""
    f = _data_file(f"{name}.tsp")
    if not f.is_file():
        raise FileNotFoundError(f"no bundled instance {name!r}")
    return parse_instance(f.read_text())


def load_optimal_tour(name: str) -> np.ndarray | None:
    f = _data_file(f"{name}.opt.tour")
    if not f.is_file():
        return None
    return parse_tour(f.read_text())


def resolve_instance(spec: str) -> TspInstance:
    """Accept either a path to a ``.tsp`` file or a bundled benchmark name."""
    p = Path(spec)
    if p.is_file():
        return read_instance(p)
    return load_benchmark(spec)
