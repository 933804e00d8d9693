"""Matrix product state Born machine over city sequences.

An :class:`Mps` with ``S`` sites of physical dimension ``d`` assigns the
amplitude ``psi(x)`` to every sequence ``x`` in ``{0..d-1}^S``; the model
probability is ``psi(x)^2 / Z``. The full model has ``S == N`` (one site per
tour position); the k-site model has ``S == k`` and describes k-grams.

Conventions: site tensors are float64 ``(left, physical, right)`` arrays, the
outer bonds are 1, and right-canonical means
``sum_{j,a} A[b, j, a] A[b', j, a] == delta(b, b')`` for sites ``1..S-1``.
All environment vectors are renormalised site by site with the log norms
accumulated separately, so chains of 52 sites at bond dimension 128 do not
overflow.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from tngeo.tensor import contract_left_batch, qr_decompose

FORMAT_VERSION = 1
_MAGIC = b"TNGEO-MPS"

# rows x physical x right-bond entries held at once while sampling
_SAMPLE_BLOCK = 1 << 22


@dataclass
class Mps:
    sites: list[np.ndarray]
    canonical: bool = False
    bond_dim: int = field(default=0)

    def __post_init__(self):
        if len(self.sites) < 1:
            raise ValueError("an MPS needs at least one site")
        self.sites = [np.asarray(a, dtype=np.float64) for a in self.sites]
        if self.sites[0].shape[0] != 1 or self.sites[-1].shape[2] != 1:
            raise ValueError("outer bonds must have dimension 1")
        d = self.sites[0].shape[1]
        for k, (a, b) in enumerate(zip(self.sites, self.sites[1:])):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond mismatch between sites {k} and {k + 1}")
        for a in self.sites:
            if a.ndim != 3 or a.shape[1] != d:
                raise ValueError("every site needs the same physical dimension")
        if not self.bond_dim:
            self.bond_dim = max(max(a.shape[0], a.shape[2]) for a in self.sites)

    @property
    def num_sites(self) -> int:
        return len(self.sites)

    @property
    def physical_dim(self) -> int:
        return self.sites[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        return [a.shape[2] for a in self.sites[:-1]]

    def copy(self) -> "Mps":
        return replace(self, sites=[a.copy() for a in self.sites])


def init_random(num_sites: int, physical_dim: int, bond_dim: int, seed) -> Mps:
    """Gaussian entries with standard deviation 1/sqrt(bond_dim * physical_dim)."""
    if num_sites < 2 or physical_dim < 2 or bond_dim < 1:
        raise ValueError("need num_sites >= 2, physical_dim >= 2, bond_dim >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(bond_dim * physical_dim)
    bonds = [1] + [bond_dim] * (num_sites - 1) + [1]
    sites = [
        rng.normal(0.0, scale, size=(bonds[k], physical_dim, bonds[k + 1]))
        for k in range(num_sites)
    ]
    return Mps(sites, canonical=False, bond_dim=bond_dim)


def right_canonicalize(model: Mps) -> Mps:
    """Gauge-equivalent copy with sites 1..S-1 right-canonical.

    Each site is unfolded to ``(physical*right, left)`` and QR-factorised;
    ``Q^T`` becomes the new site and ``R^T`` is absorbed into its left
    neighbour. Bonds may shrink to ``min(left, physical*right)``.
    """
    sites = [a.copy() for a in model.sites]
    for k in range(len(sites) - 1, 0, -1):
        left, d, right = sites[k].shape
        q, r = qr_decompose(sites[k].reshape(left, d * right).T)
        new_left = q.shape[1]
        sites[k] = q.T.reshape(new_left, d, right)
        sites[k - 1] = np.tensordot(sites[k - 1], r.T, axes=([2], [0]))
    return Mps(sites, canonical=True, bond_dim=model.bond_dim)


def left_canonicalize_upto(model: Mps, center: int) -> Mps:
    """Make sites ``0..center-1`` left-canonical, pushing the gauge into ``center``."""
    sites = [a.copy() for a in model.sites]
    for k in range(center):
        left, d, right = sites[k].shape
        q, r = qr_decompose(sites[k].reshape(left * d, right))
        sites[k] = q.reshape(left, d, q.shape[1])
        sites[k + 1] = np.tensordot(r, sites[k + 1], axes=([1], [0]))
    return Mps(sites, canonical=False, bond_dim=model.bond_dim)


def mixed_canonicalize(model: Mps, center: int) -> Mps:
    """Left-canonical before ``center``, right-canonical after it."""
    return left_canonicalize_upto(right_canonicalize(model), center)


def is_right_canonical(model: Mps, atol: float = 1e-10) -> bool:
    for a in model.sites[1:]:
        m = a.reshape(a.shape[0], -1)
        if not np.allclose(m @ m.T, np.eye(a.shape[0]), atol=atol):
            return False
    return True


def _as_configs(configs, model: Mps) -> np.ndarray:
    x = np.atleast_2d(np.asarray(configs, dtype=np.int64))
    if x.shape[1] != model.num_sites:
        raise ValueError(
            f"configurations have length {x.shape[1]}, model has {model.num_sites} sites"
        )
    if x.size and (x.min() < 0 or x.max() >= model.physical_dim):
        raise ValueError("configuration contains an out-of-range city index")
    return x


def log_amplitudes(model: Mps, configs) -> tuple[np.ndarray, np.ndarray]:
    """Signs and ``log|psi|`` for a batch of configurations."""
    x = _as_configs(configs, model)
    env = np.ones((x.shape[0], 1))
    log_norm = np.zeros(x.shape[0])
    dead = np.zeros(x.shape[0], dtype=bool)
    for k, a in enumerate(model.sites):
        env = contract_left_batch(env, a, x[:, k])
        nrm = np.linalg.norm(env, axis=1)
        zero = nrm == 0
        dead |= zero
        nrm[zero] = 1.0
        log_norm += np.log(nrm)
        env /= nrm[:, None]
    sign = np.sign(env[:, 0])
    sign[dead] = 0.0
    log_norm[dead] = -np.inf
    return sign, log_norm


def log_amplitude(model: Mps, config) -> tuple[float, float]:
    """``(sign, log|psi(config)|)`` for one configuration."""
    s, la = log_amplitudes(model, [config])
    return float(s[0]), float(la[0])


def transfer_step(env: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``E'[c, d] = sum_{a, b, j} E[a, b] A[a, j, c] A[b, j, d]``."""
    x = np.tensordot(env, a, axes=([0], [0]))
    return np.tensordot(x, a, axes=([0, 1], [0, 1]))


def log_z(model: Mps) -> float:
    """Exact ``log sum_x psi(x)^2`` by transfer-matrix contraction."""
    env = np.ones((1, 1))
    acc = 0.0
    for a in model.sites:
        env = transfer_step(env, a)
        tr = np.trace(env)
        acc += np.log(tr)
        env /= tr
    return acc + float(np.log(env[0, 0]))


def log_probs(model: Mps, configs) -> np.ndarray:
    """Born-rule ``log P(x)`` for a batch of configurations (no masking)."""
    _, la = log_amplitudes(model, configs)
    return 2.0 * la - log_z(model)


# -- masked autoregressive sampling ----------------------------------------


def _require_canonical(model: Mps) -> None:
    if not model.canonical:
        raise ValueError("sampling requires a right-canonical model")


def _masked_conditionals(env: np.ndarray, a: np.ndarray, visited: np.ndarray):
    """Contract ``env`` into site ``a`` and return masked weights.

    Returns ``(c, p, fallback_rows)`` where ``c[b, j]`` is the candidate new
    environment for city ``j`` and ``p`` the normalised masked Born weights.
    Rows whose unmasked weight vanishes fall back to uniform over unvisited
    cities.
    """
    b = env.shape[0]
    left, d, right = a.shape
    c = (env @ a.reshape(left, d * right)).reshape(b, d, right)
    p = np.einsum("bjr,bjr->bj", c, c)
    p[visited] = 0.0
    total = p.sum(axis=1)
    bad = ~(total > 0) | ~np.isfinite(total)
    if bad.any():
        p[bad] = (~visited[bad]).astype(np.float64)
        total[bad] = p[bad].sum(axis=1)
    p /= total[:, None]
    return c, p, bad


def _draw(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    u = 1.0 - rng.random(p.shape[0])  # (0, 1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), p.shape[1] - 1)


def _advance(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    env = c[np.arange(len(x)), x]
    nrm = np.linalg.norm(env, axis=1)
    nrm[nrm == 0] = 1.0
    return env / nrm[:, None]


def _block_rows(model: Mps) -> int:
    d = model.physical_dim
    widest = max(a.shape[2] for a in model.sites)
    return max(1, _SAMPLE_BLOCK // (d * widest))


def sample_permutations(model: Mps, n: int, rng) -> tuple[np.ndarray, int]:
    """Draw ``n`` tours with the masked autoregressive sampler.

    Returns the ``(n, N)`` array of tours and the number of zero-mass
    fallbacks that occurred.
    """
    _require_canonical(model)
    if model.num_sites != model.physical_dim:
        raise ValueError("the full sampler needs one site per city")
    rng = np.random.default_rng(rng)
    n_cities = model.physical_dim
    out = np.empty((n, n_cities), dtype=np.int64)
    fallbacks = 0
    block = _block_rows(model)
    for start in range(0, n, block):
        b = min(block, n - start)
        env = np.ones((b, 1))
        visited = np.zeros((b, n_cities), dtype=bool)
        rows = np.arange(b)
        for k, a in enumerate(model.sites):
            c, p, bad = _masked_conditionals(env, a, visited)
            fallbacks += int(bad.sum())
            x = _draw(p, rng)
            out[start:start + b, k] = x
            visited[rows, x] = True
            env = _advance(c, x)
    return out, fallbacks


def sample_permutation(model: Mps, rng) -> np.ndarray:
    tours, _ = sample_permutations(model, 1, rng)
    return tours[0]


def _context_env(model: Mps, context: np.ndarray) -> np.ndarray:
    """Left environment after feeding ``context`` through sites 0..k-2."""
    env = np.ones((context.shape[0], 1))
    for s in range(context.shape[1]):
        env = contract_left_batch(env, model.sites[s], context[:, s])
        nrm = np.linalg.norm(env, axis=1)
        nrm[nrm == 0] = 1.0
        env /= nrm[:, None]
    return env


def sample_permutations_ksite(model: Mps, n_cities: int, n: int, rng) -> tuple[np.ndarray, int]:
    """Sliding-window sampler for a k-site model.

    Positions ``0..k-2`` contract straight through sites ``0..k-2``. Each later
    position rebuilds the left environment from the last ``k-1`` cities and
    samples from the last site. The visited mask is global over the tour.
    """
    _require_canonical(model)
    k = model.num_sites
    if not 2 <= k <= n_cities or model.physical_dim != n_cities:
        raise ValueError(f"bad k-site model: k={k}, d={model.physical_dim}, N={n_cities}")
    rng = np.random.default_rng(rng)
    out = np.empty((n, n_cities), dtype=np.int64)
    fallbacks = 0
    block = _block_rows(model)
    last = model.sites[-1]
    for start in range(0, n, block):
        b = min(block, n - start)
        tours = out[start:start + b]
        env = np.ones((b, 1))
        visited = np.zeros((b, n_cities), dtype=bool)
        rows = np.arange(b)
        for t in range(k - 1):
            c, p, bad = _masked_conditionals(env, model.sites[t], visited)
            fallbacks += int(bad.sum())
            x = _draw(p, rng)
            tours[:, t] = x
            visited[rows, x] = True
            env = _advance(c, x)
        for t in range(k - 1, n_cities):
            env = _context_env(model, tours[:, t - k + 1:t])
            _, p, bad = _masked_conditionals(env, last, visited)
            fallbacks += int(bad.sum())
            x = _draw(p, rng)
            tours[:, t] = x
            visited[rows, x] = True
    return out, fallbacks


def sample_permutation_ksite(model: Mps, n_cities: int, rng) -> np.ndarray:
    tours, _ = sample_permutations_ksite(model, n_cities, 1, rng)
    return tours[0]


def _log_pick(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p[np.arange(len(x)), x])


def masked_chain_logprob(model: Mps, tours) -> np.ndarray | float:
    """Log-probability that the masked sampler emits each tour.

    Accepts one tour or a batch; returns a float or an array accordingly.
    """
    _require_canonical(model)
    single = np.ndim(tours) == 1
    x = _as_configs(tours, model)
    b, n_cities = x.shape
    env = np.ones((b, 1))
    visited = np.zeros((b, model.physical_dim), dtype=bool)
    rows = np.arange(b)
    total = np.zeros(b)
    for k, a in enumerate(model.sites):
        c, p, _ = _masked_conditionals(env, a, visited)
        total += _log_pick(p, x[:, k])
        visited[rows, x[:, k]] = True
        env = _advance(c, x[:, k])
    return float(total[0]) if single else total


def ksite_chain_logprob(model: Mps, tours) -> np.ndarray | float:
    """Log-probability that the sliding-window sampler emits each tour."""
    _require_canonical(model)
    single = np.ndim(tours) == 1
    x = np.atleast_2d(np.asarray(tours, dtype=np.int64))
    b, n_cities = x.shape
    k = model.num_sites
    env = np.ones((b, 1))
    visited = np.zeros((b, model.physical_dim), dtype=bool)
    rows = np.arange(b)
    total = np.zeros(b)
    for t in range(k - 1):
        c, p, _ = _masked_conditionals(env, model.sites[t], visited)
        total += _log_pick(p, x[:, t])
        visited[rows, x[:, t]] = True
        env = _advance(c, x[:, t])
    for t in range(k - 1, n_cities):
        env = _context_env(model, x[:, t - k + 1:t])
        _, p, _ = _masked_conditionals(env, model.sites[-1], visited)
        total += _log_pick(p, x[:, t])
        visited[rows, x[:, t]] = True
    return float(total[0]) if single else total


# -- serialisation -----------------------------------------------------------


def save(model: Mps, path) -> None:
    """Magic line, one JSON header line, then raw little-endian float64 data."""
    header = {
        "version": FORMAT_VERSION,
        "bond_dim": model.bond_dim,
        "canonical": model.canonical,
        "shapes": [list(a.shape) for a in model.sites],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(json.dumps(header).encode() + b"\n")
        for a in model.sites:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> Mps:
    data = Path(path).read_bytes()
    first, rest = data.split(b"\n", 1)
    magic, version = first.split(b" ")
    if magic != _MAGIC or int(version) != FORMAT_VERSION:
        raise ValueError(f"not a version-{FORMAT_VERSION} MPS file")
    head, payload = rest.split(b"\n", 1)
    header = json.loads(head)
    sites, offset = [], 0
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset * 8)
        sites.append(arr.reshape(shape).astype(np.float64))
        offset += count
    if offset * 8 != len(payload):
        raise ValueError("trailing bytes in MPS file")
    return Mps(sites, canonical=header["canonical"], bond_dim=header["bond_dim"])
