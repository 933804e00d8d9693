"""Fitting a Born machine to weighted samples.

The loss is the weighted negative log-likelihood

    nll = -sum_i w_i (2 log|psi(x_i)| - log Z)

Gradients are obtained by a reverse sweep over the contraction network: a
forward pass stores the (normalised) left environments of every sample, the
backward pass accumulates ``outer(left, right) / psi`` into the slice of each
site selected by the sample. ``d log Z`` comes from the transfer-matrix
environments, so no decomposition is ever differentiated.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from tngeo.mps import Mps, log_z, mixed_canonicalize, right_canonicalize, transfer_step
from tngeo.tensor import contract_left_batch, group_rows, svd, truncated_svd

log = logging.getLogger(__name__)

# sample rows processed per chunk in the gradient pass (bounds memory)
_CHUNK_ENTRIES = 1 << 22


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    tolerance: float = 1e-4
    patience: int = 2
    max_epochs: int = 1000
    # one recorded iteration is this many optimizer updates
    steps_per_epoch: int = 2
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    dmrg_learning_rate: float = 0.05
    track_entropy: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.tolerance <= 0:
            raise ValueError("learning_rate and tolerance must be positive")
        if not (0 < self.adamw.beta1 < 1 and 0 < self.adamw.beta2 < 1):
            raise ValueError("AdamW betas must lie in (0, 1)")
        if self.patience < 1 or self.steps_per_epoch < 1:
            raise ValueError("patience and steps_per_epoch must be >= 1")


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class NllTrace:
    epochs: list[int] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    entropy: list[float | None] = field(default_factory=list)

    def append(self, epoch, value, entropy=None):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("trace epochs must increase")
        self.epochs.append(int(epoch))
        self.nll.append(float(value))
        self.entropy.append(None if entropy is None else float(entropy))

    def __len__(self):
        return len(self.epochs)

    @property
    def final(self) -> float:
        return self.nll[-1]

    def rows(self):
        return list(zip(self.epochs, self.nll, self.entropy))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "nll", "entropy"])
            for e, v, s in self.rows():
                w.writerow([e, repr(v), "" if s is None else repr(s)])


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, epoch, trace):
        super().__init__(message)
        self.epoch = epoch
        self.trace = trace


def merge_duplicates(configs, weights) -> tuple[np.ndarray, np.ndarray]:
    """Collapse identical configurations, summing their weights."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(configs, dtype=np.int64)))
    w = np.asarray(weights, dtype=np.float64)
    keys = x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=w, minlength=len(first))
    return x[first], merged


class TrainingSet:
    """Deduplicated samples with per-chunk, per-site row groupings cached."""

    def __init__(self, configs, weights, num_sites=None, physical_dim=None, chunk_rows=None):
        x = np.atleast_2d(np.asarray(configs, dtype=np.int64))
        if weights is None:
            weights = np.full(len(x), 1.0 / len(x))
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != len(x):
            raise ValueError("one weight per sample required")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if num_sites is not None and x.shape[1] != num_sites:
            raise ValueError("sample length differs from the number of sites")
        if physical_dim is not None and (x.min() < 0 or x.max() >= physical_dim):
            raise ValueError("sample contains an out-of-range city index")
        self.x, self.w = merge_duplicates(x, w)
        self.chunk_rows = chunk_rows
        self._chunks = None

    def __len__(self):
        return len(self.x)

    def chunks(self, bond_dim):
        if self._chunks is None:
            n, s = self.x.shape
            rows = self.chunk_rows or max(1, _CHUNK_ENTRIES // (s * max(bond_dim, 1)))
            self._chunks = []
            for a in range(0, n, rows):
                xc = self.x[a:a + rows]
                groups = [list(group_rows(xc[:, k])) for k in range(s)]
                self._chunks.append((xc, self.w[a:a + rows], groups))
        return self._chunks


def _as_training_set(model: Mps, samples, weights) -> TrainingSet:
    if isinstance(samples, TrainingSet):
        return samples
    return TrainingSet(samples, weights, model.num_sites, model.physical_dim)


def _grouped_left(env, a, groups):
    out = np.empty((env.shape[0], a.shape[2]))
    for sym, rows in groups:
        out[rows] = env[rows] @ a[:, sym, :]
    return out


def _grouped_right(env, a, groups):
    out = np.empty((env.shape[0], a.shape[0]))
    for sym, rows in groups:
        out[rows] = env[rows] @ a[:, sym, :].T
    return out


def _normalise_rows(env):
    nrm = np.linalg.norm(env, axis=1)
    nrm[nrm == 0] = 1.0
    return env / nrm[:, None], np.log(nrm)


def _sample_term(sites, x, w, groups, want_grad):
    """``sum_i w_i log|psi_i|`` and its gradient for one chunk."""
    s = len(sites)
    lefts = [np.ones((len(x), 1))]
    for k in range(s - 1):
        env, _ = _normalise_rows(_grouped_left(lefts[-1], sites[k], groups[k]))
        lefts.append(env)
    grads = [np.zeros_like(a) for a in sites] if want_grad else None
    right = np.ones((len(x), 1))
    right_log = np.zeros(len(x))
    for k in range(s - 1, -1, -1):
        rk = _grouped_right(right, sites[k], groups[k])
        c = np.einsum("ba,ba->b", lefts[k], rk)
        if want_grad:
            coef = w / c
            scaled = lefts[k] * coef[:, None]
            for sym, rows in groups[k]:
                grads[k][:, sym, :] += scaled[rows].T @ right[rows]
        if k > 0:
            right, lg = _normalise_rows(rk)
            right_log += lg
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(c)) + right_log
    return float(w @ log_abs), grads


def _log_z_gradient(sites):
    """Gradient of ``log Z`` with respect to every site."""
    envs = [np.ones((1, 1))]
    for a in sites[:-1]:
        e = transfer_step(envs[-1], a)
        envs.append(e / np.trace(e))
    grads = [None] * len(sites)
    f = np.ones((1, 1))
    for k in range(len(sites) - 1, -1, -1):
        a = sites[k]
        g = np.tensordot(np.tensordot(envs[k], a, axes=([1], [0])), f, axes=([2], [0]))
        grads[k] = 2.0 * g / np.sum(a * g)
        f = np.tensordot(np.tensordot(a, f, axes=([2], [0])), a, axes=([1, 2], [1, 2]))
        f /= np.trace(f)
    return grads


def nll_and_gradient(model: Mps, samples, weights=None, want_grad=True):
    data = _as_training_set(model, samples, weights)
    total_w = float(data.w.sum())
    acc = 0.0
    grads = [np.zeros_like(a) for a in model.sites] if want_grad else None
    for x, w, groups in data.chunks(model.bond_dim):
        val, g = _sample_term(model.sites, x, w, groups, want_grad)
        acc += val
        if want_grad:
            for k in range(len(grads)):
                grads[k] += g[k]
    nll = -2.0 * acc + total_w * log_z(model)
    if want_grad:
        gz = _log_z_gradient(model.sites)
        grads = [-2.0 * g + total_w * z for g, z in zip(grads, gz)]
    return nll, grads


def weighted_nll(model: Mps, samples, weights=None) -> float:
    return nll_and_gradient(model, samples, weights, want_grad=False)[0]


def nll_gradient(model: Mps, samples, weights=None) -> list[np.ndarray]:
    return nll_and_gradient(model, samples, weights)[1]


def adamw_step(params, grads, state: AdamWState, config: TrainConfig):
    """One decoupled-weight-decay Adam update (bias corrected)."""
    opt = config.adamw
    lr = config.learning_rate
    t = state.step + 1
    b1, b2 = opt.beta1, opt.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + opt.eps_hat) + opt.weight_decay * p
        new_p.append(p - lr * update)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamWState(new_m, new_v, t)


class _Stopper:
    def __init__(self, config: TrainConfig):
        self.tol = config.tolerance
        self.patience = config.patience
        self.stalls = 0
        self.prev = None

    def update(self, value) -> bool:
        if self.prev is not None:
            if abs(self.prev - value) < self.tol:
                self.stalls += 1
            else:
                self.stalls = 0
        self.prev = value
        return self.stalls >= self.patience


def _check_finite(value, grads, epoch, trace):
    if not np.isfinite(value) or (grads is not None and not all(np.all(np.isfinite(g)) for g in grads)):
        norms = [] if grads is None else [float(np.linalg.norm(g)) for g in grads]
        raise TrainingDiverged(
            f"non-finite loss {value!r} at epoch {epoch}; gradient norms {norms}",
            epoch,
            trace,
        )


def fit(model: Mps, samples, weights=None, config: TrainConfig | None = None):
    """Full-batch AdamW on every tensor entry until the NLL stops improving.

    Returns the trained (non-canonical) model and its trace. An epoch is
    ``config.steps_per_epoch`` updates; training stops after ``patience``
    consecutive epochs whose NLL change is below ``tolerance`` in magnitude,
    so the transient rise of the first Adam steps does not end a fit.
    """
    config = config or TrainConfig()
    data = _as_training_set(model, samples, weights)
    params = [a.copy() for a in model.sites]
    state = AdamWState.zeros_like(params)
    trace = NllTrace()
    stopper = _Stopper(config)

    def current(p):
        return Mps(p, canonical=False, bond_dim=model.bond_dim)

    value, grads = nll_and_gradient(current(params), data)
    for epoch in range(config.max_epochs + 1):
        _check_finite(value, grads, epoch, trace)
        trace.append(epoch, value, _entropy_or_none(current(params), config))
        if epoch == config.max_epochs or stopper.update(value):
            break
        for step in range(config.steps_per_epoch):
            params, state = adamw_step(params, grads, state, config)
            value, grads = nll_and_gradient(current(params), data)
            if step + 1 < config.steps_per_epoch:
                _check_finite(value, grads, epoch, trace)
    log.debug("fit: %d epochs, nll %.6f", trace.epochs[-1], trace.final)
    return current(params), trace


def _entropy_or_none(model, config):
    return bipartite_entropy(model) if config.track_entropy else None


# -- DMRG-style two-site training -------------------------------------------


def _pair_groups(x, k, d):
    return list(group_rows(x[:, k] * d + x[:, k + 1]))


def _two_site_amplitudes(theta, left, right, groups, d):
    c = np.empty(left.shape[0])
    for code, rows in groups:
        j1, j2 = divmod(code, d)
        c[rows] = np.einsum("ba,ba->b", left[rows] @ theta[:, j1, j2, :], right[rows])
    return c


def _two_site_nll(theta, left, right, w, groups, d):
    c = _two_site_amplitudes(theta, left, right, groups, d)
    with np.errstate(divide="ignore"):
        return float(-w @ np.log(c * c) + w.sum() * np.log(np.sum(theta * theta)))


def _two_site_gradient(theta, left, right, w, groups, d):
    """NLL gradient with respect to the merged tensor of a mixed-canonical MPS."""
    grad = np.zeros_like(theta)
    c = _two_site_amplitudes(theta, left, right, groups, d)
    coef = w / c
    scaled = left * coef[:, None]
    for code, rows in groups:
        j1, j2 = divmod(code, d)
        grad[:, j1, j2, :] = scaled[rows].T @ right[rows]
    # sites outside the pair are isometries, so Z == |theta|^2
    return -2.0 * grad + float(w.sum()) * 2.0 * theta / np.sum(theta * theta)


# step halvings tried before a bond update is skipped
_MAX_BACKTRACK = 30


def _split(theta, max_bond):
    l, d, _, r = theta.shape
    u, sv, vt = truncated_svd(theta.reshape(l * d, d * r), max_bond)
    return u, sv / np.linalg.norm(sv), vt


def _right_envs(sites, x):
    """``rights[k]``: normalised environment of sites ``k..S-1`` (``rights[S]`` = 1)."""
    s = len(sites)
    rights = [None] * (s + 1)
    rights[s] = np.ones((len(x), 1))
    for k in range(s - 1, -1, -1):
        rights[k], _ = _normalise_rows(
            _grouped_right(rights[k + 1], sites[k], list(group_rows(x[:, k])))
        )
    return rights


def _update_bond(sites, k, left, right, data, lr, max_bond, direction):
    """Gradient step on the merged pair, then a truncated SVD split.

    The step is halved until the truncated result lowers the NLL. Amplitudes
    of rarely seen pairs can be tiny, and their ``1/psi`` terms make a fixed
    step overshoot; truncation can also undo a step's gain. With the pair as
    gauge centre the local loss is the full NLL, so every accepted update is
    a descent step on the whole model.
    """
    d = sites[k].shape[1]
    theta = np.tensordot(sites[k], sites[k + 1], axes=([2], [0]))
    theta /= np.linalg.norm(theta)
    groups = _pair_groups(data.x, k, d)
    grad = _two_site_gradient(theta, left, right, data.w, groups, d)
    best = _two_site_nll(theta, left, right, data.w, groups, d)
    u, s, vt = _split(theta, max_bond)
    step = lr
    for _ in range(_MAX_BACKTRACK):
        cu, cs, cvt = _split(theta - step * grad, max_bond)
        merged = ((cu * cs) @ cvt).reshape(theta.shape)
        value = _two_site_nll(merged, left, right, data.w, groups, d)
        if np.isfinite(value) and value <= best:
            u, s, vt = cu, cs, cvt
            break
        step *= 0.5
    l, r = theta.shape[0], theta.shape[3]
    if direction == "right":
        sites[k] = u.reshape(l, d, len(s))
        sites[k + 1] = (s[:, None] * vt).reshape(len(s), d, r)
    else:
        sites[k] = (u * s).reshape(l, d, len(s))
        sites[k + 1] = vt.reshape(len(s), d, r)


def dmrg_sweep(model: Mps, data: TrainingSet, lr: float, max_bond: int) -> Mps:
    """One right sweep followed by one left sweep of two-site updates.

    ``model`` must be right-canonical (gauge centre on site 0).
    """
    sites = [a.copy() for a in model.sites]
    x = data.x
    s = len(sites)
    rights = _right_envs(sites, x)
    left = np.ones((len(x), 1))
    lefts = [left]
    for k in range(s - 1):
        _update_bond(sites, k, lefts[k], rights[k + 2], data, lr, max_bond, "right")
        env, _ = _normalise_rows(_grouped_left(lefts[k], sites[k], list(group_rows(x[:, k]))))
        lefts.append(env)
    right = np.ones((len(x), 1))
    for k in range(s - 2, -1, -1):
        _update_bond(sites, k, lefts[k], right, data, lr, max_bond, "left")
        right, _ = _normalise_rows(
            _grouped_right(right, sites[k + 1], list(group_rows(x[:, k + 1])))
        )
    return Mps(sites, canonical=True, bond_dim=max_bond)


def dmrg_fit(model: Mps, samples, weights=None, config: TrainConfig | None = None):
    """Two-site sweeping trainer; one trace entry per right+left sweep pair."""
    config = config or TrainConfig()
    data = _as_training_set(model, samples, weights)
    current = right_canonicalize(model)
    chi = model.bond_dim
    trace = NllTrace()
    stopper = _Stopper(config)
    for epoch in range(config.max_epochs + 1):
        value = weighted_nll(current, data)
        _check_finite(value, None, epoch, trace)
        trace.append(epoch, value, _entropy_or_none(current, config))
        if epoch == config.max_epochs or stopper.update(value):
            break
        current = dmrg_sweep(current, data, config.dmrg_learning_rate, chi)
    return current, trace


def bipartite_entropy(model: Mps) -> float:
    """Entanglement entropy (nats) across the middle cut of the chain."""
    s_len = model.num_sites
    if s_len < 2:
        raise ValueError("entropy needs at least two sites")
    m = max(0, s_len // 2 - 1)
    mixed = mixed_canonicalize(model, m)
    a, b = mixed.sites[m], mixed.sites[m + 1]
    theta = np.tensordot(a, b, axes=([2], [0]))
    l, d1, d2, r = theta.shape
    _, s, _ = svd(theta.reshape(l * d1, d2 * r))
    p = s**2 / np.sum(s**2)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))
