"""Dense kernels shared by the MPS code.

A site tensor is a float64 array of shape ``(left_bond, physical, right_bond)``.
QR and SVD delegate to LAPACK through numpy; the wrappers fix sign
conventions and validate inputs.
"""
from __future__ import annotations

import numpy as np


class NumericError(ArithmeticError):
    pass


def contract_left(env: np.ndarray, tensor: np.ndarray, symbol: int) -> np.ndarray:
    """v[a] = sum_b env[b] * tensor[b, symbol, a]."""
    if tensor.ndim != 3 or env.shape != (tensor.shape[0],):
        raise ValueError(
            f"env of shape {env.shape} does not match tensor {tensor.shape}"
        )
    if not 0 <= symbol < tensor.shape[1]:
        raise ValueError(f"symbol {symbol} out of range for {tensor.shape[1]}")
    return env @ tensor[:, symbol, :]


def contract_left_batch(env: np.ndarray, tensor: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Row-wise ``env[b] @ tensor[:, symbols[b], :]`` for a batch of rows.

    Rows are grouped by symbol so each group is one matrix product; this
    avoids materialising a (batch, left, right) gather.
    """
    out = np.empty((env.shape[0], tensor.shape[2]), dtype=np.result_type(env, tensor))
    for sym, rows in group_rows(symbols):
        out[rows] = env[rows] @ tensor[:, sym, :]
    return out


def contract_right_batch(env: np.ndarray, tensor: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Row-wise ``tensor[:, symbols[b], :] @ env[b]``."""
    out = np.empty((env.shape[0], tensor.shape[0]), dtype=np.result_type(env, tensor))
    for sym, rows in group_rows(symbols):
        out[rows] = env[rows] @ tensor[:, sym, :].T
    return out


def group_rows(symbols: np.ndarray):
    """Yield ``(symbol, row_indices)`` for each distinct symbol."""
    symbols = np.asarray(symbols)
    order = np.argsort(symbols, kind="stable")
    sorted_syms = symbols[order]
    cuts = np.flatnonzero(np.diff(sorted_syms)) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [len(order)]))
    for a, b in zip(starts, stops):
        if b > a:
            yield int(sorted_syms[a]), order[a:b]


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains non-finite entries")


def qr_decompose(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with a non-negative diagonal on R."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ValueError(f"expected a non-empty matrix, got shape {m.shape}")
    _check_finite(m)
    q, r = np.linalg.qr(m)
    signs = np.where(np.diagonal(r) < 0, -1.0, 1.0)
    q = q * signs
    r = r * signs[:, None]
    return q, r


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD, singular values in non-increasing order."""
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge for shape {m.shape}: {exc}") from exc
    return u, s, vt


def truncated_svd(m: np.ndarray, max_rank: int):
    u, s, vt = svd(m)
    k = max(1, min(max_rank, len(s)))
    return u[:, :k], s[:k], vt[:k]
