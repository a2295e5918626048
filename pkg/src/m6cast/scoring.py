"""Competition metrics: realized quintiles, RPS, best constant and information ratio."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "N_QUINTILES",
    "DegenerateIRError",
    "quintiles_from_returns",
    "quintiles_batch",
    "rps",
    "rps_per_asset",
    "rps_gradient",
    "best_constant",
    "information_ratio",
    "information_ratio_gradient",
    "validate_submission",
    "write_matrix_csv",
    "read_matrix_csv",
]

N_QUINTILES = 5


class DegenerateIRError(ValueError):
    """The portfolio had zero return dispersion over the window."""


def quintiles_from_returns(returns) -> np.ndarray:
    """Quintile membership from horizon returns, column 0 holding the best assets.

    Assets are ranked in descending order and rank ``r`` (1-based) belongs to
    quintile ``ceil(r / (N/5))``. A group of tied assets shares the quintile
    mass of the rank block it occupies equally.
    """
    r = np.asarray(returns, dtype=np.float64).ravel()
    n = r.size
    if n == 0 or n % N_QUINTILES:
        raise ValueError(f"number of assets must be a positive multiple of 5, got {n}")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")
    block = n // N_QUINTILES
    order = np.argsort(-r, kind="stable")
    sorted_r = r[order]
    position_quintile = np.arange(n) // block
    Q = np.zeros((n, N_QUINTILES))
    start = 0
    while start < n:
        end = start + 1
        while end < n and sorted_r[end] == sorted_r[start]:
            end += 1
        if end - start == 1:
            Q[order[start], position_quintile[start]] = 1.0
        else:
            mass = np.bincount(position_quintile[start:end], minlength=N_QUINTILES) / (end - start)
            Q[order[start:end]] = mass
        start = end
    return Q


def quintiles_batch(returns) -> np.ndarray:
    """:func:`quintiles_from_returns` applied to each row of an (S, N) array."""
    R = np.asarray(returns, dtype=np.float64)
    if R.ndim != 2:
        raise ValueError("expected an (S, N) array")
    S, n = R.shape
    if n == 0 or n % N_QUINTILES:
        raise ValueError(f"number of assets must be a positive multiple of 5, got {n}")
    if not np.all(np.isfinite(R)):
        raise ValueError("returns must be finite")
    order = np.argsort(-R, axis=1, kind="stable")
    sorted_r = np.take_along_axis(R, order, axis=1)
    tied = np.any(sorted_r[:, 1:] == sorted_r[:, :-1], axis=1)
    Q = np.zeros((S, n, N_QUINTILES))
    position_quintile = np.arange(n) // (n // N_QUINTILES)
    rows = np.repeat(np.arange(S), n)
    Q[rows, order.ravel(), np.tile(position_quintile, S)] = 1.0
    for s in np.flatnonzero(tied):
        Q[s] = quintiles_from_returns(R[s])
    return Q


def _cum(M) -> np.ndarray:
    return np.cumsum(np.asarray(M, dtype=np.float64), axis=-1)


def validate_submission(M, atol: float = 1e-9) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != N_QUINTILES:
        raise ValueError(f"submission must have shape (N, 5), got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("submission has non-finite entries")
    if np.any(M < -atol) or np.any(M > 1 + atol):
        raise ValueError("submission entries must lie in [0, 1]")
    bad = np.flatnonzero(np.abs(M.sum(axis=1) - 1.0) > atol)
    if bad.size:
        raise ValueError(f"submission rows {bad.tolist()} do not sum to 1")
    return M


def rps_per_asset(M, Q) -> np.ndarray:
    M = validate_submission(M)
    Q = validate_submission(Q)
    if M.shape != Q.shape:
        raise ValueError(f"shape mismatch: {M.shape} vs {Q.shape}")
    diff = _cum(M) - _cum(Q)
    return np.mean(diff * diff, axis=1)


def rps(M, Q) -> float:
    """Ranked Probability Score, averaged over the five cumulative positions and over assets.

    The uniform submission scores exactly 0.16 against any tie-free quintile
    matrix; the maximum, 0.8, is a full-mass forecast on the wrong extreme.
    """
    return float(np.mean(rps_per_asset(M, Q)))


def rps_gradient(M, Q) -> np.ndarray:
    """Gradient of :func:`rps` with respect to ``M``.

    ``Q`` may be a single quintile matrix or its mean over a batch; the RPS is
    quadratic in the cumulative sums, so batch-averaged losses only depend on
    the mean cumulative truth.
    """
    M = np.asarray(M, dtype=np.float64)
    diff = _cum(M) - _cum(Q)
    n = M.shape[0]
    # d/dM_j of sum_k (cumM_k - cumQ_k)^2 = 2 * sum_{k >= j} diff_k
    tail = np.cumsum(diff[:, ::-1], axis=1)[:, ::-1]
    return 2.0 * tail / (N_QUINTILES * n)


def best_constant(history: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of the realized quintile matrices."""
    if len(history) == 0:
        raise ValueError("history must not be empty")
    stack = np.stack([np.asarray(Q, dtype=np.float64) for Q in history])
    return stack.mean(axis=0)


def _portfolio_log_returns(x, daily_returns) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    R = np.asarray(daily_returns, dtype=np.float64)
    if R.ndim != 2 or R.shape[1] != x.size:
        raise ValueError(f"daily returns must have shape (T, {x.size}), got {R.shape}")
    if R.shape[0] < 2:
        raise ValueError("need at least two days")
    if not np.sum(np.abs(x)) > 0:
        raise ValueError("portfolio weights must not all be zero")
    gross = 1.0 + R @ x
    if np.any(gross <= 0):
        day = int(np.flatnonzero(gross <= 0)[0])
        raise ValueError(f"portfolio wiped out on day {day}")
    return np.log(gross)


def _degenerate(ret: np.ndarray, sdp: float) -> bool:
    # a constant series can leave a rounding-level std behind
    return not sdp > 0.0 or not math.isfinite(sdp) or bool(np.all(ret == ret[0]))


def information_ratio(x, daily_returns) -> float:
    """Cumulative portfolio log-return over the sample std of daily log-returns.

    ``daily_returns`` are simple returns, shape (T, N).
    """
    ret = _portfolio_log_returns(x, daily_returns)
    sdp = float(np.std(ret, ddof=1))
    if _degenerate(ret, sdp):
        raise DegenerateIRError("portfolio daily returns have zero dispersion")
    return float(np.sum(ret)) / sdp


def information_ratio_gradient(x, daily_returns) -> tuple[float, np.ndarray]:
    """IR and its gradient in ``x``, differentiating through the log and the std."""
    R = np.asarray(daily_returns, dtype=np.float64)
    ret = _portfolio_log_returns(x, R)
    T = ret.size
    sdp = float(np.std(ret, ddof=1))
    if _degenerate(ret, sdp):
        raise DegenerateIRError("portfolio daily returns have zero dispersion")
    total = float(np.sum(ret))
    dret = R / (1.0 + R @ np.asarray(x, dtype=np.float64))[:, None]
    dtotal = dret.sum(axis=0)
    dsdp = (ret - ret.mean()) @ dret / ((T - 1) * sdp)
    return total / sdp, dtotal / sdp - total * dsdp / (sdp * sdp)


def write_matrix_csv(path, M, asset_ids=None) -> None:
    """Write an (N, 5) matrix as ``asset_id,q1..q5`` with round-trip precision."""
    M = np.asarray(M, dtype=np.float64)
    asset_ids = list(range(1, M.shape[0] + 1)) if asset_ids is None else list(asset_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id"] + [f"q{k}" for k in range(1, N_QUINTILES + 1)])
        for a, row in zip(asset_ids, M):
            w.writerow([a] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> tuple[list[int], np.ndarray]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expected = ["asset_id"] + [f"q{k}" for k in range(1, N_QUINTILES + 1)]
    if not rows or [h.strip() for h in rows[0]] != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}")
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise ValueError(f"{path}: line {lineno} has {len(row)} fields")
        try:
            ids.append(int(row[0]))
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return ids, np.array(values, dtype=np.float64).reshape(-1, N_QUINTILES)
