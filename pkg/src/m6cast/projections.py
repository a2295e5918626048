"""Euclidean projections onto simplex-type sets (sorting-based)."""

from __future__ import annotations

import numpy as np

__all__ = ["project_simplex", "project_capped_simplex"]


def project_simplex(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Project the rows of ``v`` onto ``{y >= 0, sum(y) = z}``.

    Accepts a vector or a 2-d array (projected row by row).
    """
    v = np.asarray(v, dtype=np.float64)
    if z <= 0:
        raise ValueError("simplex radius must be positive")
    squeeze = v.ndim == 1
    V = np.atleast_2d(v)
    n = V.shape[1]
    U = np.sort(V, axis=1)[:, ::-1]
    cssv = np.cumsum(U, axis=1) - z
    ind = np.arange(1, n + 1)
    cond = U - cssv / ind > 0
    rho = np.count_nonzero(cond, axis=1)
    tau = cssv[np.arange(V.shape[0]), rho - 1] / rho
    out = np.maximum(V - tau[:, None], 0.0)
    return out[0] if squeeze else out


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Project a vector onto ``{y >= 0, sum(y) <= cap}``.

    Clamping at zero is exact when the clamped vector already satisfies the
    budget; otherwise the budget is active and the answer is the projection
    onto the simplex of radius ``cap``.
    """
    v = np.asarray(v, dtype=np.float64)
    clamped = np.maximum(v, 0.0)
    if clamped.sum() <= cap:
        return clamped
    return project_simplex(v, cap)
