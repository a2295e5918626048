"""Joint predictive distribution of the horizon return matrix.

Each asset gets a marginal for its daily log-return, frozen at submission
time: a Gaussian around the class mean with the current volatility forecast,
or the empirical law of past returns. Gaussian assets are either independent
or coupled through a correlation matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from m6cast.adavol import AdaVolState
from m6cast.returns_ingest import ClassMeans, ReturnPanel
from m6cast.rng import sample_generator

__all__ = [
    "GaussianMarginal",
    "EmpiricalMarginal",
    "Marginal",
    "JointForecast",
    "build_marginals",
    "static_marginals",
    "estimate_correlations",
    "repair_correlation",
    "sample_horizon_returns",
    "DEFAULT_HORIZON",
]

DEFAULT_HORIZON = 20
MIN_OVERLAP = 60


@dataclass(frozen=True)
class GaussianMarginal:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValueError("Gaussian parameters must be finite")
        if not self.std > 0:
            raise ValueError(f"Gaussian std must be positive, got {self.std}")


@dataclass(frozen=True, eq=False)
class EmpiricalMarginal:
    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=np.float64).ravel()
        arr = arr[~np.isnan(arr)]
        if arr.size == 0:
            raise ValueError("empirical marginal needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("empirical samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other) -> bool:
        return isinstance(other, EmpiricalMarginal) and np.array_equal(self.samples, other.samples)

    def __hash__(self) -> int:
        return hash(self.samples.tobytes())


Marginal = Union[GaussianMarginal, EmpiricalMarginal]


@dataclass(frozen=True, eq=False)
class JointForecast:
    assets: tuple[int, ...]
    marginals: tuple[Marginal, ...]
    correlation: np.ndarray | None = None
    horizon_days: int = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        object.__setattr__(self, "assets", tuple(int(a) for a in self.assets))
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if len(self.assets) != len(self.marginals):
            raise ValueError("one marginal per asset is required")
        if self.horizon_days < 1:
            raise ValueError("horizon must be at least one day")
        if self.correlation is not None:
            C = np.array(self.correlation, dtype=np.float64)
            n = len(self.assets)
            if C.shape != (n, n):
                raise ValueError(f"correlation must be {n}x{n}, got {C.shape}")
            if not np.allclose(C, C.T, atol=1e-12):
                raise ValueError("correlation must be symmetric")
            if not np.all(np.diag(C) == 1.0):
                raise ValueError("correlation diagonal must be exactly 1")
            if np.any(np.abs(C) > 1 + 1e-12):
                raise ValueError("correlation entries must lie in [-1, 1]")
            C.flags.writeable = False
            object.__setattr__(self, "correlation", C)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @cached_property
    def _layout(self):
        g_idx = np.array([i for i, m in enumerate(self.marginals) if isinstance(m, GaussianMarginal)], dtype=int)
        e_idx = np.array([i for i, m in enumerate(self.marginals) if isinstance(m, EmpiricalMarginal)], dtype=int)
        means = np.array([self.marginals[i].mean for i in g_idx])
        stds = np.array([self.marginals[i].std for i in g_idx])
        factor = None
        if self.correlation is not None and g_idx.size:
            factor = _correlation_factor(self.correlation[np.ix_(g_idx, g_idx)])
        pools = [self.marginals[i].samples for i in e_idx]
        return g_idx, e_idx, means, stds, factor, pools

    def to_json(self, metadata: Mapping | None = None) -> str:
        marg = []
        for a, m in zip(self.assets, self.marginals):
            if isinstance(m, GaussianMarginal):
                marg.append({"asset_id": a, "kind": "gaussian", "mean": m.mean, "std": m.std})
            else:
                marg.append({"asset_id": a, "kind": "empirical", "samples": m.samples.tolist()})
        doc = {
            "format": "m6cast.joint_forecast",
            "version": 1,
            "horizon_days": self.horizon_days,
            "marginals": marg,
            "correlation": None if self.correlation is None else self.correlation.tolist(),
            "metadata": dict(metadata or {}),
        }
        return json.dumps(doc, indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "JointForecast":
        doc = json.loads(text)
        if doc.get("format") != "m6cast.joint_forecast":
            raise ValueError("not a forecast snapshot")
        assets, marginals = [], []
        for m in doc["marginals"]:
            assets.append(m["asset_id"])
            if m["kind"] == "gaussian":
                marginals.append(GaussianMarginal(m["mean"], m["std"]))
            else:
                marginals.append(EmpiricalMarginal(np.array(m["samples"])))
        corr = doc["correlation"]
        return cls(tuple(assets), tuple(marginals),
                   None if corr is None else np.array(corr), doc["horizon_days"])


def _correlation_factor(C: np.ndarray) -> np.ndarray:
    """Lower factor L with L @ L.T == C; eigen-factor when C is singular."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        return V * np.sqrt(np.clip(w, 0.0, None))


def build_marginals(
    states: Mapping[int, AdaVolState],
    means: ClassMeans,
    empirical_assets,
    history: ReturnPanel | None = None,
    window=None,
    assets: Sequence[int] | None = None,
) -> tuple[Marginal, ...]:
    """Freeze per-asset marginals at the current estimator states.

    Gaussian assets use the class mean and the square root of the one-step
    variance forecast; assets in ``empirical_assets`` use their past daily
    log-returns from ``history`` restricted to ``window``.
    """
    empirical_assets = set(empirical_assets)
    if assets is None:
        assets = sorted(set(states) | empirical_assets)
    out: list[Marginal] = []
    for a in assets:
        if a in empirical_assets:
            if history is None or a not in history.log_returns.columns:
                raise ValueError(f"no history for empirical asset {a}")
            hist = history.window(*window) if window is not None else history
            out.append(EmpiricalMarginal(hist.log_returns[a].to_numpy()))
            continue
        if a not in states:
            raise ValueError(f"no volatility state for asset {a}")
        if a not in means.mu_hat:
            raise ValueError(f"no class mean for asset {a}")
        st = states[a]
        if st.sigma2_next is None:
            raise ValueError(f"volatility state for asset {a} has seen no data")
        out.append(GaussianMarginal(means.mu_hat[a], math.sqrt(st.sigma2_next)))
    return tuple(out)


def static_marginals(
    panel: ReturnPanel,
    means: ClassMeans,
    empirical_assets,
    window,
) -> tuple[Marginal, ...]:
    """Gaussian marginals with variances fitted once on a training window.

    The variance is the mean squared deviation from the asset's class mean.
    Assets without a class mean that are not empirical use their own sample
    mean.
    """
    empirical_assets = set(empirical_assets)
    sub = panel.window(*window).log_returns
    out: list[Marginal] = []
    for a in panel.assets:
        r = sub[a].dropna().to_numpy()
        if r.size == 0:
            raise ValueError(f"asset {a} has no training returns")
        if a in empirical_assets:
            out.append(EmpiricalMarginal(r))
            continue
        mu = means.mu_hat.get(a, float(np.mean(r)))
        out.append(GaussianMarginal(mu, math.sqrt(float(np.mean((r - mu) ** 2)))))
    return tuple(out)


def repair_correlation(C: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues at zero and rescale back to unit diagonal."""
    C = 0.5 * (np.asarray(C, dtype=np.float64) + np.asarray(C, dtype=np.float64).T)
    w, V = np.linalg.eigh(C)
    if w.min() >= 0:
        out = C.copy()
    else:
        out = (V * np.clip(w, 0.0, None)) @ V.T
    d = np.sqrt(np.clip(np.diag(out), 1e-300, None))
    out = out / np.outer(d, d)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return np.clip(out, -1.0, 1.0)


def estimate_correlations(
    panel: ReturnPanel, window=None, min_overlap: int = MIN_OVERLAP, repair: bool = True
) -> np.ndarray:
    """Pairwise-complete sample correlations of daily log-returns.

    Pairs with fewer than ``min_overlap`` joint observations, or with a
    constant series, get correlation 0.
    """
    sub = panel.window(*window).log_returns if window is not None else panel.log_returns
    if sub.empty:
        raise ValueError("correlation window contains no data")
    C = sub.corr(min_periods=max(min_overlap, 2)).to_numpy(copy=True)
    C[~np.isfinite(C)] = 0.0
    np.fill_diagonal(C, 1.0)
    C = np.clip(C, -1.0, 1.0)
    return repair_correlation(C) if repair else C


def sample_horizon_returns(
    forecast: JointForecast, n_samples: int, seed: int, start_index: int = 0
) -> np.ndarray:
    """Draw daily log-return matrices, shape (n_samples, horizon_days, N).

    Sample ``start_index + s`` is produced by its own counter-based stream, so
    any sample can be regenerated independently of the others.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    g_idx, e_idx, means, stds, factor, pools = forecast._layout
    H, N = forecast.horizon_days, forecast.n_assets
    out = np.empty((n_samples, H, N))
    Z = np.empty((n_samples, H, g_idx.size))
    for s in range(n_samples):
        rng = sample_generator(seed, start_index + s)
        if g_idx.size:
            Z[s] = rng.standard_normal((H, g_idx.size))
        for col, pool in zip(e_idx, pools):
            out[s, :, col] = pool[rng.integers(0, pool.size, size=H)]
    if g_idx.size:
        if factor is not None:
            Z = Z @ factor.T
        out[:, :, g_idx] = means + stds * Z
    return out
