"""Expected-loss minimization of submissions under Monte-Carlo samples.

Both tasks follow the same loop: draw a mini-batch of return matrices from
the joint forecast, average the per-sample gradient of the competition loss,
take an optimizer step with step size ``alpha0 / k**power`` and project
back to the feasible set.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Union

import numpy as np

from m6cast.forecast_dist import JointForecast, sample_horizon_returns
from m6cast.projections import project_simplex
from m6cast.scoring import (
    N_QUINTILES,
    information_ratio,
    quintiles_batch,
    rps,
    rps_gradient,
)

__all__ = [
    "OptConfig",
    "portfolio_config",
    "AdamState",
    "adam_step",
    "project_simplex_rows",
    "project_portfolio",
    "uniform_portfolio",
    "quintile_samples",
    "minimize_expected_rps",
    "optimize_portfolio",
    "expected_ir",
    "PortfolioResult",
]

logger = logging.getLogger(__name__)

OptimizerKind = Literal["adam", "annealing_sgd"]

MIN_GROSS = 0.25
MAX_GROSS = 1.0

# separates the held-out evaluation samples from the optimization batches
_HELDOUT_OFFSET = 1 << 40


@dataclass(frozen=True)
class OptConfig:
    batch_size: int = 100
    total_iterations: int = 2000
    alpha0: float = 0.05
    schedule_power: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    optimizer: OptimizerKind = "adam"
    heldout_samples: int = 10_000
    restarts: int = 1
    fd_gradient: bool = False
    fd_step: float = 1e-6
    trace_path: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be non-negative")
        if self.optimizer not in ("adam", "annealing_sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    def step_size(self, k: int) -> float:
        return self.alpha0 / k ** self.schedule_power


def portfolio_config(**overrides) -> OptConfig:
    """Defaults for the portfolio task (smaller base step)."""
    return OptConfig(**{"alpha0": 0.01, **overrides})


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(
    state: AdamState,
    grad: np.ndarray,
    alpha_k: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected adaptive-moment step; returns the new state and the update."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    k = state.k + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** k)
    v_hat = v / (1.0 - beta2 ** k)
    delta = -alpha_k * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, k), delta


def project_simplex_rows(M_raw) -> np.ndarray:
    M_raw = np.asarray(M_raw, dtype=np.float64)
    if not np.all(np.isfinite(M_raw)):
        raise ValueError("matrix must be finite")
    return project_simplex(M_raw, 1.0)


def uniform_portfolio(n: int, gross: float = MIN_GROSS) -> np.ndarray:
    return np.full(n, gross / n)


def project_portfolio(x_raw) -> np.ndarray:
    """Rescale so that the gross exposure sum(|x|) lies in [0.25, 1]."""
    x = np.asarray(x_raw, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("weights must be finite")
    gross = float(np.sum(np.abs(x)))
    if gross == 0.0:
        return uniform_portfolio(x.size)
    if gross > MAX_GROSS:
        return x * (MAX_GROSS / gross)
    if gross < MIN_GROSS:
        return x * (MIN_GROSS / gross)
    return x.copy()


class _Trace:
    def __init__(self, path: str | None):
        self.rows: list[tuple[int, float, float]] = []
        self.path = path

    def add(self, k: int, objective: float, step_norm: float) -> None:
        if self.path is not None:
            self.rows.append((k, objective, step_norm))

    def flush(self) -> None:
        if self.path is None:
            return
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "step_norm"])
            for k, obj, norm in self.rows:
                w.writerow([k, repr(obj), repr(norm)])


def quintile_samples(returns: np.ndarray) -> np.ndarray:
    """Quintile matrices of sampled daily returns, shape (S, N, 5).

    Returns are ranked by their horizon sum; the simple horizon return is
    monotone in it.
    """
    totals = np.asarray(returns).sum(axis=1)
    return quintiles_batch(totals)


QSource = Union[JointForecast, np.ndarray]


def _batch_source(sampler: QSource, config: OptConfig) -> Callable[[int], np.ndarray]:
    """Map iteration k (1-based) to the mean quintile matrix of its batch."""
    if isinstance(sampler, JointForecast):
        def draw(k: int) -> np.ndarray:
            R = sample_horizon_returns(sampler, config.batch_size, config.seed,
                                       start_index=(k - 1) * config.batch_size)
            return quintile_samples(R).mean(axis=0)
        return draw

    # a frozen set of quintile matrices: the whole set is the batch
    Qs = np.asarray(sampler, dtype=np.float64)
    if Qs.ndim == 2:
        Qs = Qs[None]
    mean_Q = Qs.mean(axis=0)
    return lambda k: mean_Q


def minimize_expected_rps(
    sampler: QSource, config: OptConfig | None = None, M_init=None
) -> np.ndarray:
    """Projected stochastic gradient descent on the expected RPS.

    ``sampler`` is either a :class:`JointForecast` or a frozen array of
    quintile matrices (S, N, 5), in which case every step uses the full set.

    The step works on the per-asset sum of RPS (N times the mean). Rows are
    independent, so this only rescales the step size and keeps ``alpha0``
    meaningful for any number of assets.
    """
    config = config or OptConfig()
    if M_init is None:
        n = sampler.n_assets if isinstance(sampler, JointForecast) else np.asarray(sampler).shape[-2]
        M_init = np.full((n, N_QUINTILES), 1.0 / N_QUINTILES)
    M = project_simplex_rows(M_init)
    n = M.shape[0]
    draw = _batch_source(sampler, config)
    trace = _Trace(config.trace_path)
    adam = AdamState.zeros(M.shape)
    for k in range(1, config.total_iterations + 1):
        Q_bar = draw(k)
        grad = n * rps_gradient(M, Q_bar)
        alpha_k = config.step_size(k)
        if config.optimizer == "adam":
            adam, delta = adam_step(adam, grad, alpha_k, config.beta1, config.beta2, config.adam_eps)
        else:
            delta = -alpha_k * grad
        M_new = project_simplex_rows(M + delta)
        if config.trace_path is not None:
            trace.add(k, rps(M, Q_bar), float(np.max(np.abs(M_new - M))))
        M = M_new
    trace.flush()
    return M


def _batch_ir(x: np.ndarray, simple_returns: np.ndarray, fd: bool, h: float) -> tuple[float, np.ndarray, int]:
    """Mean IR and its gradient over a batch (S, T, N); degenerate samples are skipped."""
    R = np.asarray(simple_returns, dtype=np.float64)
    if fd:
        return _batch_ir_fd(x, R, h)
    gross = 1.0 + R @ x
    ok = np.all(gross > 0, axis=1)
    gross = np.where(ok[:, None], gross, 1.0)
    ret = np.log(gross)
    T = ret.shape[1]
    sdp = np.std(ret, axis=1, ddof=1)
    ok &= (sdp > 0) & np.any(ret != ret[:, :1], axis=1)
    skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return math.nan, np.zeros_like(x), skipped
    R, ret, sdp, gross = R[ok], ret[ok], sdp[ok], gross[ok]
    total = ret.sum(axis=1)
    dret = R / gross[:, :, None]
    centered = ret - ret.mean(axis=1, keepdims=True)
    dsdp = np.einsum("st,stn->sn", centered, dret) / ((T - 1) * sdp[:, None])
    grads = dret.sum(axis=1) / sdp[:, None] - (total / sdp**2)[:, None] * dsdp
    return float(np.mean(total / sdp)), grads.mean(axis=0), skipped


def _batch_ir_fd(x: np.ndarray, R: np.ndarray, h: float) -> tuple[float, np.ndarray, int]:
    total, grad, used, skipped = 0.0, np.zeros_like(x), 0, 0
    for sample in R:
        try:
            ir = information_ratio(x, sample)
            g = np.empty_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                g[i] = (information_ratio(x + e, sample) - information_ratio(x - e, sample)) / (2 * h)
        except ValueError:
            skipped += 1
            continue
        total += ir
        grad += g
        used += 1
    if used == 0:
        return math.nan, grad, skipped
    return total / used, grad / used, skipped


def expected_ir(x, simple_returns: np.ndarray) -> float:
    """Monte-Carlo mean IR over samples of simple daily returns (S, T, N)."""
    value, _, _ = _batch_ir(np.asarray(x, dtype=np.float64), simple_returns, False, 0.0)
    return value


def _simple(R_log: np.ndarray) -> np.ndarray:
    return np.expm1(R_log)


@dataclass
class PortfolioResult:
    weights: np.ndarray
    expected_ir: float
    uniform_ir: float
    used_uniform: bool
    skipped: int = 0
    candidates: list = field(default_factory=list)


def optimize_portfolio(
    sampler: JointForecast,
    config: OptConfig | None = None,
    x_init=None,
    uniform_gross: float = MIN_GROSS,
    return_details: bool = False,
) -> np.ndarray | PortfolioResult:
    """Adaptive-moment ascent on the expected information ratio.

    Every iterate is rescaled into the gross-exposure band. The final
    candidate is scored on a held-out sample set against the uniform
    portfolio, and the better of the two is returned.
    """
    config = config or portfolio_config()
    n = sampler.n_assets
    x0 = uniform_portfolio(n, uniform_gross) if x_init is None else np.asarray(x_init, dtype=np.float64)
    x0 = project_portfolio(x0)
    if config.total_iterations == 0:
        return PortfolioResult(x0, math.nan, math.nan, False) if return_details else x0

    trace = _Trace(config.trace_path)
    skipped = 0
    candidates = []
    for restart in range(config.restarts):
        if restart == 0:
            x = x0.copy()
        else:
            jitter = np.random.default_rng([config.seed, restart]).normal(scale=0.5 * uniform_gross / n, size=n)
            x = project_portfolio(x0 + jitter)
        adam = AdamState.zeros(x.shape)
        for k in range(1, config.total_iterations + 1):
            R = sample_horizon_returns(sampler, config.batch_size, config.seed + restart,
                                       start_index=(k - 1) * config.batch_size)
            value, grad, bad = _batch_ir(x, _simple(R), config.fd_gradient, config.fd_step)
            skipped += bad
            if math.isnan(value):
                continue
            alpha_k = config.step_size(k)
            if config.optimizer == "adam":
                adam, delta = adam_step(adam, -grad, alpha_k, config.beta1, config.beta2, config.adam_eps)
            else:
                delta = alpha_k * grad
            x_new = project_portfolio(x + delta)
            trace.add(k, -value, float(np.max(np.abs(x_new - x))))
            x = x_new
        candidates.append(x)
    trace.flush()
    if skipped:
        logger.info("skipped %d degenerate IR samples", skipped)

    heldout = _simple(sample_horizon_returns(sampler, config.heldout_samples, config.seed,
                                             start_index=_HELDOUT_OFFSET))
    scores = [expected_ir(c, heldout) for c in candidates]
    best = int(np.nanargmax(scores)) if not all(math.isnan(s) for s in scores) else 0
    uniform = uniform_portfolio(n, uniform_gross)
    u_score = expected_ir(uniform, heldout)
    cand_score = scores[best]
    use_uniform = math.isnan(cand_score) or (not math.isnan(u_score) and u_score > cand_score)
    weights = uniform if use_uniform else candidates[best]
    result = PortfolioResult(
        weights=weights,
        expected_ir=u_score if use_uniform else cand_score,
        uniform_ir=u_score,
        used_uniform=use_uniform,
        skipped=skipped,
        candidates=candidates,
    )
    return result if return_details else weights
