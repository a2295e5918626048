"""Online volatility estimation by projected AdaGrad on the GARCH quasi-likelihood.

Each observation is processed once: running mean and variance are updated,
the loss gradient at the previous parameters is accumulated into the AdaGrad
denominator, the parameters take one projected step, and the one-step-ahead
variance is produced from the updated parameters.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from m6cast.garch_core import (
    GarchOrder,
    GarchParams,
    QLConvention,
    VolState,
    loss_gradient,
    volatility_sensitivity_step,
)
from m6cast.projections import project_capped_simplex

__all__ = [
    "AdaVolConfig",
    "AdaVolState",
    "AdaVol",
    "init",
    "update_stats",
    "project_theta",
    "step",
    "state_to_json",
    "state_from_json",
]

logger = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1


def default_theta0(order: GarchOrder) -> GarchParams:
    """(0.1, 0.8) for GARCH(1,1), the same totals spread evenly for other orders."""
    alpha_total = 0.1 if order.q else 0.5
    alpha = (alpha_total / order.p,) * order.p if order.p else ()
    beta = (0.8 / order.q,) * order.q if order.q else ()
    return GarchParams(alpha, beta)


@dataclass(frozen=True)
class AdaVolConfig:
    order: GarchOrder = field(default_factory=GarchOrder)
    eta: float = 0.1
    eps: float = 1e-8
    theta0: GarchParams | None = None
    delta: float = 1e-6
    ql_convention: QLConvention = "paper"

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.ql_convention not in ("paper", "standard"):
            raise ValueError(f"unknown QL convention {self.ql_convention!r}")
        if self.theta0 is None:
            object.__setattr__(self, "theta0", default_theta0(self.order))
        elif self.theta0.order != self.order:
            raise ValueError(f"theta0 has order {self.theta0.order}, expected {self.order}")


@dataclass(frozen=True)
class AdaVolState:
    config: AdaVolConfig
    t: int
    mu: float
    gamma2: float
    G: np.ndarray
    theta: GarchParams
    vol_state: VolState | None = None
    sigma2_next: float | None = None
    sens_next: np.ndarray | None = None

    @property
    def forecast_std(self) -> float:
        if self.sigma2_next is None:
            raise ValueError("no observation processed yet")
        return math.sqrt(self.sigma2_next)


def project_theta(theta_raw, delta: float, p: int | None = None) -> GarchParams:
    """Nearest point of ``{theta >= 0, sum(theta) <= 1 - delta}``.

    ``p`` splits the vector into alpha and beta parts; when omitted the whole
    vector is returned as alpha.
    """
    vec = np.asarray(theta_raw, dtype=np.float64).ravel()
    if not np.isfinite(vec).all():
        raise ValueError("theta must be finite")
    proj = project_capped_simplex(vec, 1.0 - delta)
    return GarchParams.from_vector(proj, vec.size if p is None else p)


def init(config: AdaVolConfig) -> AdaVolState:
    theta0 = config.theta0
    vec = theta0.vector
    if vec.sum() > 1.0 - config.delta:
        projected = project_theta(vec, config.delta, config.order.p)
        logger.warning("theta0 %s outside the constraint set, projected to %s", vec.tolist(),
                       projected.vector.tolist())
        theta0 = projected
    return AdaVolState(
        config=config,
        t=0,
        mu=0.0,
        gamma2=0.0,
        G=np.full(config.order.size, config.eps),
        theta=theta0,
    )


def update_stats(t: int, mu_prev: float, gamma2_prev: float, x: float) -> tuple[float, float]:
    """Running mean and variance; ``t`` is the already-incremented counter."""
    mu = t / (t + 1) * mu_prev + x / (t + 1)
    gamma2 = (t - 1) / t * gamma2_prev + (x - mu) ** 2 / t
    return mu, gamma2


def step(state: AdaVolState, x: float) -> tuple[AdaVolState, float]:
    """Process one centered observation and return the one-step forecast."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"observation must be finite, got {x}")
    cfg = state.config
    t = state.t + 1
    mu, gamma2 = update_stats(t, state.mu, state.gamma2, x)

    if state.vol_state is None:
        sigma2_t = x * x
        vol_state = VolState.initial(cfg.order, sigma2_t)
        theta = state.theta
        G = state.G
    else:
        sigma2_t = state.sigma2_next
        sens_t = state.sens_next
        g = loss_gradient(sigma2_t, sens_t, x, cfg.ql_convention)
        G = state.G + g * g
        theta = project_theta(state.theta.vector - cfg.eta * g / np.sqrt(G), cfg.delta, cfg.order.p)
        vol_state = state.vol_state.push(x * x, sigma2_t, sens_t)

    sigma2_next, sens_next = volatility_sensitivity_step(vol_state, theta, gamma2)
    new_state = AdaVolState(
        config=cfg,
        t=t,
        mu=mu,
        gamma2=gamma2,
        G=G,
        theta=theta,
        vol_state=vol_state,
        sigma2_next=sigma2_next,
        sens_next=sens_next,
    )
    return new_state, sigma2_next


class AdaVol:
    """Mutable convenience wrapper around the functional :func:`step`."""

    def __init__(self, config: AdaVolConfig | None = None, state: AdaVolState | None = None):
        if state is None:
            state = init(config or AdaVolConfig())
        self.state = state

    @property
    def config(self) -> AdaVolConfig:
        return self.state.config

    @property
    def theta(self) -> GarchParams:
        return self.state.theta

    def update(self, x: float) -> float:
        self.state, sigma2 = step(self.state, x)
        return sigma2

    def fit(self, xs) -> np.ndarray:
        """Feed a whole series; returns the forecast after each observation."""
        out = np.empty(len(xs))
        for i, x in enumerate(xs):
            out[i] = self.update(x)
        return out

    @property
    def sigma2_next(self) -> float | None:
        return self.state.sigma2_next


def _arr(a: np.ndarray | None) -> Any:
    return None if a is None else np.asarray(a).tolist()


def state_to_json(state: AdaVolState) -> str:
    """Versioned JSON document of the full estimator state.

    Floats are written with their shortest round-trip representation, so
    :func:`state_from_json` restores the state bit for bit.
    """
    cfg = state.config
    vs = state.vol_state
    doc = {
        "format": "m6cast.adavol_state",
        "version": STATE_FORMAT_VERSION,
        "config": {
            "p": cfg.order.p,
            "q": cfg.order.q,
            "eta": cfg.eta,
            "eps": cfg.eps,
            "delta": cfg.delta,
            "ql_convention": cfg.ql_convention,
            "theta0": list(cfg.theta0.vector.tolist()),
        },
        "t": state.t,
        "mu": state.mu,
        "gamma2": state.gamma2,
        "G": _arr(state.G),
        "theta": state.theta.vector.tolist(),
        "vol_state": None if vs is None else {
            "eps2_lags": _arr(vs.eps2_lags),
            "sigma2_lags": _arr(vs.sigma2_lags),
            "sens_lags": _arr(vs.sens_lags),
        },
        "sigma2_next": state.sigma2_next,
        "sens_next": _arr(state.sens_next),
    }
    return json.dumps(doc, indent=2, allow_nan=False)


def state_from_json(text: str) -> AdaVolState:
    doc = json.loads(text)
    if doc.get("format") != "m6cast.adavol_state":
        raise ValueError("not an AdaVol state document")
    if doc.get("version") != STATE_FORMAT_VERSION:
        raise ValueError(f"unsupported state version {doc.get('version')}")
    c = doc["config"]
    order = GarchOrder(c["p"], c["q"])
    cfg = AdaVolConfig(
        order=order,
        eta=c["eta"],
        eps=c["eps"],
        delta=c["delta"],
        ql_convention=c["ql_convention"],
        theta0=GarchParams.from_vector(c["theta0"], order.p),
    )
    vs = doc["vol_state"]
    vol_state = None
    if vs is not None:
        vol_state = VolState(
            eps2_lags=np.array(vs["eps2_lags"], dtype=np.float64),
            sigma2_lags=np.array(vs["sigma2_lags"], dtype=np.float64),
            sens_lags=np.array(vs["sens_lags"], dtype=np.float64).reshape(order.q, order.size),
        )
    sens_next = doc["sens_next"]
    return AdaVolState(
        config=cfg,
        t=doc["t"],
        mu=doc["mu"],
        gamma2=doc["gamma2"],
        G=np.array(doc["G"], dtype=np.float64),
        theta=GarchParams.from_vector(doc["theta"], order.p),
        vol_state=vol_state,
        sigma2_next=doc["sigma2_next"],
        sens_next=None if sens_next is None else np.array(sens_next, dtype=np.float64),
    )

