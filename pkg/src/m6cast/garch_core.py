"""Variance-targeted GARCH(p,q) recursion, quasi-likelihood loss and its gradient.

The recursion is written around a targeted variance level ``gamma2``::

    sigma2_t = gamma2 + sum_i alpha_i (eps2_{t-i} - gamma2)
                      + sum_j beta_j  (sigma2_{t-j} - gamma2)

``gamma2`` depends on the data history only, so it is a constant with respect
to ``theta = (alpha_1..alpha_p, beta_1..beta_q)`` and the sensitivities
``d sigma2_t / d theta`` follow their own linear recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "GarchOrder",
    "GarchParams",
    "VolState",
    "QLConvention",
    "volatility_step",
    "volatility_sensitivity_step",
    "ql_loss",
    "ql_loss_derivative",
    "loss_gradient",
    "filter_variance",
    "summed_loss",
    "summed_loss_gradient",
]

QLConvention = Literal["paper", "standard"]

# sigma2 is floored at _FLOOR_REL * max(gamma2, _TINY)
_FLOOR_REL = 1e-12
_TINY = 1e-300


@dataclass(frozen=True)
class GarchOrder:
    p: int = 1
    q: int = 1

    def __post_init__(self) -> None:
        if self.p < 0 or self.q < 0:
            raise ValueError(f"GARCH orders must be non-negative, got p={self.p}, q={self.q}")
        if self.p + self.q < 1:
            raise ValueError("GARCH order needs p + q >= 1")

    @property
    def size(self) -> int:
        return self.p + self.q


@dataclass(frozen=True)
class GarchParams:
    """Non-negative ARCH (``alpha``) and GARCH (``beta``) coefficients."""

    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        values = self.alpha + self.beta
        if not all(math.isfinite(v) for v in values):
            raise ValueError("GARCH parameters must be finite")
        if any(v < 0 for v in values):
            raise ValueError(f"GARCH parameters must be non-negative, got {list(values)}")

    @classmethod
    def from_vector(cls, vec, p: int) -> "GarchParams":
        vec = np.asarray(vec, dtype=np.float64).ravel().tolist()
        return cls(tuple(vec[:p]), tuple(vec[p:]))

    @classmethod
    def zeros(cls, order: GarchOrder) -> "GarchParams":
        return cls((0.0,) * order.p, (0.0,) * order.q)

    @property
    def order(self) -> GarchOrder:
        return GarchOrder(len(self.alpha), len(self.beta))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.alpha + self.beta, dtype=np.float64)

    @property
    def persistence(self) -> float:
        return float(sum(self.alpha) + sum(self.beta))

    def is_stationary(self) -> bool:
        """True when the parameters lie in the open constraint set (sum < 1)."""
        return self.persistence < 1.0


@dataclass(frozen=True)
class VolState:
    """Lag buffers of the recursion, most recent lag first.

    ``eps2_lags[i]`` holds eps2_{t-1-i}, ``sigma2_lags[j]`` holds sigma2_{t-1-j}
    and ``sens_lags[j]`` the gradient of ``sigma2_lags[j]`` with respect to theta.
    """

    eps2_lags: np.ndarray
    sigma2_lags: np.ndarray
    sens_lags: np.ndarray

    @classmethod
    def initial(cls, order: GarchOrder, eps2_1: float) -> "VolState":
        """Buffers after the first observation, where sigma2_1 = eps2_1.

        Lags reaching before the first observation are filled with eps2_1.
        """
        return cls(
            eps2_lags=np.full(order.p, float(eps2_1)),
            sigma2_lags=np.full(order.q, float(eps2_1)),
            sens_lags=np.zeros((order.q, order.size)),
        )

    @property
    def order(self) -> GarchOrder:
        return GarchOrder(self.eps2_lags.shape[0], self.sigma2_lags.shape[0])

    def push(self, eps2: float, sigma2: float, sens: np.ndarray) -> "VolState":
        """Shift every buffer by one step, inserting the newest values in front."""
        eps2_lags = self.eps2_lags
        if eps2_lags.size:
            eps2_lags = np.empty_like(self.eps2_lags)
            eps2_lags[0] = eps2
            eps2_lags[1:] = self.eps2_lags[:-1]
        sigma2_lags, sens_lags = self.sigma2_lags, self.sens_lags
        if sigma2_lags.size:
            sigma2_lags = np.empty_like(self.sigma2_lags)
            sigma2_lags[0] = sigma2
            sigma2_lags[1:] = self.sigma2_lags[:-1]
            sens_lags = np.empty_like(self.sens_lags)
            sens_lags[0] = sens
            sens_lags[1:] = self.sens_lags[:-1]
        return VolState(eps2_lags, sigma2_lags, sens_lags)


def _floor(gamma2: float) -> float:
    return _FLOOR_REL * max(gamma2, _TINY)


def volatility_step(state: VolState, theta: GarchParams, gamma2: float) -> float:
    """Conditional variance for the next time step given the lag buffers."""
    alpha = np.asarray(theta.alpha)
    beta = np.asarray(theta.beta)
    sigma2 = (
        gamma2
        + float(alpha @ (state.eps2_lags - gamma2))
        + float(beta @ (state.sigma2_lags - gamma2))
    )
    return max(sigma2, _floor(gamma2))


def volatility_sensitivity_step(
    state: VolState, theta: GarchParams, gamma2: float
) -> tuple[float, np.ndarray]:
    """Next conditional variance together with its gradient in theta.

    The direct terms are ``eps2_{t-i} - gamma2`` for alpha_i and
    ``sigma2_{t-j} - gamma2`` for beta_j; the beta-weighted lagged
    sensitivities are added on top.
    """
    sigma2 = volatility_step(state, theta, gamma2)
    beta = np.asarray(theta.beta)
    direct = np.concatenate((state.eps2_lags - gamma2, state.sigma2_lags - gamma2))
    if beta.size:
        sens = direct + beta @ state.sens_lags
    else:
        sens = direct
    return sigma2, sens


def ql_loss(sigma2: float, x: float, convention: QLConvention = "paper") -> float:
    """Quasi-likelihood loss of observation ``x`` under variance ``sigma2``.

    ``paper`` is log(sigma) + x^2/sigma^2; ``standard`` is the Gaussian QMLE
    form log(sigma^2) + x^2/sigma^2.
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    log_weight = _log_weight(convention)
    return log_weight * float(np.log(sigma2)) + x * x / sigma2


def _log_weight(convention: QLConvention) -> float:
    if convention == "paper":
        return 0.5
    if convention == "standard":
        return 1.0
    raise ValueError(f"unknown QL convention {convention!r}")


def ql_loss_derivative(sigma2: float, x: float, convention: QLConvention = "paper") -> float:
    """d loss / d sigma2."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return _log_weight(convention) / sigma2 - x * x / (sigma2 * sigma2)


def loss_gradient(
    sigma2: float, dsigma2_dtheta: np.ndarray, x: float, convention: QLConvention = "paper"
) -> np.ndarray:
    """Gradient of the QL loss in theta by the chain rule through sigma2."""
    return ql_loss_derivative(sigma2, x, convention) * np.asarray(dsigma2_dtheta, dtype=np.float64)


def filter_variance(
    eps: np.ndarray, theta: GarchParams, gamma2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Run the recursion with fixed ``theta`` over a whole series.

    ``gamma2[t]`` is the target level used to build sigma2 of observation
    ``t + 1`` (0-based). sigma2 of observation 0 is pinned to ``eps[0]**2``,
    so the last entry of ``gamma2`` is never read.

    Returns
    -------
    sigma2 : ndarray, shape (n,)
    sens : ndarray, shape (n, p + q)
    """
    eps = np.asarray(eps, dtype=np.float64)
    gamma2 = np.asarray(gamma2, dtype=np.float64)
    order = theta.order
    n = eps.shape[0]
    sigma2 = np.empty(n)
    sens = np.zeros((n, order.size))
    sigma2[0] = eps[0] ** 2
    state = VolState.initial(order, sigma2[0])
    for t in range(1, n):
        sigma2[t], sens[t] = volatility_sensitivity_step(state, theta, gamma2[t - 1])
        state = state.push(eps[t] ** 2, sigma2[t], sens[t])
    return sigma2, sens


def summed_loss(
    eps: np.ndarray, theta: GarchParams, gamma2: np.ndarray, convention: QLConvention = "paper"
) -> float:
    """Total QL loss over observations 2..n (the first one is pinned)."""
    sigma2, _ = filter_variance(eps, theta, gamma2)
    return float(sum(ql_loss(s, x, convention) for s, x in zip(sigma2[1:], eps[1:])))


def summed_loss_gradient(
    eps: np.ndarray, theta: GarchParams, gamma2: np.ndarray, convention: QLConvention = "paper"
) -> np.ndarray:
    sigma2, sens = filter_variance(eps, theta, gamma2)
    grad = np.zeros(theta.order.size)
    for s, d, x in zip(sigma2[1:], sens[1:], np.asarray(eps)[1:]):
        grad += loss_gradient(s, d, x, convention)
    return grad
