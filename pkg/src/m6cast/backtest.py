"""Simulation, rolling M6-style backtests and report emission."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from m6cast.adavol import AdaVolConfig, AdaVolState, init, step
from m6cast.config import load_config
from m6cast.forecast_dist import (
    JointForecast,
    build_marginals,
    estimate_correlations,
    static_marginals,
)
from m6cast.garch_core import GarchOrder, GarchParams
from m6cast.returns_ingest import (
    MEAN_CLASSES,
    AssetClass,
    ClassMeans,
    ReturnPanel,
    class_map,
    class_mean_returns,
    compute_log_returns,
    load_class_overrides,
    load_price_table,
)
from m6cast.rng import stream
from m6cast.scoring import (
    N_QUINTILES,
    DegenerateIRError,
    best_constant,
    information_ratio,
    quintiles_from_returns,
    rps,
)
from m6cast.stochastic_opt import (
    OptConfig,
    minimize_expected_rps,
    optimize_portfolio,
    uniform_portfolio,
)

__all__ = [
    "METHODS",
    "simulate_garch",
    "OnlineVolatility",
    "BacktestConfig",
    "BacktestReport",
    "adavol_forecast",
    "training_quintiles",
    "quintile_frequency_table",
    "evaluation_windows",
    "run_backtest",
    "emit_report",
    "forecast_submission",
    "portfolio_weights",
]

logger = logging.getLogger(__name__)

METHODS = ("uniform", "best_constant", "gaussian_static", "hybrid", "adavol_pipeline")
BURN_IN = 500


def simulate_garch(
    alpha: Sequence[float],
    beta: Sequence[float],
    variance: float = 1.0,
    n: int = 1000,
    seed: int = 0,
    burn_in: int = BURN_IN,
) -> np.ndarray:
    """Simulate a variance-targeted GARCH(p,q) series with Gaussian noise.

    The unconditional variance is pinned to ``variance``; the first
    ``burn_in`` draws are discarded.
    """
    theta = GarchParams(tuple(alpha), tuple(beta))
    if not theta.is_stationary():
        raise ValueError(f"parameters are outside the stationary set: {theta.vector.tolist()}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not variance > 0:
        raise ValueError("variance must be positive")
    a, b = theta.alpha, theta.beta
    omega = variance * (1.0 - theta.persistence)
    noise = stream(seed).standard_normal(n + burn_in).tolist()
    # lag lists hold the most recent value first
    eps2_lags = [variance] * len(a)
    sigma2_lags = [variance] * len(b)
    out = np.empty(n + burn_in)
    for t, z in enumerate(noise):
        sigma2 = omega + sum(ai * e for ai, e in zip(a, eps2_lags)) + sum(bj * s for bj, s in zip(b, sigma2_lags))
        x = math.sqrt(sigma2) * z
        out[t] = x
        if a:
            eps2_lags = [x * x] + eps2_lags[:-1]
        if b:
            sigma2_lags = [sigma2] + sigma2_lags[:-1]
    return out[burn_in:]


class OnlineVolatility:
    """One AdaVol estimator per asset, advanced through a panel in date order.

    Missing returns are skipped. Only rows strictly before the requested date
    are ever consumed.
    """

    def __init__(
        self,
        panel: ReturnPanel,
        means: ClassMeans,
        config: AdaVolConfig,
        center: bool = True,
        assets: Sequence[int] | None = None,
    ):
        self.panel = panel
        self.means = means
        self.center = center
        self.assets = list(assets) if assets is not None else sorted(means.mu_hat)
        self.states: dict[int, AdaVolState] = {a: init(config) for a in self.assets}
        self._values = panel.log_returns[self.assets].to_numpy()
        self._dates = panel.dates
        self._next = 0

    def advance_to(self, date) -> dict[int, AdaVolState]:
        stop = int(self._dates.searchsorted(pd.Timestamp(date), side="left"))
        if stop < self._next:
            raise ValueError("cannot move an online estimator backwards in time")
        offsets = np.array([self.means.mu_hat[a] if self.center else 0.0 for a in self.assets])
        block = self._values[self._next:stop] - offsets
        for j, a in enumerate(self.assets):
            st = self.states[a]
            for x in block[:, j]:
                if not math.isnan(x):
                    st, _ = step(st, x)
            self.states[a] = st
        self._next = stop
        return self.states


def adavol_forecast(
    panel: ReturnPanel,
    vol: OnlineVolatility,
    means: ClassMeans,
    asof,
    empirical_assets,
    empirical_window,
    horizon_days: int = 20,
    correlated: bool = False,
    correlation_years: float = 2.0,
    min_overlap: int = 60,
) -> JointForecast:
    """Joint forecast frozen at ``asof`` from data strictly before it."""
    past = panel.before(asof)
    states = vol.advance_to(asof)
    marginals = build_marginals(states, means, empirical_assets, history=past,
                                window=empirical_window, assets=panel.assets)
    corr = None
    if correlated:
        asof = pd.Timestamp(asof)
        start = asof - pd.DateOffset(days=int(round(365.25 * correlation_years)))
        recent = ReturnPanel(past.log_returns.loc[past.dates >= start])
        corr = estimate_correlations(recent, min_overlap=min_overlap)
    return JointForecast(tuple(panel.assets), marginals, corr, horizon_days)


def training_quintiles(panel: ReturnPanel, window, horizon_days: int = 20) -> list[np.ndarray]:
    """Realized quintile matrices of consecutive non-overlapping horizon blocks."""
    sub = panel.window(*window).log_returns
    out = []
    for start in range(0, len(sub) - horizon_days + 1, horizon_days):
        block = sub.iloc[start:start + horizon_days]
        if block.isna().any().any():
            continue
        out.append(quintiles_from_returns(block.sum(axis=0).to_numpy()))
    return out


def quintile_frequency_table(
    history: Sequence[np.ndarray], assets: Sequence[int], classes: Mapping[int, AssetClass]
) -> dict[str, list[float]]:
    """Percentage of time each asset class spent in each quintile."""
    mean_Q = best_constant(history)
    table = {}
    for cls in AssetClass:
        rows = [i for i, a in enumerate(assets) if classes[a] is cls]
        if rows:
            table[cls.value] = (100.0 * mean_Q[rows].mean(axis=0)).tolist()
    return table


@dataclass(frozen=True)
class BacktestConfig:
    train_window: tuple[str, str] = ("2015-01-01", "2020-12-31")
    eval_window: tuple[str, str] = ("2021-04-01", "2021-12-31")
    windows: tuple[str, ...] = ()
    horizon_days: int = 20
    methods: tuple[str, ...] = METHODS
    portfolio: bool = True
    seed: int = 0
    empirical_assets: Any = "auto"
    correlation_years: float = 2.0
    correlation_min_overlap: int = 60
    center: bool = True
    adavol: AdaVolConfig = field(default_factory=AdaVolConfig)
    matrix_opt: OptConfig = field(default_factory=OptConfig)
    portfolio_opt: OptConfig = field(default_factory=lambda: OptConfig(alpha0=0.01))
    uniform_gross: float = 0.25
    prices: str | None = None
    panel: str | None = None
    class_overrides: str | None = None

    def __post_init__(self) -> None:
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be positive")
        if pd.Timestamp(self.train_window[0]) > pd.Timestamp(self.train_window[1]):
            raise ValueError("training window is empty")

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any]) -> "BacktestConfig":
        order = GarchOrder(cfg["adavol_p"], cfg["adavol_q"])
        theta0 = cfg["adavol_theta0"]
        if len(theta0) != order.size:
            raise ValueError(f"adavol_theta0 needs {order.size} values, got {len(theta0)}")
        adavol = AdaVolConfig(
            order=order,
            eta=cfg["adavol_eta"],
            eps=cfg["adavol_eps"],
            theta0=GarchParams.from_vector(theta0, order.p),
            delta=cfg["adavol_delta"],
            ql_convention=cfg["ql_convention"],
        )
        common = dict(
            batch_size=cfg["batch_size"],
            schedule_power=cfg["schedule_power"],
            beta1=cfg["adam_beta1"],
            beta2=cfg["adam_beta2"],
            adam_eps=cfg["adam_eps"],
            seed=cfg["seed"],
            heldout_samples=cfg["heldout_samples"],
            restarts=cfg["restarts"],
        )
        matrix_opt = OptConfig(total_iterations=cfg["matrix_iterations"], alpha0=cfg["matrix_alpha0"],
                               optimizer=cfg["matrix_optimizer"], **common)
        portfolio_opt = OptConfig(total_iterations=cfg["portfolio_iterations"],
                                  alpha0=cfg["portfolio_alpha0"],
                                  optimizer=cfg["portfolio_optimizer"], **common)
        return cls(
            train_window=(cfg["train_start"], cfg["train_end"]),
            eval_window=(cfg["eval_start"], cfg["eval_end"]),
            windows=tuple(cfg["windows"]),
            horizon_days=cfg["horizon_days"],
            methods=tuple(cfg["methods"]),
            portfolio=cfg["portfolio"],
            seed=cfg["seed"],
            empirical_assets=cfg["empirical_assets"],
            correlation_years=cfg["correlation_years"],
            correlation_min_overlap=cfg["correlation_min_overlap"],
            center=cfg["center"],
            adavol=adavol,
            matrix_opt=matrix_opt,
            portfolio_opt=portfolio_opt,
            uniform_gross=cfg["uniform_gross"],
            prices=cfg["prices"],
            panel=cfg["panel"],
            class_overrides=cfg["class_overrides"],
        )

    @classmethod
    def from_file(cls, path=None, **overrides) -> "BacktestConfig":
        return cls.from_mapping(load_config(path, **overrides))


@dataclass
class BacktestReport:
    methods: tuple[str, ...]
    rps_rows: list[tuple[str, str, float]] = field(default_factory=list)
    ir_rows: list[tuple[str, str, float]] = field(default_factory=list)
    quintile_frequency: dict[str, list[float]] = field(default_factory=dict)
    empirical_samples: dict[int, list[float]] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def windows(self) -> list[str]:
        return sorted({w for w, _, _ in self.rps_rows})

    def rps_table(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rps_rows, columns=["window_start", "method", "rps"])
        return frame.pivot(index="window_start", columns="method", values="rps")

    def aggregates(self) -> dict[str, float]:
        out = {}
        for m in self.methods:
            vals = [v for _, mm, v in self.rps_rows if mm == m]
            if vals:
                out[m] = math.fsum(vals) / len(vals)
        return out

    def ir_aggregates(self) -> dict[str, float]:
        out = {}
        for name in sorted({p for _, p, _ in self.ir_rows}):
            vals = [v for _, pp, v in self.ir_rows if pp == name and not math.isnan(v)]
            if vals:
                out[name] = math.fsum(vals) / len(vals)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "methods": list(self.methods),
            "rps": [{"window_start": w, "method": m, "rps": v} for w, m, v in self.rps_rows],
            "rps_mean": self.aggregates(),
            "ir": [{"window_start": w, "portfolio": p, "ir": _json_float(v)} for w, p, v in self.ir_rows],
            "ir_mean": self.ir_aggregates(),
            "quintile_frequency": self.quintile_frequency,
            "diagnostics": list(self.diagnostics),
        }


def _json_float(v: float):
    return None if math.isnan(v) else v


def load_panel(config: BacktestConfig) -> ReturnPanel:
    if config.panel:
        return ReturnPanel.from_csv(config.panel)
    if config.prices:
        return compute_log_returns(load_price_table(config.prices))
    raise ValueError("config needs either 'prices' or 'panel'")


def evaluation_windows(panel: ReturnPanel, config: BacktestConfig) -> tuple[list[int], list[str]]:
    """Row offsets of each window start, plus diagnostics for windows dropped."""
    dates = panel.dates
    H = config.horizon_days
    train_end = pd.Timestamp(config.train_window[1])
    diagnostics = []
    starts = []
    if config.windows:
        for w in config.windows:
            i = int(dates.searchsorted(pd.Timestamp(w), side="left"))
            if i + H > len(dates):
                diagnostics.append(f"window {w}: exceeds available data, skipped")
                continue
            starts.append(i)
    else:
        lo = int(dates.searchsorted(pd.Timestamp(config.eval_window[0]), side="left"))
        hi = int(dates.searchsorted(pd.Timestamp(config.eval_window[1]), side="right"))
        starts = list(range(lo, hi - H + 1, H))
    for i in starts:
        if dates[i] <= train_end:
            raise ValueError(f"evaluation window starting {dates[i].date()} overlaps the training window")
    return starts, diagnostics


def _resolve_empirical(config: BacktestConfig, assets, classes) -> frozenset[int]:
    if config.empirical_assets == "auto":
        return frozenset(a for a in assets if classes[a] not in MEAN_CLASSES)
    return frozenset(int(a) for a in config.empirical_assets)


def _window_seed(base: int, window_index: int) -> int:
    return base * 1_000_003 + window_index


def run_backtest(config: BacktestConfig, panel: ReturnPanel | None = None) -> BacktestReport:
    """Score every configured method on every evaluation window.

    Each submission is built from data strictly before its window start.
    """
    if panel is None:
        panel = load_panel(config)
    assets = panel.assets
    if len(assets) % N_QUINTILES:
        raise ValueError(f"number of assets must be a multiple of 5, got {len(assets)}")
    overrides = load_class_overrides(config.class_overrides) if config.class_overrides else None
    classes = class_map(assets, overrides)
    starts, diagnostics = evaluation_windows(panel, config)
    report = BacktestReport(methods=tuple(config.methods), diagnostics=diagnostics)
    if not starts:
        report.diagnostics.append("no evaluation windows")
        return report

    first_start = panel.dates[starts[0]]
    train_panel = panel.before(first_start)
    means = class_mean_returns(train_panel, config.train_window, classes)
    empirical = _resolve_empirical(config, assets, classes)
    history = training_quintiles(train_panel, config.train_window, config.horizon_days)
    if history:
        report.quintile_frequency = quintile_frequency_table(history, assets, classes)
    train_sub = train_panel.window(*config.train_window).log_returns
    report.empirical_samples = {a: train_sub[a].dropna().tolist() for a in sorted(empirical)}

    static_cache: dict[str, np.ndarray] = {}
    gaussian_assets = [a for a in assets if a in means.mu_hat and a not in empirical]
    vol = None
    if "adavol_pipeline" in config.methods or config.portfolio:
        vol = OnlineVolatility(panel, means, config.adavol, config.center, assets=gaussian_assets)

    def static_submission(name: str, emp) -> np.ndarray:
        if name not in static_cache:
            marg = static_marginals(train_panel, means, emp, config.train_window)
            forecast = JointForecast(tuple(assets), marg, None, config.horizon_days)
            static_cache[name] = minimize_expected_rps(forecast, config.matrix_opt)
        return static_cache[name]

    for w_idx, i in enumerate(starts):
        start = panel.dates[i]
        label = start.strftime("%Y-%m-%d")
        block = panel.log_returns.iloc[i:i + config.horizon_days]
        if block.isna().any().any():
            missing = [a for a in assets if block[a].isna().any()]
            report.diagnostics.append(f"window {label}: missing returns for assets {missing}, skipped")
            continue
        Q = quintiles_from_returns(block.sum(axis=0).to_numpy())
        seed = _window_seed(config.seed, w_idx)
        opt = replace(config.matrix_opt, seed=seed)
        for method in config.methods:
            if method == "uniform":
                M = np.full((len(assets), N_QUINTILES), 1.0 / N_QUINTILES)
            elif method == "best_constant":
                if not history:
                    raise ValueError("training window holds no complete horizon block")
                M = best_constant(history)
            elif method == "gaussian_static":
                M = static_submission(method, ())
            elif method == "hybrid":
                M = static_submission(method, empirical)
            else:
                forecast = adavol_forecast(panel, vol, means, start, empirical, config.train_window,
                                           config.horizon_days)
                M = minimize_expected_rps(forecast, opt)
            report.rps_rows.append((label, method, rps(M, Q)))

        if config.portfolio:
            forecast = adavol_forecast(panel, vol, means, start, empirical, config.train_window,
                                       config.horizon_days, correlated=True,
                                       correlation_years=config.correlation_years,
                                       min_overlap=config.correlation_min_overlap)
            popt = replace(config.portfolio_opt, seed=seed)
            x = optimize_portfolio(forecast, popt, uniform_gross=config.uniform_gross)
            daily = np.expm1(block.to_numpy())
            for name, weights in (("adavol", x), ("uniform", uniform_portfolio(len(assets), config.uniform_gross))):
                try:
                    value = information_ratio(weights, daily)
                except DegenerateIRError:
                    value = math.nan
                    report.diagnostics.append(f"window {label}: degenerate IR for {name} portfolio")
                report.ir_rows.append((label, name, value))
    return report


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def emit_report(report: BacktestReport, fmt: str, path) -> list[Path]:
    """Write the report as CSV tables or a single JSON document under ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            target = out / "report.json"
            target.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            return [target]
        if fmt != "csv":
            raise ValueError(f"unknown report format {fmt!r}")
        written = []
        agg = report.aggregates()
        rows = list(report.rps_rows) + [("mean", m, agg[m]) for m in report.methods if m in agg]
        _write_csv(out / "rps.csv", ["window_start", "method", "rps"], rows)
        written.append(out / "rps.csv")
        if report.ir_rows:
            ir_agg = report.ir_aggregates()
            rows = list(report.ir_rows) + [("mean", p, v) for p, v in ir_agg.items()]
            _write_csv(out / "ir.csv", ["window_start", "portfolio", "ir"], rows)
            written.append(out / "ir.csv")
        freq_rows = [[cls] + [float(v) for v in vals] for cls, vals in report.quintile_frequency.items()]
        _write_csv(out / "quintile_frequency.csv", ["class", "q1", "q2", "q3", "q4", "q5"], freq_rows)
        written.append(out / "quintile_frequency.csv")
        if report.empirical_samples:
            samples = [(a, float(v)) for a, vals in report.empirical_samples.items() for v in vals]
            _write_csv(out / "empirical_samples.csv", ["asset_id", "log_return"], samples)
            written.append(out / "empirical_samples.csv")
        if report.diagnostics:
            (out / "diagnostics.txt").write_text("\n".join(report.diagnostics) + "\n")
            written.append(out / "diagnostics.txt")
        return written
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc


def _pipeline_inputs(panel: ReturnPanel, asof, config: BacktestConfig):
    past = panel.before(asof)
    if past.log_returns.empty:
        raise ValueError(f"no data before {asof}")
    overrides = load_class_overrides(config.class_overrides) if config.class_overrides else None
    classes = class_map(panel.assets, overrides)
    means = class_mean_returns(past, config.train_window, classes)
    empirical = _resolve_empirical(config, panel.assets, classes)
    gaussian_assets = [a for a in panel.assets if a in means.mu_hat and a not in empirical]
    vol = OnlineVolatility(past, means, config.adavol, config.center, assets=gaussian_assets)
    return past, means, empirical, vol


def forecast_submission(panel: ReturnPanel, asof, config: BacktestConfig) -> np.ndarray:
    """AdaVol-pipeline quintile submission using data strictly before ``asof``."""
    past, means, empirical, vol = _pipeline_inputs(panel, asof, config)
    forecast = adavol_forecast(past, vol, means, asof, empirical, config.train_window,
                               config.horizon_days)
    return minimize_expected_rps(forecast, config.matrix_opt)


def portfolio_weights(panel: ReturnPanel, asof, config: BacktestConfig) -> np.ndarray:
    """Portfolio from the correlated AdaVol forecast using data strictly before ``asof``."""
    past, means, empirical, vol = _pipeline_inputs(panel, asof, config)
    forecast = adavol_forecast(past, vol, means, asof, empirical, config.train_window,
                               config.horizon_days, correlated=True,
                               correlation_years=config.correlation_years,
                               min_overlap=config.correlation_min_overlap)
    return optimize_portfolio(forecast, config.portfolio_opt, uniform_gross=config.uniform_gross)
