"""Price loading, log-return panels, asset classes and class-mean returns."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

__all__ = [
    "PriceDataError",
    "PriceTable",
    "ReturnPanel",
    "AssetClass",
    "ClassMeans",
    "load_price_table",
    "compute_log_returns",
    "class_of_asset",
    "class_map",
    "load_class_overrides",
    "class_mean_returns",
    "DEFAULT_TRAIN_WINDOW",
]

DEFAULT_TRAIN_WINDOW = ("2015-01-01", "2020-12-31")

PRICE_COLUMNS = ("date", "asset_id", "adj_close")


class PriceDataError(ValueError):
    """Raised for unreadable or invalid price files."""


class AssetClass(str, enum.Enum):
    STOCKS = "Stocks"
    ETF_EQUITIES = "EtfEquities"
    ETF_FIXED_INCOME = "EtfFixedIncome"
    ETF_COMMODITIES = "EtfCommodities"
    ETF_VOLATILITY = "EtfVolatility"

    @classmethod
    def parse(cls, text: str) -> "AssetClass":
        key = text.strip().replace(" ", "").replace("_", "").lower()
        for member in cls:
            if key in (member.value.lower(), member.name.replace("_", "").lower()):
                return member
        raise ValueError(f"unknown asset class {text!r}")


# Classes sharing a Gaussian mean; the volatility ETF is modelled empirically.
MEAN_CLASSES = (
    AssetClass.STOCKS,
    AssetClass.ETF_EQUITIES,
    AssetClass.ETF_FIXED_INCOME,
    AssetClass.ETF_COMMODITIES,
)


@dataclass(frozen=True)
class PriceTable:
    """Adjusted close prices, one row per date and one column per asset; NaN marks missing."""

    prices: pd.DataFrame

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.prices.index

    @property
    def assets(self) -> list[int]:
        return list(self.prices.columns)


@dataclass(frozen=True)
class ReturnPanel:
    """Daily log-returns, indexed by date, one column per asset; NaN marks missing."""

    log_returns: pd.DataFrame

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.log_returns.index

    @property
    def assets(self) -> list[int]:
        return list(self.log_returns.columns)

    def window(self, start=None, end=None) -> "ReturnPanel":
        """Rows with ``start <= date <= end`` (either bound optional)."""
        idx = self.log_returns.index
        mask = np.ones(len(idx), dtype=bool)
        if start is not None:
            mask &= idx >= pd.Timestamp(start)
        if end is not None:
            mask &= idx <= pd.Timestamp(end)
        return ReturnPanel(self.log_returns.loc[mask])

    def before(self, date) -> "ReturnPanel":
        """Rows strictly before ``date``."""
        return ReturnPanel(self.log_returns.loc[self.log_returns.index < pd.Timestamp(date)])

    def to_csv(self, path) -> None:
        frame = self.log_returns.copy()
        frame.index = frame.index.strftime("%Y-%m-%d")
        frame.index.name = "date"
        frame.to_csv(path, float_format="%.17g")

    @classmethod
    def from_csv(cls, path) -> "ReturnPanel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"panel file not found: {path}")
        frame = pd.read_csv(path, index_col="date", parse_dates=["date"])
        frame.columns = [int(c) for c in frame.columns]
        return cls(frame.astype(np.float64))


def load_price_table(path, columns: tuple[str, str, str] = PRICE_COLUMNS) -> PriceTable:
    """Read a long-format price CSV (``date,asset_id,adj_close`` by default).

    Empty price cells become explicit missing values. Unparseable numbers or
    non-positive prices raise :class:`PriceDataError` naming the offending
    file lines.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"price file not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise PriceDataError(f"{path}: empty file") from exc
    date_col, asset_col, price_col = columns
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise PriceDataError(f"{path}: header lacks columns {missing}; got {list(raw.columns)}")

    # file line = frame row + 2 (header is line 1)
    lines = raw.index.to_numpy() + 2
    text = raw[price_col].str.strip()
    is_blank = text.isin(["", "NA", "NaN", "nan", "null"])
    price = pd.to_numeric(text.where(~is_blank), errors="coerce")
    problems = []
    for line, value in zip(lines[price.isna() & ~is_blank], text[price.isna() & ~is_blank]):
        problems.append(f"line {line}: unparseable price {value!r}")
    for line, value in zip(lines[price <= 0], price[price <= 0]):
        problems.append(f"line {line}: non-positive price {value!r}")

    asset = pd.to_numeric(raw[asset_col].str.strip(), errors="coerce")
    for line, value in zip(lines[asset.isna() | (asset % 1 != 0)], raw[asset_col][asset.isna() | (asset % 1 != 0)]):
        problems.append(f"line {line}: bad asset id {value!r}")
    dates = pd.to_datetime(raw[date_col].str.strip(), errors="coerce", format="ISO8601")
    for line, value in zip(lines[dates.isna()], raw[date_col][dates.isna()]):
        problems.append(f"line {line}: bad date {value!r}")
    if problems:
        raise PriceDataError(f"{path}: " + "; ".join(problems))

    long = pd.DataFrame({"date": dates, "asset": asset.astype(int), "price": price})
    dup = long.duplicated(["date", "asset"], keep=False)
    if dup.any():
        where = ", ".join(f"line {x}" for x in lines[dup.to_numpy()])
        raise PriceDataError(f"{path}: duplicate (date, asset) rows at {where}")
    wide = long.pivot(index="date", columns="asset", values="price").sort_index()
    wide.columns = [int(c) for c in wide.columns]
    wide.columns.name = None
    wide.index.name = "date"
    return PriceTable(wide.astype(np.float64))


def compute_log_returns(table: PriceTable) -> ReturnPanel:
    """ln(p_t / p_{t-1}); a return touching a missing price is missing."""
    prices = table.prices
    if len(prices.index) < 2:
        raise ValueError("need at least two dates to compute returns")
    if not (prices.notna().sum(axis=0) >= 2).any():
        raise ValueError("no asset has two or more prices")
    logp = np.log(prices)
    rets = (logp - logp.shift(1)).iloc[1:]
    return ReturnPanel(rets)


_TABLE1_RANGES = (
    (range(1, 51), AssetClass.STOCKS),
    (range(51, 68), AssetClass.ETF_EQUITIES),
    (range(68, 77), AssetClass.ETF_FIXED_INCOME),
    (range(77, 80), AssetClass.ETF_COMMODITIES),
    (range(80, 100), AssetClass.ETF_EQUITIES),
    (range(100, 101), AssetClass.ETF_VOLATILITY),
)


def class_of_asset(asset_id: int) -> AssetClass:
    """Default class of an M6 universe asset id (1..100)."""
    for ids, cls in _TABLE1_RANGES:
        if asset_id in ids:
            return cls
    raise ValueError(f"asset id must be in 1..100, got {asset_id}")


def class_map(assets, overrides: Mapping[int, AssetClass] | None = None) -> dict[int, AssetClass]:
    overrides = overrides or {}
    return {a: overrides[a] if a in overrides else class_of_asset(a) for a in assets}


def load_class_overrides(path) -> dict[int, AssetClass]:
    """Read an ``asset_id,class`` CSV."""
    frame = pd.read_csv(path, dtype=str)
    if list(frame.columns[:2]) != ["asset_id", "class"]:
        raise PriceDataError(f"{path}: expected header asset_id,class")
    return {int(a): AssetClass.parse(c) for a, c in zip(frame["asset_id"], frame["class"])}


@dataclass(frozen=True)
class ClassMeans:
    """Expected daily log-return per asset, shared within a mean-class.

    Assets of classes outside the four mean-classes have no Gaussian mean and
    are listed in ``empirical``.
    """

    mu_hat: Mapping[int, float]
    empirical: frozenset[int]
    class_values: Mapping[AssetClass, float]

    def __getitem__(self, asset: int) -> float:
        return self.mu_hat[asset]


def class_mean_returns(
    panel: ReturnPanel,
    window=DEFAULT_TRAIN_WINDOW,
    classes: Mapping[int, AssetClass] | None = None,
) -> ClassMeans:
    """Pooled mean of all window log-returns of each mean-class."""
    sub = panel.window(*window).log_returns
    if sub.empty or not sub.notna().any().any():
        raise ValueError(f"no returns inside window {window}")
    classes = classes if classes is not None else class_map(panel.assets)
    lacking = [a for a in sub.columns if sub[a].notna().sum() == 0]
    if lacking:
        raise ValueError(f"assets without returns in window {window}: {lacking}")

    class_values: dict[AssetClass, float] = {}
    for cls in MEAN_CLASSES:
        members = [a for a in sub.columns if classes[a] is cls]
        if not members:
            continue
        pooled = sub[members].to_numpy().ravel()
        pooled = pooled[~np.isnan(pooled)]
        class_values[cls] = math.fsum(pooled) / pooled.size
    mu_hat = {a: class_values[classes[a]] for a in sub.columns if classes[a] in class_values}
    empirical = frozenset(a for a in sub.columns if classes[a] not in MEAN_CLASSES)
    return ClassMeans(mu_hat=mu_hat, empirical=empirical, class_values=class_values)
