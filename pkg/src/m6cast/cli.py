"""Command-line interface: ``m6cast <command> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from m6cast.backtest import (
    BacktestConfig,
    emit_report,
    forecast_submission,
    portfolio_weights,
    run_backtest,
    simulate_garch,
)
from m6cast.config import ConfigError
from m6cast.returns_ingest import PriceDataError, ReturnPanel, compute_log_returns, load_price_table
from m6cast.scoring import quintiles_from_returns, read_matrix_csv, rps, write_matrix_csv

logger = logging.getLogger("m6cast")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    pass


def _cmd_ingest(args) -> None:
    panel = compute_log_returns(load_price_table(args.prices))
    panel.to_csv(args.out)
    print(f"wrote {len(panel.dates)} dates x {len(panel.assets)} assets to {args.out}")


def _cmd_simulate(args) -> None:
    x = simulate_garch([args.alpha], [args.beta], variance=args.variance, n=args.n, seed=args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "return"])
        for t, v in enumerate(x, start=1):
            w.writerow([t, repr(float(v))])
    print(f"wrote {args.n} observations to {args.out}")


def _cmd_backtest(args) -> None:
    config = BacktestConfig.from_file(args.config)
    report = run_backtest(config)
    for fmt in args.format:
        emit_report(report, fmt, args.out)
    for method, value in report.aggregates().items():
        print(f"{method:>16s}  mean RPS {value:.6f}")
    for name, value in report.ir_aggregates().items():
        print(f"{name + ' portfolio':>16s}  mean IR  {value:.6f}")
    for line in report.diagnostics:
        print(f"note: {line}")


def _load_panel_config(args):
    config = BacktestConfig.from_file(args.config)
    return ReturnPanel.from_csv(args.panel), config


def _cmd_forecast(args) -> None:
    panel, config = _load_panel_config(args)
    M = forecast_submission(panel, args.asof, config)
    write_matrix_csv(args.out, M, panel.assets)
    print(f"wrote submission for {len(panel.assets)} assets to {args.out}")


def _cmd_portfolio(args) -> None:
    panel, config = _load_panel_config(args)
    x = portfolio_weights(panel, args.asof, config)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "weight"])
        for a, v in zip(panel.assets, x):
            w.writerow([a, repr(float(v))])
    print(f"wrote weights for {len(panel.assets)} assets to {args.out}")


def _read_realized(path) -> tuple[list[int], np.ndarray]:
    """Realized truth as a quintile matrix, or as ``asset_id,return`` rows."""
    header = Path(path).read_text().splitlines()[:1]
    if header and header[0].replace(" ", "") == "asset_id,return":
        frame = pd.read_csv(path)
        return frame["asset_id"].astype(int).tolist(), quintiles_from_returns(frame["return"].to_numpy())
    return read_matrix_csv(path)


def _cmd_score(args) -> None:
    ids_m, M = read_matrix_csv(args.submission)
    ids_q, Q = _read_realized(args.realized)
    if sorted(ids_m) != sorted(ids_q):
        raise UsageError("submission and realized files cover different assets")
    order = {a: i for i, a in enumerate(ids_q)}
    Q = Q[[order[a] for a in ids_m]]
    print(f"rps={rps(M, Q)!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m6cast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="price CSV -> log-return panel")
    p.add_argument("--prices", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("simulate", help="simulate a GARCH(1,1) return series")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("backtest", help="rolling backtest of the benchmark methods")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", action="append", choices=["csv", "json"],
                   help="report format (repeatable; default csv)")
    p.set_defaults(func=_cmd_backtest)

    for name, func, helptext in (
        ("forecast", _cmd_forecast, "quintile submission as of a date"),
        ("portfolio", _cmd_portfolio, "portfolio weights as of a date"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--panel", required=True)
        p.add_argument("--asof", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("score", help="RPS of a submission against realized outcomes")
    p.add_argument("--submission", required=True)
    p.add_argument("--realized", required=True)
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "backtest" and not args.format:
        args.format = ["csv"]
    try:
        args.func(args)
    except (ConfigError, PriceDataError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
