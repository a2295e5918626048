import json

import numpy as np
import pandas as pd
import pytest

from m6cast.cli import EXIT_INVALID, EXIT_OK, main
from m6cast.returns_ingest import ReturnPanel
from m6cast.scoring import read_matrix_csv
from synthetic import synthetic_returns, write_price_csv

SMALL_RUN = """\
panel = panel.csv
train_start = 2019-01-01
train_end = 2020-12-31
eval_start = 2021-01-04
eval_end = 2021-03-05
matrix_iterations = 20
portfolio_iterations = 5
batch_size = 10
heldout_samples = 100
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    returns = synthetic_returns(start="2019-01-01", end="2021-03-31", seed=2)
    ReturnPanel(returns).to_csv(root / "panel.csv")
    (root / "run.conf").write_text(SMALL_RUN)
    return root


class TestIngest:
    def test_prices_to_panel(self, tmp_path):
        returns = synthetic_returns(start="2021-01-04", end="2021-02-26", n_assets=5, seed=0)
        write_price_csv(tmp_path / "prices.csv", returns)
        assert main(["ingest", "--prices", str(tmp_path / "prices.csv"), "--out", str(tmp_path / "p.csv")]) == EXIT_OK
        panel = ReturnPanel.from_csv(tmp_path / "p.csv")
        np.testing.assert_allclose(panel.log_returns.to_numpy(), returns.to_numpy(), atol=1e-12)

    def test_bad_price_exit_code(self, tmp_path, capsys):
        (tmp_path / "prices.csv").write_text("date,asset_id,adj_close\n2021-01-04,1,-5\n")
        code = main(["ingest", "--prices", str(tmp_path / "prices.csv"), "--out", str(tmp_path / "p.csv")])
        assert code == EXIT_INVALID
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["ingest", "--prices", str(tmp_path / "x.csv"), "--out", str(tmp_path / "p.csv")]) == EXIT_INVALID


class TestSimulate:
    def test_writes_series(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert main(["simulate", "--alpha", "0.1", "--beta", "0.8", "--n", "100", "--seed", "3",
                     "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["t", "return"] and len(frame) == 100

    def test_nonstationary_rejected(self, tmp_path):
        assert main(["simulate", "--alpha", "0.6", "--beta", "0.6", "--n", "10",
                     "--out", str(tmp_path / "s.csv")]) == EXIT_INVALID


class TestBacktestCommand:
    def test_csv_and_json(self, workdir, capsys):
        out = workdir / "report"
        code = main(["backtest", "--config", str(workdir / "run.conf"), "--out", str(out),
                     "--format", "csv", "--format", "json"])
        assert code == EXIT_OK
        assert (out / "rps.csv").exists() and (out / "report.json").exists()
        doc = json.loads((out / "report.json").read_text())
        assert doc["rps_mean"]["uniform"] == pytest.approx(0.16, abs=1e-15)
        assert "mean RPS" in capsys.readouterr().out

    def test_bad_config(self, tmp_path):
        (tmp_path / "bad.conf").write_text("nonsense = 1\n")
        assert main(["backtest", "--config", str(tmp_path / "bad.conf"), "--out", str(tmp_path)]) == EXIT_INVALID

    def test_missing_arguments(self):
        assert main(["backtest"]) == EXIT_INVALID


class TestForecastAndScore:
    def test_forecast_then_score(self, workdir, tmp_path, capsys):
        sub = tmp_path / "sub.csv"
        assert main(["forecast", "--panel", str(workdir / "panel.csv"), "--asof", "2021-03-01",
                     "--config", str(workdir / "run.conf"), "--out", str(sub)]) == EXIT_OK
        ids, M = read_matrix_csv(sub)
        assert ids == list(range(1, 101))
        np.testing.assert_allclose(M.sum(axis=1), 1.0)

        realized = tmp_path / "realized.csv"
        r = np.random.default_rng(0).normal(size=100)
        pd.DataFrame({"asset_id": range(1, 101), "return": r}).to_csv(realized, index=False)
        capsys.readouterr()
        assert main(["score", "--submission", str(sub), "--realized", str(realized)]) == EXIT_OK
        value = float(capsys.readouterr().out.strip().split("=")[1])
        assert 0 <= value <= 0.8

    def test_score_against_itself(self, tmp_path, capsys):
        from m6cast.scoring import write_matrix_csv

        write_matrix_csv(tmp_path / "m.csv", np.eye(5))
        assert main(["score", "--submission", str(tmp_path / "m.csv"), "--realized", str(tmp_path / "m.csv")]) == 0
        assert capsys.readouterr().out.strip() == "rps=0.0"

    def test_score_asset_mismatch(self, tmp_path):
        from m6cast.scoring import write_matrix_csv

        write_matrix_csv(tmp_path / "a.csv", np.eye(5))
        write_matrix_csv(tmp_path / "b.csv", np.eye(5), asset_ids=range(6, 11))
        assert main(["score", "--submission", str(tmp_path / "a.csv"), "--realized", str(tmp_path / "b.csv")]) == 2

    def test_portfolio(self, workdir, tmp_path):
        out = tmp_path / "w.csv"
        assert main(["portfolio", "--panel", str(workdir / "panel.csv"), "--asof", "2021-03-01",
                     "--config", str(workdir / "run.conf"), "--out", str(out)]) == EXIT_OK
        w = pd.read_csv(out)["weight"].to_numpy()
        assert 0.25 - 1e-12 <= np.abs(w).sum() <= 1 + 1e-12

    def test_asof_before_data(self, workdir, tmp_path):
        assert main(["forecast", "--panel", str(workdir / "panel.csv"), "--asof", "2000-01-01",
                     "--config", str(workdir / "run.conf"), "--out", str(tmp_path / "s.csv")]) == EXIT_INVALID


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "ingest" in capsys.readouterr().out
