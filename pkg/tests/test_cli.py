import csv
import json

import numpy as np
import pytest

from drmean.cli import main, parse_link
from drmean.datagen import draw_sample
from drmean.glm import Link
from drmean.io import DatasetError, read_dataset_csv, write_dataset_csv


def write(path, text):
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_read_hand_dataset(tmp_path):
    p = write(tmp_path / "d.csv", "x,t,y\n1.5,1,2\n2.5,1,4\n3.5,0,\n")
    d = read_dataset_csv(p)
    assert d.n == 3 and d.n1 == 2
    assert d.names == ("const", "x")
    np.testing.assert_array_equal(d.X, [[1, 1.5], [1, 2.5], [1, 3.5]])


@pytest.mark.parametrize("body, match", [
    ("x,t,y\n1,1,2\n2,0,4\n", "row 2: y is present but t = 0"),
    ("x,t,y\n1,1,\n", "row 1: y is missing but t = 1"),
    ("x,t,y\n1,1,2\nabc,0,\n", "row 2, column 'x'"),
    ("x,t,y\n1,2,2\n", "column 't'"),
    ("x,y\n1,2\n", "missing required column 't'"),
])
def test_read_rejects_inconsistent_rows(tmp_path, body, match):
    with pytest.raises(DatasetError, match=match):
        read_dataset_csv(write(tmp_path / "bad.csv", body))


def test_round_trip(tmp_path):
    d = draw_sample(50, 8)
    write_dataset_csv(d, tmp_path / "s.csv")
    back = read_dataset_csv(tmp_path / "s.csv")
    assert back.names == d.names
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.t, d.t)
    np.testing.assert_array_equal(back.y, d.y)


def test_parse_link():
    assert parse_link("logit") == Link.logit()
    assert parse_link("robit(4)") == Link.robit(4)
    assert parse_link("robit:7") == Link.robit(7)
    assert parse_link({"robit": 4}) == Link.robit(4)


TABLE1 = {"replicates": 20, "sizes": [200, 1000], "base_seed": 11,
          "scenarios": [{"pi_model": ["correct", "incorrect"], "estimators": ["ipw_pop", "ipw_nr"]}]}


def test_simulate_writes_tables(tmp_path):
    cfg = write(tmp_path / "c.json", json.dumps(TABLE1))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "tables.txt").read_text()
    assert "(a) n = 200" in text and "(b) n = 1000" in text
    for col in ("Bias", "% Bias", "RMSE", "MAE"):
        assert col in text
    rows = read_csv(tmp_path / "o" / "metrics.csv")
    assert len(rows) == 8
    # each table number is the csv value rounded to 2 decimals
    for r in rows:
        for k in ("bias", "pct_bias", "rmse", "mae"):
            assert f"{float(r[k]):.2f}" in text


def test_simulate_is_reproducible(tmp_path):
    cfg = write(tmp_path / "c.json", json.dumps(TABLE1))
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2"])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "tables.txt").read_bytes() == (tmp_path / "b" / "tables.txt").read_bytes()


def test_simulate_single_replicate_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", json.dumps({**TABLE1, "replicates": 1}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "summarize" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    "{not json",
    json.dumps({"replicates": 5, "scenarios": [{"estimators": ["nope"]}]}),
    json.dumps({"replicates": 5, "scenarios": [{"link": "probit"}]}),
    json.dumps({"mode": "estimate"}),
])
def test_simulate_bad_config(tmp_path, cfg):
    p = write(tmp_path / "c.json", cfg)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_simulate_missing_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def _estimate(tmp_path, data_text, cfg):
    write(tmp_path / "d.csv", data_text)
    p = write(tmp_path / "e.json", json.dumps({"data": "d.csv", **cfg}))
    code = main(["estimate", "--config", str(p), "--out", str(tmp_path / "o")])
    return code, {r["method"]: r for r in read_csv(tmp_path / "o" / "estimates.csv")} if code != 2 else None


def test_estimate_hand_ipw(tmp_path):
    code, est = _estimate(tmp_path, "x,p,t,y\n1,0.5,1,2\n2,0.25,1,4\n3,0.2,0,\n",
                          {"pi_column": "p", "estimators": ["ipw_pop", "ipw_nr", "naive"]})
    assert code == 0
    assert float(est["ipw_pop"]["mu_hat"]) == pytest.approx(10 / 3)
    assert float(est["ipw_nr"]["mu_hat"]) == pytest.approx(19 / 6)
    assert float(est["ipw_pop"]["max_weight"]) == 4.0
    res = read_csv(tmp_path / "o" / "residuals.csv")
    assert [r["unit"] for r in res] == ["1", "2"]
    assert float(res[0]["eta_hat"]) == pytest.approx(0.0)


def test_estimate_all_respondents_ols(tmp_path):
    rows = "\n".join(f"{x},{1},{y}" for x, y in [(1, 3.0), (2, 1.0), (4, 8.0), (5, 4.0)])
    code, est = _estimate(tmp_path, "x,t,y\n" + rows + "\n", {"estimators": ["ols"]})
    assert code == 0
    assert float(est["ols"]["mu_hat"]) == pytest.approx(4.0)


def test_estimate_zero_propensity_marks_failure(tmp_path):
    code, est = _estimate(tmp_path, "x,p,t,y\n1,0.0,1,2\n2,0.25,1,4\n3,0.2,0,\n",
                          {"pi_column": "p", "estimators": ["ipw_pop", "naive"]})
    assert code == 0
    assert est["ipw_pop"]["status"] == "FAILED"
    assert "infinite weight" in est["ipw_pop"]["message"]
    assert est["naive"]["status"] == "OK"


def test_estimate_no_success_exit_3(tmp_path):
    code, est = _estimate(tmp_path, "x,p,t,y\n1,0.0,1,2\n2,0.25,1,4\n3,0.2,0,\n",
                          {"pi_column": "p", "estimators": ["ipw_pop"]})
    assert code == 3


def test_estimate_fitted_models_on_synthetic_sample(tmp_path):
    d = draw_sample(200, 8)
    write_dataset_csv(d, tmp_path / "s.csv")
    p = write(tmp_path / "e.json", json.dumps({"data": "s.csv"}))
    assert main(["estimate", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    est = {r["method"]: r for r in read_csv(tmp_path / "o" / "estimates.csv")}
    assert all(r["status"] == "OK" for r in est.values())
    assert all(np.isfinite(float(r["mu_hat"])) for r in est.values())
    assert abs(float(est["ols"]["mu_hat"]) - 210) < 5
    res = read_csv(tmp_path / "o" / "residuals.csv")
    assert len(res) == d.n1
    # the residuals are orthogonal to any linear combination of the covariates, eta included
    e = np.array([float(r["residual"]) for r in res])
    eta = np.array([float(r["eta_hat"]) for r in res])
    assert abs(np.sum(e * eta)) < 1e-6 * np.sum(np.abs(e * eta))


def test_estimate_bad_data_is_config_error(tmp_path):
    write(tmp_path / "d.csv", "x,t,y\n1,0,4\n")
    p = write(tmp_path / "e.json", json.dumps({"data": "d.csv"}))
    assert main(["estimate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
