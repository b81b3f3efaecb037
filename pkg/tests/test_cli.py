"""Command-line workflows, archives and CSV ingest."""

import json

import numpy as np
import pytest

from gsmooth import archive
from gsmooth.cli import main
from gsmooth.tableio import DataError, read_csv, write_csv


def _write(path, text):
   path.write_text(text)
   return str(path)


@pytest.fixture
def gaussian_fit(tmp_path):
   data = tmp_path / "d.csv"
   assert main(["simulate", "--n", "200", "--seed", "4", "--out", str(data)]) == 0
   model = _write(tmp_path / "m.json", json.dumps({"family": "gaussian", "formulas": [
      {"response": "y", "smooths": [{"var": "x0", "k": 8}, {"var": "x2", "k": 10}]}]}))
   arch = tmp_path / "a.json"
   assert main(["fit", "--data", str(data), "--model", model, "--out", str(arch)]) == 0
   return tmp_path, str(data), model, str(arch)


def test_fit_predict_round_trip(gaussian_fit, capsys):
   tmp, data, model, arch = gaussian_fit
   m = archive.load(arch)
   out = tmp / "p.csv"
   assert main(["predict", "--archive", arch, "--data", data, "--se", "--out", str(out)]) == 0
   pred = read_csv(str(out))
   X = m.model_matrices(read_csv(data))[0][0]
   assert np.max(np.abs(pred["fit"] - X @ m.beta)) < 1e-12 * np.abs(pred["fit"]).max()
   assert np.all(pred["se"] >= 0)


def test_archive_round_trip_is_exact(gaussian_fit):
   tmp, data, model, arch = gaussian_fit
   m = archive.load(arch)
   again = archive.from_dict(json.loads(json.dumps(archive.to_dict(m))))
   d = read_csv(data)
   a = m.predict(d, se=True)
   b = again.predict(d, se=True)
   for k in a:
      assert np.max(np.abs(a[k] - b[k])) <= 1e-12 * max(1.0, np.abs(a[k]).max())
   np.testing.assert_array_equal(m.result.Vc, again.result.Vc)


def test_refit_is_deterministic(gaussian_fit):
   tmp, data, model, arch = gaussian_fit
   arch2 = str(tmp / "b.json")
   assert main(["fit", "--data", data, "--model", model, "--out", arch2]) == 0
   a, b = archive.load(arch), archive.load(arch2)
   assert np.max(np.abs(a.beta - b.beta)) <= 1e-10
   assert np.max(np.abs(a.result.rho - b.result.rho)) <= 1e-10


def test_future_archive_version_is_rejected(gaussian_fit, capsys):
   tmp, data, model, arch = gaussian_fit
   with open(arch) as f:
      d = json.load(f)
   d["format_version"] = archive.FORMAT_VERSION + 1
   bad = _write(tmp / "future.json", json.dumps(d))
   assert main(["predict", "--archive", bad, "--data", data]) == 1
   assert "newer than the supported version" in capsys.readouterr().err


def test_summary_plot_data(gaussian_fit, capsys):
   tmp, data, model, arch = gaussian_fit
   pd = tmp / "plots"
   assert main(["summary", "--archive", arch, "--data", data, "--plot-dir", str(pd)]) == 0
   assert "s(x0)" in capsys.readouterr().out
   for name in ("s_x0.csv", "s_x2.csv"):
      cols = read_csv(str(pd / name))
      assert set(cols) == {"x", "fit", "lower", "upper"}
      assert len(cols["x"]) == 200
      assert np.all(cols["lower"] <= cols["fit"]) and np.all(cols["fit"] <= cols["upper"])


def test_cox_survival_starts_at_one(tmp_path):
   rng = np.random.default_rng(2)
   n = 150
   x = rng.uniform(size=n)
   t = rng.exponential(np.exp(-np.sin(2 * np.pi * x)))
   c = rng.exponential(2.0, n)
   cols = {"x": x, "time": np.minimum(t, c), "status": (t <= c).astype(float)}
   data = str(tmp_path / "c.csv")
   write_csv(data, cols)
   model = _write(tmp_path / "m.json", json.dumps(
      {"family": "coxph", "status": "status",
       "formulas": [{"response": "time", "smooths": [{"var": "x", "k": 8}]}]}))
   arch = str(tmp_path / "a.json")
   assert main(["fit", "--data", data, "--model", model, "--out", arch]) == 0
   new = {"x": np.array([0.2, 0.5]), "time": np.array([0.0, 0.0]), "status": np.ones(2)}
   write_csv(str(tmp_path / "new.csv"), new)
   out = str(tmp_path / "s.csv")
   assert main(["predict", "--archive", arch, "--data", str(tmp_path / "new.csv"), "--type",
                "survival", "--out", out]) == 0
   assert np.allclose(read_csv(out)["fit"], 1.0, atol=1e-14)


# ---------------------------------------------------------------- exit codes and CSV ingest


def test_malformed_inputs_exit_one(tmp_path, capsys):
   model = _write(tmp_path / "m.json", json.dumps({"family": "gaussian", "formulas": [
      {"response": "y", "linear": ["x"]}]}))
   empty = _write(tmp_path / "empty.csv", "")
   assert main(["fit", "--data", empty, "--model", model, "--out", str(tmp_path / "a")]) == 1
   assert "empty" in capsys.readouterr().err
   bad_json = _write(tmp_path / "bad.json", '{"family": "gaussian",\n "formulas": [}')
   good = _write(tmp_path / "g.csv", "x,y\n1,2\n2,3\n3,5\n")
   assert main(["fit", "--data", good, "--model", bad_json, "--out", str(tmp_path / "a")]) == 1
   assert "line 2" in capsys.readouterr().err
   assert main(["predict", "--archive", str(tmp_path / "none.json"), "--data", good]) == 1


def test_header_only_csv(tmp_path):
   cols = read_csv(_write(tmp_path / "h.csv", "x,y\n"))
   assert set(cols) == {"x", "y"} and len(cols["x"]) == 0


def test_quoted_fields(tmp_path):
   cols = read_csv(_write(tmp_path / "q.csv", '"x","y"\n"1.5","2"\n" 3",4\n'))
   np.testing.assert_array_equal(cols["x"], [1.5, 3.0])


def test_non_numeric_value_names_row_and_column(tmp_path):
   with pytest.raises(DataError, match=r"row 3, column 'y'"):
      read_csv(_write(tmp_path / "n.csv", "x,y\n1,2\n2,abc\n"))


def test_missing_values_are_reported(tmp_path):
   with pytest.raises(DataError, match=r"row 2 column 'x'.*row 4 column 'y'"):
      read_csv(_write(tmp_path / "na.csv", "x,y\nNA,1\n2,3\n4,\n"))


def test_simulate_is_byte_identical(tmp_path):
   a, b = tmp_path / "a.csv", tmp_path / "b.csv"
   for p in (a, b):
      assert main(["simulate", "--family", "poisson", "--n", "50", "--seed", "7", "--out",
                   str(p)]) == 0
   assert a.read_bytes() == b.read_bytes()


def test_aic_experiment_command(tmp_path):
   cfg = _write(tmp_path / "e.json", json.dumps({"n": 120, "smooths": [
      {"var": "x2", "basis": "ps", "k": 8}]}))
   out = tmp_path / "e.csv"
   assert main(["aic-experiment", "--config", cfg, "--replicates", "3", "--effect-grid", "0,1",
                "--out", str(out)]) == 0
   cols = read_csv(str(out))
   np.testing.assert_array_equal(cols["effect"], [0.0, 1.0])
   assert np.all((cols["conventional"] >= 0) & (cols["conventional"] <= 1))
   bad = _write(tmp_path / "x.json", json.dumps({"bogus": 1}))
   assert main(["aic-experiment", "--config", bad]) == 1
