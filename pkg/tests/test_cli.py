import io
import json

import numpy as np
import pytest

from upliftkit.cli import run
from upliftkit.dataset import load_csv
from upliftkit.errors import ModelFormatError
from upliftkit.meta import fit_cate, predict_cate
from upliftkit.metrics import qini_coefficient
from upliftkit.persistence import load_model, model_to_json, save_model


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out, err)
    summary = json.loads(out.getvalue()) if code == 0 else None
    return code, summary, err.getvalue()


@pytest.fixture(scope="module")
def binary_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "b.csv"
    assert cli("simulate", "--dgp", "binary_logistic", "--n", 3000, "--d", 3,
               "--seed", 42, "--out", p)[0] == 0
    return p


@pytest.fixture(scope="module")
def linear_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "l.csv"
    assert cli("simulate", "--dgp", "heterogeneous_linear", "--n", 600, "--d", 3,
               "--seed", 1, "--out", p)[0] == 0
    return p


class TestSimulate:
    def test_byte_identical(self, tmp_path, binary_csv):
        again = tmp_path / "again.csv"
        cli("simulate", "--dgp", "binary_logistic", "--n", 3000, "--d", 3,
            "--seed", 42, "--out", again)
        assert again.read_bytes() == binary_csv.read_bytes()

    def test_truth_column(self, binary_csv, tmp_path):
        assert binary_csv.read_text().splitlines()[0] == "x1,x2,x3,w,y,__tau"
        bare = tmp_path / "bare.csv"
        cli("simulate", "--dgp", "linear", "--n", 50, "--d", 2, "--out", bare, "--no-truth")
        assert bare.read_text().splitlines()[0] == "x1,x2,w,y"


class TestTrainPredict:
    @pytest.mark.parametrize("method", ["s", "t", "x", "r"])
    def test_matches_in_memory(self, tmp_path, linear_csv, method):
        model_path, pred = tmp_path / "m.json", tmp_path / "p.csv"
        code, summary, _ = cli("train", "--data", linear_csv, "--method", method,
                               "--out", model_path)
        assert code == 0 and summary["n_train"] == 600
        assert cli("predict", "--data", linear_csv, "--model", model_path,
                   "--out", pred)[0] == 0
        frame = load_csv(linear_csv)
        expected = predict_cate(fit_cate(frame, method, seed=42), frame.features)[:, 0]
        lines = pred.read_text().splitlines()
        assert lines[0] == "tau_1"
        np.testing.assert_array_equal([float(v) for v in lines[1:]], expected)

    def test_save_load_save_identical(self, tmp_path, linear_csv):
        model_path = tmp_path / "m.json"
        cli("train", "--data", linear_csv, "--method", "x", "--out", model_path)
        again = tmp_path / "again.json"
        save_model(load_model(model_path), again)
        assert again.read_bytes() == model_path.read_bytes()
        assert model_to_json(load_model(again)) == model_path.read_text()

    def test_unknown_schema_version(self, tmp_path, linear_csv):
        model_path = tmp_path / "m.json"
        cli("train", "--data", linear_csv, "--method", "t", "--out", model_path)
        obj = json.loads(model_path.read_text())
        obj["schema_version"] = "99"
        model_path.write_text(json.dumps(obj))
        with pytest.raises(ModelFormatError):
            load_model(model_path)
        code, _, err = cli("predict", "--data", linear_csv, "--model", model_path,
                           "--out", tmp_path / "p.csv")
        assert code == 3 and "schema" in err
        assert not (tmp_path / "p.csv").exists()

    def test_forest_deterministic_across_workers(self, tmp_path, binary_csv):
        outs = []
        for j in (1, 3, 1):
            p = tmp_path / f"f{len(outs)}.json"
            assert cli("train", "--data", binary_csv, "--method", "uplift_forest",
                       "--forest-trees", 6, "--n-jobs", j, "--out", p)[0] == 0
            outs.append(p.read_bytes())
        assert outs[0] == outs[1] == outs[2]


class TestPipeline:
    def test_forest_beats_random(self, tmp_path, binary_csv):
        model, hold = tmp_path / "m.json", tmp_path / "hold.csv"
        code, summary, _ = cli("train", "--data", binary_csv, "--method", "uplift_forest",
                               "--forest-trees", 30, "--test-fraction", 0.5,
                               "--holdout-out", hold, "--out", model)
        assert code == 0 and summary["n_holdout"] == 1500
        code, ev, _ = cli("evaluate", "--data", hold, "--model", model,
                          "--out", tmp_path / "curve.csv")
        assert code == 0
        frame = load_csv(hold)
        rng = np.random.default_rng(0)
        random = np.mean([qini_coefficient(rng.random(frame.n), frame) for _ in range(20)])
        assert ev["qini_coefficient"] > random
        assert len((tmp_path / "curve.csv").read_text().splitlines()) == 1501

    def test_evaluate_scores_column_and_pehe(self, tmp_path, linear_csv):
        code, ev, _ = cli("evaluate", "--data", linear_csv, "--scores-col", "__tau",
                          "--out", tmp_path / "c.json", "--format", "json")
        assert code == 0 and ev["pehe"] == 0.0
        body = json.loads((tmp_path / "c.json").read_text())
        assert body["auuc"] == ev["auuc"] and len(body["rows"]) == 600

    def test_recommend(self, tmp_path, linear_csv):
        model = tmp_path / "m.json"
        cli("train", "--data", linear_csv, "--method", "t", "--out", model)
        code, s, _ = cli("recommend", "--data", linear_csv, "--model", model,
                         "--fraction", 0.25, "--out", tmp_path / "r.csv")
        assert code == 0 and s["n_targeted"] == 150
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "row,recommended,targeted" and len(lines) == 601
        assert sum(s["recommended_counts"].values()) == 600

    def test_impact(self, tmp_path, linear_csv):
        out = tmp_path / "i.json"
        code, s, _ = cli("impact", "--data", linear_csv, "--bootstrap-b", 20, "--out", out)
        assert code == 0
        methods = [r["method"] for r in s["reports"]]
        assert methods == ["naive", "ipw", "cate_mean"]
        for r in s["reports"]:
            assert r["ci_low"] <= r["estimate"] <= r["ci_high"] and r["b"] == 20
        again = tmp_path / "i2.json"
        cli("impact", "--data", linear_csv, "--bootstrap-b", 20, "--n-jobs", 3, "--out", again)
        assert again.read_bytes() == out.read_bytes()


class TestExitCodes:
    def test_usage_error(self, tmp_path, linear_csv):
        code, _, err = cli("train", "--data", linear_csv, "--method", "dr",
                           "--out", tmp_path / "m.json")
        assert code == 2 and "invalid choice" in err
        assert not (tmp_path / "m.json").exists()

    def test_no_subcommand(self):
        assert cli()[0] == 2

    def test_holdout_flag_pairing(self, tmp_path, linear_csv):
        code, _, _ = cli("train", "--data", linear_csv, "--test-fraction", 0.3,
                         "--out", tmp_path / "m.json")
        assert code == 2 and not (tmp_path / "m.json").exists()

    def test_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,w,y\n1,0,0.5\n2,1,oops\n")
        code, _, err = cli("train", "--data", bad, "--out", tmp_path / "m.json")
        assert code == 3 and "row 2" in err and "'y'" in err
        assert not (tmp_path / "m.json").exists()

    def test_continuous_outcome_for_forest(self, tmp_path, linear_csv):
        code, _, _ = cli("train", "--data", linear_csv, "--method", "uplift_forest",
                         "--out", tmp_path / "m.json")
        assert code == 3

    def test_fit_error(self, tmp_path):
        data = tmp_path / "deg.csv"
        rows = [f"{i / 10},{i % 2},{1 if i % 2 else i % 4 // 2}" for i in range(20)]
        data.write_text("x,w,y\n" + "\n".join(rows) + "\n")
        code, _, err = cli("train", "--data", data, "--out", tmp_path / "m.json")
        assert code == 4 and "degenerate" in err
        assert not (tmp_path / "m.json").exists()


class TestConfig:
    def test_config_sets_defaults(self, tmp_path, linear_csv):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "r", "ridge-lambda": 0.5}))
        code, s, _ = cli("train", "--data", linear_csv, "--config", cfg,
                         "--out", tmp_path / "m.json")
        assert code == 0 and s["method"] == "r"
        model = json.loads((tmp_path / "m.json").read_text())
        assert model["base_spec"]["ridge_lambda"] == 0.5

    def test_flag_beats_config(self, tmp_path, linear_csv):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "r"}))
        code, s, _ = cli("train", "--data", linear_csv, "--config", cfg, "--method", "s",
                         "--out", tmp_path / "m.json")
        assert code == 0 and s["method"] == "s"

    def test_unknown_key(self, tmp_path, linear_csv):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"learning_rate": 0.1}))
        code, _, err = cli("train", "--data", linear_csv, "--config", cfg,
                           "--out", tmp_path / "m.json")
        assert code == 2 and "learning_rate" in err
