import json

import numpy as np
import pytest

from poolcheck import io
from poolcheck.cli import main
from poolcheck.pooltest import pooling_test
from poolcheck.regress import SiteDataset, summarize
from poolcheck.sim import generate_shared_beta


@pytest.fixture
def site_csvs(tmp_path):
    ds, _, _ = generate_shared_beta(64, 3)
    paths = []
    for i, d in enumerate(ds):
        p = tmp_path / f"site{i + 1}.csv"
        io.write_csv(d, p)
        paths.append(str(p))
    return paths


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestFitAndPool:
    def test_privacy_path_bit_exact(self, site_csvs, tmp_path, capsys):
        files = []
        for p in site_csvs:
            out = tmp_path / (p.rsplit("/", 1)[1] + ".json")
            assert run(capsys, "fit-site", p, "-o", out)[0] == 0
            files.append(out)
        code, stdout, _ = run(capsys, "--json", "pool-test", *files, "--significance", "0.05")
        assert code == 0
        got = json.loads(stdout)
        roles = {"x1": "predictor", "x2": "predictor", "x3": "predictor", "y": "response"}
        mem = pooling_test([summarize(io.load_csv(p, roles)) for p in site_csvs], 0.05)
        assert got["statistic"] == mem.statistic
        assert got["p_value"] == mem.p_value
        assert got["threshold"] == mem.threshold
        assert got["decision"] == mem.decision.value

    def test_identical_sites_accept(self, site_csvs, tmp_path, capsys):
        a = tmp_path / "a.json"
        run(capsys, "fit-site", site_csvs[0], "-o", a)
        code, stdout, _ = run(capsys, "pool-test", a, a, "--significance", "0.05", "--json")
        assert code == 0
        assert json.loads(stdout)["decision"] == "AcceptPooling"
        assert "\n" not in stdout.strip()

    def test_mismatched_features(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        for name, cols in (("a", ["x1", "x2"]), ("b", ["x2", "x1"])):
            d = SiteDataset(X=rng.standard_normal((20, 2)), y=rng.standard_normal(20), feature_names=cols)
            io.write_summary(summarize(d), tmp_path / f"{name}.json")
        code, _, err = run(capsys, "pool-test", tmp_path / "a.json", tmp_path / "b.json")
        assert code == 3
        assert "IncompatibleSummaries" in err

    def test_reference_flag(self, site_csvs, tmp_path, capsys):
        files = []
        for p in site_csvs:
            out = tmp_path / (p.rsplit("/", 1)[1] + ".json")
            run(capsys, "fit-site", p, "-o", out)
            files.append(out)
        _, stdout, _ = run(capsys, "--json", "pool-test", *files, "--reference", "site2")
        assert json.loads(stdout)["reference"] == "site2"

    def test_tampered_summary(self, site_csvs, tmp_path, capsys):
        a = tmp_path / "a.json"
        run(capsys, "fit-site", site_csvs[0], "-o", a)
        doc = json.loads(a.read_text())
        doc["beta_hat"][0] += 1.0
        a.write_text(json.dumps(doc))
        code, _, err = run(capsys, "pool-test", a, a)
        assert code == 3 and "ChecksumMismatch" in err

    def test_mse_bounds(self, site_csvs, tmp_path, capsys):
        files = []
        for p in site_csvs:
            out = tmp_path / (p.rsplit("/", 1)[1] + ".json")
            run(capsys, "fit-site", p, "-o", out)
            files.append(out)
        code, stdout, _ = run(capsys, "--json", "mse-bounds", *files)
        assert code == 0
        assert json.loads(stdout)["var_reduction"] >= 0


class TestExitCodes:
    def test_usage(self, capsys):
        assert run(capsys, "no-such-command")[0] == 2
        assert run(capsys, "pool-test")[0] == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run(capsys, "pool-test", tmp_path / "x.json", tmp_path / "y.json")[0] == 3

    def test_numerical(self, tmp_path, capsys):
        p = tmp_path / "s.csv"
        p.write_text("x1,x2,y\n1,2,1\n2,4,2\n3,6,4\n4,8,3\n")
        code, _, err = run(capsys, "fit-site", p, "-o", tmp_path / "s.json")
        assert code == 4 and "RankDeficient" in err


class TestLassoCommands:
    def test_lasso_fit_matches_library(self, site_csvs, capsys):
        from poolcheck import smslasso

        code, stdout, _ = run(capsys, "--json", "lasso-fit", *site_csvs, "--alpha", "0.5", "--lambda", "5")
        assert code == 0
        roles = {"x1": "predictor", "x2": "predictor", "x3": "predictor", "y": "response"}
        ds = [io.load_csv(p, roles) for p in site_csvs]
        f = smslasso.fit(ds, 5.0, 0.5)
        np.testing.assert_array_equal(np.array(json.loads(stdout)["B"]), f.B)

    def test_lasso_path(self, site_csvs, capsys):
        code, stdout, _ = run(capsys, "--json", "lasso-path", *site_csvs, "--alpha", "1",
                              "--cv-folds", "4", "--n-lambdas", "8")
        doc = json.loads(stdout)
        assert code == 0 and len(doc["cv_errors"]) == 8 and doc["always_active"][0] == 0

    def test_msparse(self, site_csvs, capsys):
        code, stdout, _ = run(capsys, "--json", "msparse-eigen", *site_csvs, "--m", "2")
        doc = json.loads(stdout)
        assert code == 0 and doc["exhaustive"] and doc["phi_min"] <= doc["phi_max"]

    def test_select_alpha(self, site_csvs, capsys):
        code, stdout, _ = run(capsys, "--json", "select-alpha", *site_csvs, "--splits", "3",
                              "--alpha-grid", "0,0.5,1", "--cv-folds", "4")
        assert code == 0
        doc = json.loads(stdout)
        assert doc["similarity_verdict"] in ("Similar", "Different")

    def test_selected_pool_test(self, site_csvs, capsys):
        code, stdout, _ = run(capsys, "--json", "selected-pool-test", *site_csvs, "--splits", "3",
                              "--alpha-grid", "0,0.5,1", "--cv-folds", "4")
        assert code in (0, 3)
        if code == 0:
            assert "support" in json.loads(stdout)["test"]


class TestSimulate:
    def test_deterministic_outputs(self, tmp_path, capsys):
        for d in ("o1", "o2"):
            code, _, _ = run(capsys, "simulate", "--scenario", "shared-beta", "--seed", "7",
                             "--replicates", "10", "--out-dir", tmp_path / d)
            assert code == 0
        names = sorted(p.name for p in (tmp_path / "o1").iterdir())
        assert names == ["acceptance.svg", "mse.svg", "power.csv"]
        for n in names:
            assert (tmp_path / "o1" / n).read_bytes() == (tmp_path / "o2" / n).read_bytes()

    def test_bad_scenario(self, tmp_path, capsys):
        assert run(capsys, "simulate", "--scenario", "bogus", "--out-dir", tmp_path)[0] == 2
