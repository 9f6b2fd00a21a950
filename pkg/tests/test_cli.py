import json

import numpy as np
import pytest

from hdlearn import cli
from hdlearn.meanfield import fit_slope
from hdlearn.records import read_csv, write_csv


@pytest.fixture
def outroot(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "runs"))
    return tmp_path


def write_config(path, cfg):
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


class TestRegistry:
    def test_at_least_nine_kinds_with_anchors(self):
        lines = cli.list_experiments()
        assert len(lines) >= 9
        for kind in ("deep_bsde", "policy_control", "heatmap", "rate_study", "rademacher",
                     "mc_rate", "runge", "msa_compare", "regularized"):
            assert kind in cli.REGISTRY and cli.REGISTRY[kind].anchor

    def test_listing_stable(self, capsys):
        cli.main(["list"])
        first = capsys.readouterr().out
        cli.main(["list"])
        assert capsys.readouterr().out == first


class TestValidation:
    def test_missing_field_named(self, outroot, capsys):
        cfg = write_config(outroot / "c.json", {"kind": "runge", "seeds": [0], "params": {}})
        assert cli.main(["run", cfg]) == 2
        assert "params.degrees" in capsys.readouterr().err

    def test_unknown_kind(self, outroot, capsys):
        cfg = write_config(outroot / "c.json", {"kind": "nope", "seeds": [0]})
        assert cli.main(["run", cfg]) == 2
        assert "kind" in capsys.readouterr().err

    def test_empty_seeds(self):
        with pytest.raises(cli.ConfigError) as exc:
            cli.validate({"kind": "runge", "seeds": [], "params": {"degrees": [4]}})
        assert exc.value.field == "seeds"

    def test_wrong_type_and_unknown_param(self):
        with pytest.raises(cli.ConfigError) as exc:
            cli.validate({"kind": "rademacher", "seeds": [0], "params": {"d": "3", "n": 4, "Q": 1}})
        assert exc.value.field == "params.d"
        with pytest.raises(cli.ConfigError) as exc:
            cli.validate({"kind": "runge", "seeds": [0], "params": {"degrees": [4], "colour": 1}})
        assert exc.value.field == "params.colour"

    def test_unparseable_json(self, outroot):
        bad = outroot / "bad.json"
        bad.write_text("{kind:", encoding="utf-8")
        assert cli.main(["run", str(bad)]) == 2


class TestHash:
    def test_key_order_irrelevant(self):
        a = {"kind": "runge", "seeds": [0, 1], "params": {"degrees": [2, 4]}}
        b = {"params": {"degrees": [2, 4]}, "seeds": [0, 1], "kind": "runge"}
        assert cli.config_hash(a) == cli.config_hash(b)

    def test_semantic_change_changes_hash(self):
        a = {"kind": "runge", "seeds": [0], "params": {"degrees": [2, 4]}}
        b = {"kind": "runge", "seeds": [0], "params": {"degrees": [2, 6]}}
        c = dict(a, output_dir="elsewhere")
        assert cli.config_hash(a) != cli.config_hash(b)
        assert cli.config_hash(a) == cli.config_hash(c)


class TestRun:
    def test_runge_rows_per_degree(self, outroot):
        code, written = cli.run_config({"kind": "runge", "seeds": [0], "params": {"degrees": [4, 10, 20]}})
        assert code == 0
        rows = read_csv([p for p in written if p.suffix == ".csv"][0])
        assert [int(r["degree"]) for r in rows] == [4, 10, 20]

    def test_rerun_byte_identical(self, outroot):
        cfg = {"kind": "rademacher", "seeds": [3], "params": {"d": 4, "n": 20, "Q": 2.0, "trials": 10}}
        _, first = cli.run_config(cfg)
        body = {p.name: p.read_bytes() for p in first if p.suffix == ".csv"}
        _, second = cli.run_config(cfg)
        assert {p.name: p.read_bytes() for p in second if p.suffix == ".csv"} == body

    def test_seed_suffixed_outputs_and_manifest(self, outroot):
        cfg = {"kind": "mc_rate", "seeds": [0, 1], "params": {"m_ladder": [10, 40, 160], "replications": 200}}
        code, written = cli.run_config(cfg)
        names = sorted(p.name for p in written)
        assert names == ["manifest_seed0.json", "manifest_seed1.json",
                         "mc_rate_rate_seed0.csv", "mc_rate_rate_seed1.csv"]
        man = json.loads([p for p in written if p.name == "manifest_seed1.json"][0].read_text())
        assert man["seed"] == 1 and man["config_hash"] == cli.config_hash(cfg)
        assert set(man["versions"]) >= {"hdlearn", "numpy", "scipy"}

    def test_divergence_exit_three_keeps_outputs(self, outroot):
        cfg = write_config(outroot / "c.json", {"kind": "regularized", "seeds": [0], "params":
                                                {"d": 2, "n": 10, "m": 4, "lam": 0.0, "steps": 50,
                                                 "lr": 1e100, "optimizer": "sgd"}})
        assert cli.main(["run", cfg]) == 3
        assert list((outroot / "runs").rglob("regularized_summary_seed0.csv"))

    def test_deep_bsde_two_seeds(self, outroot):
        cfg = {"kind": "deep_bsde", "seeds": [0, 1],
               "params": {"problem": "hjb_lqg", "d": 100, "lam": 1.0, "iters": 60, "oracle_samples": 10**5}}
        code, written = cli.run_config(cfg)
        assert code == 0
        assert sum(p.name.startswith("manifest") for p in written) == 2
        summaries = [read_csv(p)[0] for p in written if "summary" in p.name]
        y0 = [float(s["y0"]) for s in summaries]
        assert abs(y0[0] - y0[1]) / abs(np.mean(y0)) <= 0.01
        assert all(abs(float(s["rel_err"])) <= 0.01 for s in summaries)


class TestPlotData:
    def test_heatmap_long_format(self, tmp_path):
        rows = [{"m": m, "n": 8, "scaled": 1, "seed": s, "test_error": float(m + s)}
                for m in (2, 4) for s in range(3)]
        f = write_csv(tmp_path / "h.csv", ["m", "n", "scaled", "seed", "test_error"], rows)
        cols, out = cli.plot_heatmap([f])
        assert cols == ["m", "n", "scaled", "error"]
        assert [(r["m"], r["error"]) for r in out] == [(2, 3.0), (4, 5.0)]

    def test_lambda_sweep(self, tmp_path):
        files = []
        for lam, y0 in ((10.0, 4.4), (1.0, 4.6)):
            files.append(write_csv(tmp_path / f"s{lam}.csv", ["lam", "y0", "oracle"], [[lam, y0, 4.5]]))
        cols, out = cli.plot_lambda_sweep(files)
        assert cols == ["lam", "y0", "oracle", "rel_err"]
        assert [r["lam"] for r in out] == [1.0, 10.0]
        assert out[0]["rel_err"] == pytest.approx(0.1 / 4.5)

    def test_rate_slope_matches_least_squares(self, tmp_path):
        m = np.array([16, 64, 256, 1024])
        err = 3.0 * m**-0.5 * np.array([1.1, 0.9, 1.05, 0.97])
        f = write_csv(tmp_path / "r.csv", ["m", "mean_error"], list(zip(m.tolist(), err.tolist())))
        _, out = cli.plot_rate([f])
        slope = np.polyfit(np.log(m), np.log(err), 1)[0]
        assert out[0]["slope"] == pytest.approx(slope, rel=1e-12)
        assert out[0]["slope"] == pytest.approx(fit_slope(m, err), rel=1e-12)

    def test_schema_mismatch_exit_two(self, tmp_path):
        f = write_csv(tmp_path / "x.csv", ["a"], [[1]])
        assert cli.main(["plotdata", "heatmap", str(f)]) == 2
