"""CLI dispatch, output formats, manifests, and byte reproducibility."""

import json
from pathlib import Path

import numpy as np

from sheclt.cli import dispatch
from sheclt.io import load_array, save_array, write_csv


def read_rows(path):
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def out_files(out_dir, prefix, suffix):
    return sorted(p for p in Path(out_dir).iterdir() if p.name.startswith(prefix) and p.name.endswith(suffix))


def tiny_clt_config(tmp_path, **overrides):
    config = {
        "covariance": {"kind": "dirac", "dimension": 1, "mass": 1.0, "params": {}},
        "sigma": {"kind": "constant", "params": [1.0]},
        "g": [{"kind": "identity"}],
        "psi": [{"label": "unit", "boxes": [{"amp": 1.0, "lo": [0.0], "hi": [1.0]}]}],
        "t": 0.25,
        "n_ladder": [4],
        "dx": 0.25,
        "replicas": 300,
        "seed": 7,
        "variance_tolerance": 0.5,
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestIo:
    def test_array_roundtrip(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(3, 8))
        path = tmp_path / "f.bin"
        save_array(path, arr, meta={"t": 1.0})
        back, meta = load_array(path)
        assert np.array_equal(back, arr)
        assert meta == {"t": 1.0}

    def test_csv_formatting(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ("a", "b"), [(1.0 / 3.0, True), (2, "x")])
        header, rows = read_rows(path)
        assert header == ["a", "b"]
        assert rows[0][0] == "%.17g" % (1.0 / 3.0)
        assert rows[0][1] == "true"


class TestDispatch:
    def test_no_arguments_usage(self):
        assert dispatch([]) == 2

    def test_unknown_flag(self):
        assert dispatch(["bounds", "--nope"]) == 2

    def test_bounds_dirac_reference_row(self, tmp_path):
        out = tmp_path / "out"
        code = dispatch(
            ["--out-dir", str(out), "bounds", "--kind", "dirac", "--d", "1",
             "--lambda", "0.5"]
        )
        assert code == 0
        (csv_path,) = out_files(out, "bounds-", ".csv")
        header, rows = read_rows(csv_path)
        ups = [r for r in rows if r[0] == "upsilon"]
        assert float(ups[0][1]) == 0.5
        assert abs(float(ups[0][2]) - 1.0) < 1e-6
        manifests = out_files(out, "manifest-", ".json")
        assert len(manifests) == 1
        record = json.loads(manifests[0].read_text())
        assert record["outputs"] and record["version"]

    def test_noise_check_smoke(self, tmp_path):
        out = tmp_path / "out"
        code = dispatch(
            ["--out-dir", str(out), "--seed", "3", "noise-check", "--kind", "dirac",
             "--slices", "150", "--max-lag", "2", "--dx", "0.25", "--length", "8"]
        )
        assert code == 0
        summary = json.loads(out_files(out, "noise-check-summary", ".json")[0].read_text())
        assert summary["pass"]

    def test_solve_with_dump(self, tmp_path):
        out = tmp_path / "out"
        code = dispatch(
            ["--out-dir", str(out), "--seed", "4", "solve", "--kind", "dirac",
             "--sigma", "linear:1.0", "--t", "0.25", "--dx", "0.25", "--L", "8",
             "--replicas", "60", "--dump-fields"]
        )
        assert code == 0
        (dump,) = out_files(out, "fields-", ".bin")
        arr, meta = load_array(dump)
        assert arr.shape == (60, 32)
        assert meta["sigma"] == "linear:1.0"

    def test_clt_pass_and_exit_codes(self, tmp_path):
        out = tmp_path / "out"
        cfg = tiny_clt_config(tmp_path)
        code = dispatch(["--out-dir", str(out), "--seed", "7", "clt", "--config", str(cfg)])
        assert code == 0
        summary = json.loads(out_files(out, "clt-summary", ".json")[0].read_text())
        assert summary["pass"]
        # absurd tolerance forces an acceptance failure: exit code 1
        cfg_bad = tiny_clt_config(tmp_path, variance_tolerance=1e-9)
        out_bad = tmp_path / "out-bad"
        assert dispatch(["--out-dir", str(out_bad), "--seed", "7", "clt", "--config", str(cfg_bad)]) == 1

    def test_missing_config_is_usage_error(self, tmp_path):
        assert dispatch(["--out-dir", str(tmp_path / "o"), "clt"]) == 2
        assert dispatch(["--out-dir", str(tmp_path / "o"), "clt", "--config", "/nope.json"]) == 2

    def test_byte_identical_reruns_and_worker_counts(self, tmp_path):
        cfg = tiny_clt_config(tmp_path, replicas=150)
        outs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"out-{tag}"
            code = dispatch(
                ["--out-dir", str(out), "--seed", "7", "--workers", workers,
                 "clt", "--config", str(cfg)]
            )
            assert code == 0
            outs.append(out)
        names = [p.name for p in out_files(outs[0], "clt-samples", ".csv")]
        assert names
        for name in names:
            ref = (outs[0] / name).read_bytes()
            assert (outs[1] / name).read_bytes() == ref
            assert (outs[2] / name).read_bytes() == ref

    def test_entropy_sandwich_smoke(self, tmp_path):
        out = tmp_path / "out"
        code = dispatch(
            ["--out-dir", str(out), "--seed", "5", "entropy", "--check", "sandwich",
             "--spaces", "25", "--points", "8"]
        )
        assert code == 0
        summary = json.loads(out_files(out, "entropy-summary", ".json")[0].read_text())
        assert summary["flags"]["sandwich_holds"]

    def test_seed_env_override(self, tmp_path, monkeypatch):
        out1 = tmp_path / "o1"
        out2 = tmp_path / "o2"
        monkeypatch.setenv("SHECLT_SEED", "12345")
        assert dispatch(["--out-dir", str(out1), "solve", "--kind", "dirac",
                         "--t", "0.25", "--dx", "0.25", "--L", "8", "--replicas", "10"]) == 0
        monkeypatch.delenv("SHECLT_SEED")
        assert dispatch(["--out-dir", str(out2), "--seed", "12345", "solve", "--kind", "dirac",
                         "--t", "0.25", "--dx", "0.25", "--L", "8", "--replicas", "10"]) == 0
        (c1,) = out_files(out1, "solve-stats", ".csv")
        (c2,) = out_files(out2, "solve-stats", ".csv")
        assert c1.read_bytes() == c2.read_bytes()


class TestStatisticalSubcommands:
    def test_independence_fdd_tails_smoke(self, tmp_path):
        config = {
            "covariance": {"kind": "dirac", "dimension": 1, "mass": 1.0, "params": {}},
            "sigma": {"kind": "constant", "params": [1.0]},
            "g": [{"kind": "identity"}],
            "psi": [
                {"label": "a", "boxes": [{"amp": 1.0, "lo": [0.0], "hi": [1.0]}]},
                {"label": "b", "boxes": [{"amp": 1.0, "lo": [2.0], "hi": [3.0]}]},
            ],
            "t": 0.25,
            "n_ladder": [4, 8],
            "dx": 0.25,
            "replicas": 200,
            "seed": 7,
            "n_perm": 40,
        }
        cfg = tmp_path / "ind.json"
        cfg.write_text(json.dumps(config))
        out = tmp_path / "out-ind"
        code = dispatch(["--out-dir", str(out), "--seed", "7", "independence", "--config", str(cfg)])
        assert code == 0
        header, rows = read_rows(out_files(out, "independence-", ".csv")[0])
        assert header == ["N", "pair", "max_ecf_gap", "null_q99", "rhs_bound"]
        assert any(r[1] == "a~b" for r in rows)

        fdd_config = dict(config)
        fdd_config["psi"] = [{"label": "u", "boxes": [{"amp": 1.0, "lo": [0.0], "hi": [1.0]}]}]
        fdd_config["r_grid"] = [0.5, 1.0]
        fdd_config["covariance_tolerance"] = 0.9
        cfg2 = tmp_path / "fdd.json"
        cfg2.write_text(json.dumps(fdd_config))
        out2 = tmp_path / "out-fdd"
        assert dispatch(["--out-dir", str(out2), "--seed", "7", "fdd", "--config", str(cfg2)]) == 0

        tails_config = dict(fdd_config)
        tails_config["ell_points"] = 12
        cfg3 = tmp_path / "tails.json"
        cfg3.write_text(json.dumps(tails_config))
        out3 = tmp_path / "out-tails"
        assert dispatch(["--out-dir", str(out3), "--seed", "7", "tails", "--config", str(cfg3)]) == 0
        summary = json.loads(out_files(out3, "tails-summary", ".json")[0].read_text())
        assert summary["flags"]["no_violations"]
