import filecmp
import json
import os

import numpy as np
import pytest

from fdslab.cli import main


@pytest.fixture
def ckpt(quick_field, tmp_path):
    path = tmp_path / "ckpt.json"
    quick_field.save(path)
    return str(path)


def _run(*argv):
    return main(list(argv))


class TestTrain:
    def test_deterministic_checkpoints(self, tmp_path):
        for name in ("a", "b"):
            rc = _run("train", "--target", "single:1,-1", "--steps", "100",
                      "--seed", "1", "--out", str(tmp_path / name))
            assert rc == 0
        assert filecmp.cmp(tmp_path / "a" / "checkpoint.json",
                           tmp_path / "b" / "checkpoint.json", shallow=False)
        assert filecmp.cmp(tmp_path / "a" / "curve.csv",
                           tmp_path / "b" / "curve.csv", shallow=False)

    def test_missing_output_dir(self, tmp_path):
        out = tmp_path / "no" / "such" / "dir"
        rc = _run("train", "--target", "single:0,0", "--steps", "10",
                  "--out", str(out))
        assert rc == 2
        assert not out.exists()


class TestSample:
    def test_disabled_fds_matches_baseline(self, ckpt, tmp_path):
        common = ["sample", "--checkpoint", ckpt, "--steps", "10", "--n", "32",
                  "--seed", "4", "--fds.sigma-max", "0.3", "--fds.t-trunc", "1.0",
                  "--fds.sigma-kind", "constant"]
        assert _run(*common, "--fds.m", "0", "--out", str(tmp_path / "m0")) == 0
        assert _run(*common, "--fds.m", "0", "--fds.n", "0",
                    "--out", str(tmp_path / "off")) == 0
        assert filecmp.cmp(tmp_path / "m0" / "final.csv",
                           tmp_path / "off" / "final.csv", shallow=False)

    def test_paired_shares_prior(self, ckpt, tmp_path):
        rc = _run("sample", "--preset", "toy", "--checkpoint", ckpt, "--paired",
                  "--n", "32", "--seed", "2", "--out", str(tmp_path / "p"))
        assert rc == 0
        base = np.loadtxt(tmp_path / "p" / "baseline_states.csv", delimiter=",",
                          skiprows=1, usecols=(4, 5),
                          max_rows=64)  # step 0 pre+post rows for 32 samples
        fds = np.loadtxt(tmp_path / "p" / "fds_states.csv", delimiter=",",
                         skiprows=1, usecols=(4, 5), max_rows=64)
        np.testing.assert_array_equal(base[::2], fds[::2])  # "pre" rows
        assert (tmp_path / "p" / "wd.csv").exists()

    def test_rerun_byte_identical(self, ckpt, tmp_path):
        for name in ("r1", "r2"):
            assert _run("sample", "--preset", "toy", "--checkpoint", ckpt,
                        "--n", "16", "--seed", "5",
                        "--out", str(tmp_path / name)) == 0
        for fname in ("final.csv", "states.csv", "divergence.csv", "run.json",
                      "config.json"):
            assert filecmp.cmp(tmp_path / "r1" / fname, tmp_path / "r2" / fname,
                               shallow=False), fname

    def test_requires_field_source(self, tmp_path):
        rc = _run("sample", "--steps", "5", "--n", "8", "--out", str(tmp_path / "x"))
        assert rc == 2


class TestVerifyTheorem:
    def test_passes_on_checkerboard(self, tmp_path):
        rc = _run("verify-theorem", "--k", "64", "--points", "50",
                  "--out", str(tmp_path / "v"))
        assert rc == 0
        summary = json.loads((tmp_path / "v" / "summary.json").read_text())
        assert summary["passed"] and summary["max_rel_error"] < 1e-6

    def test_single_point_all_zero(self, tmp_path):
        rc = _run("verify-theorem", "--target", "single:0.5,0.5", "--k", "1",
                  "--points", "20", "--out", str(tmp_path / "v"))
        assert rc == 0
        rows = np.loadtxt(tmp_path / "v" / "report.csv", delimiter=",", skiprows=1)
        lhs, rhs = rows[:, 3], rows[:, 4]
        np.testing.assert_allclose(lhs, 0.0, atol=1e-20)
        np.testing.assert_allclose(rhs, 0.0, atol=1e-20)

    def test_refuses_t_zero(self, tmp_path, capsys):
        rc = _run("verify-theorem", "--k", "8", "--t-grid", "0,0.5",
                  "--out", str(tmp_path / "v"))
        assert rc == 2
        assert "domain" in capsys.readouterr().err.lower()


class TestMap:
    def test_oracle_self_correlation(self, tmp_path):
        rc = _run("map", "--k", "512", "--grid.res", "16", "--t", "0.6",
                  "--out", str(tmp_path / "m"))
        assert rc == 0
        corr = json.loads((tmp_path / "m" / "correlation.json").read_text())
        assert corr["spearman"] == pytest.approx(1.0, abs=1e-8)
        header = (tmp_path / "m" / "gt.csv").read_text().splitlines()[0]
        assert "lo=-2" in header and "resolution=16" in header and "t=0.59999" in header

    def test_min_spearman_gate(self, tmp_path):
        rc = _run("map", "--k", "512", "--grid.res", "8", "--min-spearman", "1.1",
                  "--out", str(tmp_path / "m"))
        assert rc == 4


class TestAblate:
    def test_nfe_column_matches_formula(self, ckpt, tmp_path):
        rc = _run("ablate", "--checkpoint", ckpt, "--axis", "n", "--values", "1,2",
                  "--steps", "10", "--n", "16", "--seeds", "2",
                  "--fds.m", "1", "--fds.sigma-kind", "constant",
                  "--fds.sigma-max", "0.3", "--fds.t-trunc", "1.0",
                  "--out", str(tmp_path / "a"))
        assert rc == 0
        rows = np.loadtxt(tmp_path / "a" / "sweep.csv", delimiter=",", skiprows=1,
                          usecols=(1, 2, 3))
        # NFE = steps + steps * N * (M+1) * d
        assert rows[0, 2] == 10 + 10 * 1 * 2 * 2
        assert rows[1, 2] == 10 + 10 * 2 * 2 * 2

    def test_t_trunc_zero_equals_baseline(self, ckpt, tmp_path):
        rc = _run("ablate", "--checkpoint", ckpt, "--axis", "t_trunc",
                  "--values", "0", "--steps", "10", "--n", "16", "--seeds", "1",
                  "--fds.m", "1", "--fds.sigma-kind", "constant",
                  "--fds.sigma-max", "0.3", "--out", str(tmp_path / "a"))
        assert rc == 0
        rows = np.loadtxt(tmp_path / "a" / "sweep.csv", delimiter=",", skiprows=1,
                          usecols=(1, 3), ndmin=2)
        assert rows[0, 1] == 10  # no refinement evaluations at all

    def test_bad_axis(self, ckpt, tmp_path):
        rc = _run("ablate", "--checkpoint", ckpt, "--axis", "m",
                  "--values", "a,b", "--out", str(tmp_path / "a"))
        assert rc == 2


class TestConfigResolution:
    def test_file_then_flag_precedence(self, ckpt, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("sigma.max=0.1\nfds.m=2\nt_trunc=0.7\n")
        out = tmp_path / "o"
        rc = _run("sample", "--config", str(cfg), "--checkpoint", ckpt,
                  "--fds.m", "1", "--steps", "5", "--n", "8", "--out", str(out))
        assert rc == 0
        snap = json.loads((out / "config.json").read_text())
        assert snap["fds.m"] == 1            # flag beats file
        assert snap["fds.sigma-max"] == 0.1  # file beats default (alias key)
        assert snap["fds.t-trunc"] == 0.7

    def test_unknown_key_rejected(self, ckpt, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("warp=9\n")
        rc = _run("sample", "--config", str(cfg), "--checkpoint", ckpt,
                  "--out", str(tmp_path / "o"))
        assert rc == 2

    def test_output_root_env(self, ckpt, tmp_path, monkeypatch):
        monkeypatch.setenv("FDSLAB_OUTPUT_ROOT", str(tmp_path / "root"))
        monkeypatch.chdir(tmp_path)
        (tmp_path / "root").mkdir()
        rc = _run("sample", "--preset", "toy", "--checkpoint", ckpt,
                  "--n", "8", "--steps", "5")
        assert rc == 0
        assert (tmp_path / "root" / "sample" / "final.csv").exists()
