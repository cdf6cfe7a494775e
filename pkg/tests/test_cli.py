import json
import os

import numpy as np
import pytest

from kolmo.cli import run


@pytest.fixture
def heat_op(tmp_path):
    path = tmp_path / "heat.json"
    path.write_text(json.dumps({
        "format_version": 1, "theta": 0, "block_dims": [1],
        "B": [[0.0]],
    }))
    return str(path)


@pytest.fixture
def bad_op(tmp_path):
    # valid shape but uncoupled second block: not hypoelliptic; rank
    # enforcement rejects it, which counts as a bad input
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "format_version": 1, "theta": 0, "block_dims": [2],
        "B": [[0.0, 0.0], [0.0, 0.0]],
    }))
    return str(path)


@pytest.fixture
def cyl_domain(tmp_path):
    path = tmp_path / "cyl.json"
    path.write_text(json.dumps({
        "format_version": 1,
        "root": {"op": "cylinder", "x0": [0.0], "t0": 0.0, "r": 0.25, "T": 1.0},
    }))
    return str(path)


def outdir(tmp_path, name):
    d = tmp_path / name
    d.mkdir()
    return str(d)


class TestCheck:
    def test_heat_operator_passes(self, tmp_path, heat_op, capsys):
        code = run(["--out-dir", outdir(tmp_path, "o"), "check", heat_op])
        assert code == 0
        assert "hypoelliptic" in capsys.readouterr().out
        cert = json.loads((tmp_path / "o" / "certificate.json").read_text())
        assert cert["certificate"]["verdict"] is True

    def test_non_hypoelliptic_is_still_success(self, tmp_path, capsys):
        op = tmp_path / "uncoupled.json"
        op.write_text(json.dumps({
            "format_version": 1, "theta": 0, "block_dims": [2],
            "B": [[0.0, 0.0], [0.0, 0.0]],
        }))
        code = run(["--out-dir", outdir(tmp_path, "o"), "check", str(op)])
        assert code == 0  # a false verdict is a successful run
        cert = json.loads((tmp_path / "o" / "certificate.json").read_text())
        assert cert["certificate"]["verdict"] is True  # heat in 2D is fine

    def test_rank_deficient_input_fails(self, tmp_path):
        op = tmp_path / "deficient.json"
        op.write_text(json.dumps({
            "format_version": 1, "theta": 0, "block_dims": [1, 1],
            "B": [[0.0, 0.0], [0.0, 0.0]],
        }))
        code = run(["--out-dir", outdir(tmp_path, "o"), "check", str(op)])
        assert code == 1

    def test_unknown_format_version_rejected(self, tmp_path):
        op = tmp_path / "v9.json"
        op.write_text(json.dumps({
            "format_version": 9, "theta": 0, "block_dims": [1], "B": [[0.0]],
        }))
        assert run(["--out-dir", outdir(tmp_path, "o"), "check", str(op)]) == 1

    def test_missing_file(self, tmp_path):
        assert run(["--out-dir", outdir(tmp_path, "o"), "check", "nope.json"]) == 1


class TestKernelCommand:
    def test_appends_log_gamma_column(self, tmp_path, heat_op):
        pts = tmp_path / "pts.csv"
        pts.write_text("x1,t,xi1,tau\n0.0,1.0,0.0,0.0\n0.5,2.0,0.0,1.0\n")
        out = outdir(tmp_path, "o")
        code = run(["--out-dir", out, "kernel", heat_op, "--points", str(pts)])
        assert code == 0
        rows = (tmp_path / "o" / "kernel_values.csv").read_text().splitlines()
        assert rows[0].endswith("log_gamma")
        lg = float(rows[1].split(",")[-1])
        assert lg == pytest.approx(-0.5 * np.log(4 * np.pi))


class TestSolveAndFD:
    def test_solve_writes_estimates(self, tmp_path, heat_op):
        dom = tmp_path / "slab.json"
        dom.write_text(json.dumps({
            "format_version": 1,
            "root": {"op": "box", "lo": [0.0, 0.0], "hi": [1.0, 2.0]},
        }))
        pts = tmp_path / "pts.csv"
        pts.write_text("x1,t\n0.5,1.0\n0.25,0.5\n")
        out = outdir(tmp_path, "o")
        code = run([
            "--out-dir", out, "solve", "--op", heat_op, "--domain", str(dom),
            "--data", "indicator:x1>=1", "--points", str(pts),
            "--n-samples", "400", "--dt", "0.002", "--seed", "5",
        ])
        assert code == 0
        rows = (tmp_path / "o" / "solution.csv").read_text().splitlines()
        assert len(rows) == 3
        val = float(rows[1].split(",")[2])
        assert 0.0 <= val <= 1.0

    def test_fd_writes_grid(self, tmp_path, heat_op):
        out = outdir(tmp_path, "o")
        code = run([
            "--out-dir", out, "fd", "--op", heat_op, "--box", "0,1",
            "--t0", "0", "--t1", "0.1", "--data", "constant:2.0",
            "--nodes", "21",
        ])
        assert code == 0
        rows = (tmp_path / "o" / "grid_values.csv").read_text().splitlines()
        assert all(float(r.split(",")[2]) == 2.0 for r in rows[1:])


class TestRegularityCommands:
    def test_classify_bottom_center(self, tmp_path, heat_op, cyl_domain, capsys):
        out = outdir(tmp_path, "o")
        code = run([
            "--out-dir", out, "classify", "--op", heat_op, "--domain", cyl_domain,
            "--point", "bottom-center", "--seed", "7", "--n-samples", "800",
            "--n-max", "12",
        ])
        assert code == 0
        assert "verdict: Regular" in capsys.readouterr().out
        report = json.loads((tmp_path / "o" / "classify_report.json").read_text())
        assert report["report"]["verdict"] == "Regular"

    def test_classify_deterministic_byte_identical(self, tmp_path, heat_op, cyl_domain):
        out1, out2 = outdir(tmp_path, "a"), outdir(tmp_path, "b")
        argv = ["classify", "--op", heat_op, "--domain", cyl_domain,
                "--point", "bottom-center", "--seed", "7",
                "--n-samples", "500", "--n-max", "8"]
        assert run(["--out-dir", out1] + argv) == 0
        assert run(["--out-dir", out2] + argv) == 0
        for name in ("classify_report.json", "classify_partial_sums.csv",
                     "classify_summary.txt"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b

    def test_wiener_manifest_replay(self, tmp_path, heat_op, cyl_domain):
        out1 = outdir(tmp_path, "a")
        argv = ["--out-dir", out1, "wiener", "--op", heat_op, "--domain",
                cyl_domain, "--point", "bottom-center", "--seed", "3",
                "--n-samples", "400", "--n-max", "8"]
        assert run(argv) == 0
        out2 = outdir(tmp_path, "b")
        assert run(["--out-dir", out2,
                    "--replay-manifest", os.path.join(out1, "wiener_manifest.json")]) == 0
        for name in ("wiener_report.json", "wiener_partial_sums.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_cone_found(self, tmp_path, heat_op, capsys):
        dom = tmp_path / "upper.json"
        dom.write_text(json.dumps({
            "format_version": 1,
            "root": {"op": "intersection", "parts": [
                {"op": "ball", "center": [0.0, 0.0], "radius": 1.0},
                {"op": "halfspace", "time": 0.0, "side": "future"},
            ]},
        }))
        out = outdir(tmp_path, "o")
        code = run(["--out-dir", out, "cone", "--op", heat_op, "--domain",
                    str(dom), "--point", "0,0", "--seed", "2",
                    "--n-samples", "200"])
        assert code == 0
        report = json.loads((tmp_path / "o" / "cone_report.json").read_text())
        assert report["found"] is True
