import json

import numpy as np
import pytest

from artifact.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def s3(tmp_path):
    path = tmp_path / "s3.json"
    assert run("construct", "--space", "S", "--n", 3, "--q", 4, "--seed", 5, "--out", path) == 0
    return path


def test_construct_families(tmp_path):
    for fam, extra in (("cluster", ["--n", 3, "--q", 4]), ("ball", ["--n", 3]), ("gaussian-y", []),
                       ("parallel-lines", []), ("lattice", []), ("hex", [])):
        out = tmp_path / f"{fam}.json"
        assert run("construct", "--family", fam, *extra, "--out", out) == 0
        assert json.loads(out.read_text())["cells"]


def test_construct_with_mobius(tmp_path):
    mm = tmp_path / "m.json"
    mm.write_text(json.dumps({"moves": [{"stereoAffine": {"t": [0.2, -0.1], "s": 1.5}}]}))
    out = tmp_path / "p.json"
    assert run("construct", "--space", "R", "--n", 2, "--q", 3, "--mobius", mm, "--out", out) == 0
    assert "kS" in json.loads(out.read_text())["cells"][0]


def test_verify_and_flatness(s3, tmp_path, capsys):
    out = tmp_path / "v.json"
    assert run("verify", s3, "--samples", 8, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["pass"] and rep["seed"] == 0
    assert set(rep["reports"]) == {"stationarity", "three_tensor", "conformal_bc", "LJac_potential", "RicV"}
    assert run("flatness", s3) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "feasible"


def test_verify_two_cells_skips_three_tensor(tmp_path):
    p = tmp_path / "q2.json"
    run("construct", "--space", "H", "--n", 3, "--q", 2, "--out", p)
    out = tmp_path / "v.json"
    assert run("verify", p, "--out", out) == 0
    assert "three_tensor" not in json.loads(out.read_text())["reports"]


def test_flatness_infeasible_exit_code(s3, tmp_path):
    data = json.loads(s3.read_text())
    data["cells"][0]["k"] += 0.05
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    out = tmp_path / "f.json"
    assert run("flatness", bad, "--out", out) == 2
    assert json.loads(out.read_text())["certificate"]["residual"] > 1e-3
    assert run("verify", bad, "--out", tmp_path / "v.json") == 2


def test_hyperbolic_flatness_reports_class(tmp_path, capsys):
    p = tmp_path / "c.json"
    run("construct", "--family", "cluster", "--n", 3, "--q", 4, "--out", p)
    capsys.readouterr()
    assert run("flatness", p) == 0
    assert json.loads(capsys.readouterr().out)["hypoEpi"]["classification"] == "Epi"


def test_stability_and_volumes(tmp_path, capsys):
    y = tmp_path / "y.json"
    run("construct", "--family", "gaussian-y", "--out", y)
    out = tmp_path / "s.json"
    assert run("stability", y, "--cells-per-edge", 60, "--trials", 5, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["complex"] == {"edges": 3, "junctions": 1, "cells": 180}
    assert rep["delta1_vol_max"] < 1e-12
    assert run("stability", y, "--cells-per-edge", 60, "--jacobi-override", 2.0, "--out", out) == 2
    capsys.readouterr()
    assert run("volumes", y, "--samples", 20000) == 0
    vols = json.loads(capsys.readouterr().out)["volumes"]["values"]
    assert np.allclose(vols, 1 / 3, atol=0.02)


def test_render_outputs(tmp_path):
    p = tmp_path / "r.json"
    run("construct", "--space", "H", "--n", 2, "--q", 3, "--seed", 1, "--out", p)
    svg, csv = tmp_path / "a.svg", tmp_path / "a.csv"
    assert run("render", p, "--svg", svg, "--csv", csv, "--samples", 256) == 0
    assert svg.read_text().startswith("<svg") or "<svg" in svg.read_text()
    lines = csv.read_text().splitlines()
    assert lines[0] == "i,j,piece,x,y" and len(lines) > 10
    xy = np.array([[float(v) for v in l.split(",")[3:]] for l in lines[1:]])
    assert np.all(np.hypot(*xy.T) <= 1 + 1e-9)          # inside the Poincare disc


def test_render_plane_for_n3(tmp_path):
    p = tmp_path / "r3.json"
    run("construct", "--space", "R", "--n", 3, "--q", 4, "--out", p)
    assert run("render", p, "--svg", tmp_path / "b.svg", "--csv", tmp_path / "b.csv",
               "--plane", "0,0,1,0", "--samples", 256) == 0


@pytest.mark.parametrize("argv", [
    ("construct", "--space", "S", "--n", 2, "--q", 7),
    ("construct", "--space", "G", "--n", 2, "--q", 3),
])
def test_usage_errors(argv, capsys):
    assert run(*argv) == 1
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["error"] == "UsageError" and diag["field"] in ("q", "space")


def test_bad_json_diagnostic(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"space": {"kind": "S", "n": 2}, "cells": [')
    assert run("flatness", bad) == 1
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "line 1" in diag["message"] and diag["field"] == "partition"


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        run("construct", "--seed", -1)


@pytest.mark.parametrize("cmd", ["construct", "verify", "stability", "render"])
def test_determinism(cmd, tmp_path, s3):
    y = tmp_path / "y.json"
    run("construct", "--family", "gaussian-y", "--out", y)
    blobs = []
    for r in range(2):
        out = tmp_path / f"{cmd}{r}"
        if cmd == "construct":
            args = ("construct", "--space", "H", "--n", 3, "--q", 5, "--seed", 0x1234_5678_9abc, "--out", out)
        elif cmd == "verify":
            args = ("verify", s3, "--samples", 8, "--seed", 77, "--out", out)
        elif cmd == "stability":
            args = ("stability", y, "--cells-per-edge", 40, "--trials", 4, "--seed", 9, "--out", out)
        else:
            args = ("render", s3, "--svg", out, "--csv", str(out) + ".csv", "--plane", "1,0,0,0.1",
                    "--samples", 256)
        run(*args)
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1] and blobs[0]
