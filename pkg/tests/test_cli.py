import json

import numpy as np
import pytest

from barrierkit.cli import main, parse_bbox, parse_grid, UsageError


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_tangency_academic_face2(capsys):
    code, out, _ = _run(["tangency", "--fixture", "academic", "--face", "2"], capsys)
    assert code == 0
    zs = sorted(tuple(np.round(p["z"], 6)) for p in json.loads(out)["tangency_points"])
    assert zs == [(3.0, -1.0), (3.0, 1.0)]


def test_tangency_linear_spring(capsys):
    code, out, _ = _run(["tangency", "--fixture", "linear_spring"], capsys)
    (tp,) = json.loads(out)["tangency_points"]
    assert code == 0 and np.allclose(tp["z"], [1, 0], atol=1e-8)


def test_tangency_empty_exit_3(capsys):
    code, _, err = _run(["tangency", "--fixture", "linear_spring", "--bbox", "0:2,1:2"], capsys)
    assert code == 3 and "no tangency" in err


def test_tangency_writes_manifest(tmp_path, capsys):
    code, _, _ = _run(["tangency", "--fixture", "academic", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "tangency.json").is_file() and (tmp_path / "manifest.json").is_file()


def test_malformed_toml_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[system\nn = 2\n")
    code, _, err = _run(["tangency", "--config", str(cfg)], capsys)
    assert code == 2 and "error" in err


def test_config_file_matches_fixture(tmp_path, capsys):
    from barrierkit.fixtures import academic
    cfg = tmp_path / "academic.toml"
    cfg.write_text(academic().config_text)
    code, out, _ = _run(["tangency", "--config", str(cfg), "--bbox=-2:4,-4:4"], capsys)
    zs = sorted(tuple(np.round(p["z"], 6)) for p in json.loads(out)["tangency_points"])
    assert code == 0 and zs == [(-1.0, -1.0), (-1.0, 1.0), (3.0, -1.0), (3.0, 1.0)]


def test_usage_errors(capsys):
    assert main(["tangency", "--fixture", "academic", "--face", "7"]) == 2
    assert main(["tangency", "--fixture", "nope"]) == 2
    assert main(["classify", "--fixture", "academic"]) == 2
    assert main(["tangency", "--fixture", "academic", "--set", "bogus"]) == 2
    with pytest.raises(UsageError):
        parse_bbox("1:0")
    with pytest.raises(UsageError):
        parse_grid("0:1")
    assert parse_grid("-1:3:4,0:1:2") == (((-1.0, 3.0), (0.0, 1.0)), (4, 2))


@pytest.fixture(scope="module")
def academic_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("academic")
    assert main(["barrier", "--fixture", "academic", "--out", str(out)]) == 0
    return out


def test_barrier_outputs(academic_out):
    names = {p.name for p in academic_out.iterdir()}
    assert {"arc_0.csv", "arc_3.csv", "boundary.json", "barrier.dat", "barrier.svg",
            "manifest.json"} <= names
    doc = json.loads((academic_out / "boundary.json").read_text())
    assert len(doc["arcs"]) == 4
    assert any(abs(c["x_1"] - 7 / 3) < 1e-6 and abs(c["x_2"]) < 1e-6 for c in doc["corners"])
    man = json.loads((academic_out / "manifest.json").read_text())
    assert set(man) >= {"command", "config_hash", "options", "tool_version", "seed"}
    assert set(man["outputs"]) == names - {"manifest.json"}


def test_barrier_rerun_is_byte_identical(academic_out, tmp_path):
    assert main(["barrier", "--fixture", "academic", "--out", str(tmp_path)]) == 0
    for p in academic_out.iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_barrier_format_filter(tmp_path):
    assert main(["barrier", "--fixture", "linear_spring", "--format", "json", "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"boundary.json", "manifest.json"}


def test_barrier_rkf45_matches_rk4(tmp_path):
    a, b = tmp_path / "rk4", tmp_path / "rkf45"
    assert main(["barrier", "--fixture", "linear_spring", "--format", "json", "--out", str(a)]) == 0
    assert main(["barrier", "--fixture", "linear_spring", "--format", "json", "--scheme", "rkf45",
                 "--out", str(b)]) == 0
    da, db = (json.loads((d / "boundary.json").read_text())["arcs"][0] for d in (a, b))
    assert abs(da["switch_times"][0] - db["switch_times"][0]) <= 1e-6
    assert abs(da["t"][-1] - db["t"][-1]) <= 1e-6
    end_a = np.array([da["x_1"][-1], da["x_2"][-1]])
    end_b = np.array([db["x_1"][-1], db["x_2"][-1]])
    assert np.max(np.abs(end_a - end_b)) <= 1e-6


def test_classify_point(capsys, tmp_path):
    code, out, _ = _run(["classify", "--fixture", "academic", "--point", "0,0"], capsys)
    assert code == 0 and json.loads(out)["label"] == "Admissible"
    code, out, err = _run(["classify", "--fixture", "academic", "--point", "10,0"], capsys)
    assert code == 0 and json.loads(out)["label"] == "Inadmissible" and "warning" in err
    code, _, _ = _run(["classify", "--fixture", "academic", "--point", "0,0", "--out",
                       str(tmp_path)], capsys)
    assert (tmp_path / "verdict.json").is_file() and (tmp_path / "manifest.json").is_file()


def test_classify_grid_disconnected(capsys, tmp_path):
    code, out, _ = _run(["classify", "--fixture", "academic_disconnected", "--grid=2.5:3:12,-3:3:40", "--signals", "60", "--out", str(tmp_path)], capsys)
    assert code == 0 and "components (4-connected): 2" in out
    pgm = (tmp_path / "grid.pgm").read_text().split("\n")
    assert pgm[:3] == ["P2", "12 40", "255"]


def test_classify_ladder(capsys, tmp_path):
    code, out, _ = _run(["classify", "--fixture", "academic", "--grid=-1:3:8,-3:3:8",
                         "--ladder", "5,10,20", "--signals", "30", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.count("T=") == 3


def test_verify_academic(academic_out, capsys):
    code, out, _ = _run(["verify", "--fixture", "academic", "--out", str(academic_out)], capsys)
    assert code == 0 and "outward violations: 0" in out
    doc = json.loads((academic_out / "verify.json").read_text())
    assert doc["agreement"]["value"] >= 0.95


def test_verify_flipped_costate(academic_out, tmp_path, capsys):
    doc = json.loads((academic_out / "boundary.json").read_text())
    for arc in doc["arcs"]:
        for k in ("lambda_1", "lambda_2"):
            arc[k] = [-v for v in arc[k]]
    bad = tmp_path / "flipped.json"
    bad.write_text(json.dumps(doc))
    code, out, _ = _run(["verify", "--fixture", "academic", "--boundary", str(bad),
                         "--out", str(tmp_path)], capsys)
    assert code == 5
    assert json.loads((tmp_path / "verify.json").read_text())["semipermeability"]["outward_violations"] > 0


def test_verify_strict_threshold_on_coarse_grid(academic_out, tmp_path, capsys):
    code, out, _ = _run(["verify", "--fixture", "academic", "--boundary",
                         str(academic_out / "boundary.json"), "--grid=-1:3:12,-3:3:13",
                         "--threshold", "1.0", "--out", str(tmp_path)], capsys)
    assert code == 5 and "outward violations: 0" in out


def test_verify_missing_boundary(tmp_path, capsys):
    code, _, err = _run(["verify", "--fixture", "academic", "--out", str(tmp_path / "none")], capsys)
    assert code == 2 and "missing" in err
