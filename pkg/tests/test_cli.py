import json
import subprocess
import sys

import pytest

from polypattern.cli import EXIT_ERROR, EXIT_OK, main
from polypattern.gridfield import read_grid
from polypattern.polycurve import make_curve


@pytest.fixture
def parabola(tmp_path):
    path = tmp_path / "parabola.json"
    path.write_text(json.dumps(make_curve([{1: 1.0}, {2: 1.0}]).to_json()))
    return str(path)


@pytest.fixture
def planted(tmp_path, parabola):
    out = tmp_path / "planted.bin"
    assert main(["gen", "--kind", "planted", "--curve", parabola, "--t", "0.3", "--dims", "256", "256",
                 "--seed", "2", "--out", str(out)]) == EXIT_OK
    return str(out)


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_gen_is_deterministic(tmp_path):
    paths = []
    for _ in range(2):
        out = tmp_path / "r.bin"
        assert main(["gen", "--kind", "random", "--dims", "64", "64", "--eps", "0.3", "--seed", "7",
                     "--out", str(out)]) == EXIT_OK
        paths.append((out.read_bytes(), (tmp_path / "r.json").read_text()))
    assert paths[0] == paths[1]
    f = read_grid(tmp_path / "r.bin")
    assert f.dims == (64, 64)
    assert 0.2 < f.values.mean() < 0.4


def test_search_planted(tmp_path, parabola, planted):
    out = tmp_path / "s"
    assert main(["search", "--grid", planted, "--curve", parabola, "--out", str(out)]) == EXIT_OK
    res = load(f"{out}.json")
    assert res["status"] == "found"
    assert abs(res["witness"]["t"] - 0.3) < 0.02
    hdr = res["header"]
    assert hdr["tool"] == "polypattern" and len(hdr["config_hash"]) == 64 and hdr["seed"] == 0
    lines = open(f"{out}.csv").read().splitlines()
    assert lines[0].startswith("# ")
    assert any(line.startswith("mode") for line in lines)


def test_missing_curve_is_an_operational_error(tmp_path, planted, capsys):
    missing = str(tmp_path / "nope.json")
    code = main(["search", "--grid", planted, "--curve", missing, "--out", str(tmp_path / "s")])
    assert code == EXIT_ERROR
    assert "nope.json" in capsys.readouterr().err


def test_scaled_search_with_repeated_degrees_fails(tmp_path):
    curve = tmp_path / "c.json"
    curve.write_text(json.dumps(make_curve([{2: 1.0}, {1: 1.0, 2: 1.0}]).to_json()))
    code = main(["search", "--gen-kind", "random", "--dims", "64", "64", "--side", "4", "--density", "0.3",
                 "--curve", str(curve), "--out", str(tmp_path / "s")])
    assert code == EXIT_ERROR


def test_iterate_smooth_set(tmp_path, parabola):
    out = tmp_path / "it"
    code = main(["iterate", "--gen-kind", "smooth", "--dims", "1024", "1024", "--density", "0.3",
                 "--curve", parabola, "--gamma", "1", "--c", "0.7", "--out", str(out)])
    assert code == EXIT_OK
    res = load(f"{out}.json")
    assert res["status"] == "terminated"
    assert res["trace"]["k0"] == 1
    assert res["schedule"]["ells"] == [3, 5, 9]


def test_telescope(tmp_path):
    out = tmp_path / "tel"
    code = main(["telescope", "--gen-kind", "random", "--dims", "256", "256", "--density", "0.3",
                 "--ells", "3", "5", "9", "--out", str(out)])
    assert code == EXIT_OK
    a = load(f"{out}.json")["audit"]
    assert a["total"] <= a["C_rho_measured"] * a["f_l2_sq"]


def test_corner_search(tmp_path):
    grid = tmp_path / "pc.bin"
    assert main(["gen", "--kind", "planted-corner", "--p1", '{"1": 1}', "--p2", '{"2": 1}', "--t", "0.25",
                 "--dims", "256", "256", "--out", str(grid)]) == EXIT_OK
    out = tmp_path / "corner"
    code = main(["corner", "--grid", str(grid), "--p1", '{"1": 1}', "--p2", '{"2": 1}', "--ells", "1", "3", "5",
                 "--search", "--out", str(out)])
    res = load(f"{out}.json")
    assert abs(res["witness"]["t"] - 0.25) < 0.02
    assert code == (EXIT_OK if all(v["ok"] for v in res["audit"]["checks"].values()) else 2)


def test_config_precedence(tmp_path, parabola, planted):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "eps": 2e-5}))
    out = tmp_path / "s"
    assert main(["search", "--config", str(cfg), "--seed", "9", "--grid", planted, "--curve", parabola,
                 "--out", str(out)]) == EXIT_OK
    c = load(f"{out}.json")["header"]["config"]
    assert c["seed"] == 9 and c["eps"] == 2e-5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert main(["search", "--config", str(bad), "--grid", planted, "--curve", parabola,
                 "--out", str(out)]) == EXIT_ERROR


def test_config_hash_ignores_output_path(tmp_path, parabola, planted):
    hashes = []
    for name in ("a", "b"):
        main(["search", "--grid", planted, "--curve", parabola, "--out", str(tmp_path / name)])
        hashes.append(load(tmp_path / f"{name}.json")["header"]["config_hash"])
    assert hashes[0] == hashes[1]


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "polypattern.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("decay", "iterate", "search", "corner", "telescope", "gen"):
        assert cmd in r.stdout


def test_decay_rejects_curve_violating_both_hypotheses(tmp_path, capsys):
    # rank one and repeated degrees: neither lemma applies
    curve = tmp_path / "bad.json"
    curve.write_text(json.dumps({"polys": [{"1": 1.0, "2": 1.0}, {"1": 2.0, "2": 2.0}]}))
    code = main(["decay", "--curve", str(curve), "--s", "2", "--ell", "3", "--out", str(tmp_path / "d")])
    assert code == EXIT_ERROR
    assert "HypothesisError" in capsys.readouterr().err


@pytest.mark.slow
def test_decay_parabola(tmp_path, parabola):
    out = tmp_path / "d"
    code = main(["decay", "--curve", parabola, "--s", "0", "--kmin", "6", "--kmax", "16", "--out", str(out)])
    res = load(f"{out}.json")
    assert code == EXIT_OK
    assert res["calibration"] is not None
    assert res["fit"]["slope"] <= -0.4
    rows = [line for line in open(f"{out}.csv") if not line.startswith("#")]
    assert len(rows) == 1 + 11
