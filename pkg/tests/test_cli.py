import csv
import io
import json
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest
from helpers import INF, result_from_balls

from conftest import FIXTURES
from ubreach.cli import load_schema, main
from ubreach.milp import Polytope, read_lp

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture
def affine(tmp_path):
    """Copy of the affine fixture in a scratch directory."""
    for name in ("config.json", "identity.json"):
        shutil.copy(FIXTURES / "affine" / name, tmp_path / name)
    return tmp_path


@pytest.fixture
def affine_result(affine):
    out = affine / "r.json"
    assert main(["reach", str(affine / "config.json"), "-o", str(out)]) == 0
    return out


def test_reach_writes_valid_result_and_timings(affine, affine_result):
    doc = json.loads(affine_result.read_text())
    jsonschema.validate(doc, load_schema("result"))
    timings = json.loads((affine / "r.timings.json").read_text())
    jsonschema.validate(timings, load_schema("timings"))
    r = [s["balls"][0]["radius"] for s in doc["steps"]]
    assert r == pytest.approx([2.0, 1.5], abs=1e-6)
    assert "sha256" in doc["config"]["system"]["network"]


def test_reach_is_byte_identical(affine, affine_result):
    again = affine / "r2.json"
    assert main(["reach", str(affine / "config.json"), "-o", str(again)]) == 0
    assert again.read_bytes() == affine_result.read_bytes()


def test_missing_network_names_path(affine, capsys):
    (affine / "identity.json").unlink()
    assert main(["reach", str(affine / "config.json"), "-o", str(affine / "r.json")]) == 2
    err = capsys.readouterr().err
    assert "network file not found" in err and "identity.json" in err


def test_schema_violation_is_config_error(affine, capsys):
    cfg = json.loads((affine / "config.json").read_text())
    cfg["reach"]["n_samp"] = 0
    cfg["reach"]["surprise"] = 1
    (affine / "config.json").write_text(json.dumps(cfg))
    assert main(["reach", str(affine / "config.json")]) == 2


def test_check_exit_codes(affine, affine_result, capsys, tmp_path):
    out = tmp_path / "v.json"
    assert main(["check", str(affine_result), "--box=-0.5:0.5", "-o", str(out)]) == 0
    jsonschema.validate(json.loads(out.read_text()), load_schema("verdict"))
    assert main(["check", str(affine_result), "--box=-1:3"]) == 3
    assert "NotSubset" in capsys.readouterr().out
    # start set leaving the domain
    assert main(["check", str(affine_result), "--box=-20:0"]) == 2
    assert main(["check", str(affine_result)]) == 2


def test_check_with_start_set_file(affine, affine_result, tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"A": [[1.0], [-1.0]], "b": [0.25, 0.25]}))
    assert main(["check", str(affine_result), "--set", str(p)]) == 0


def test_coverage_csv_and_json(affine, affine_result, tmp_path, capsys):
    js = tmp_path / "c.json"
    out = tmp_path / "c.csv"
    assert main(["coverage", str(affine / "config.json"), str(affine_result), "-n", "2000",
                 "--json", str(js), "-o", str(out)]) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["n_samp", "t1", "t2", "union"]
    assert rows[1][0] == "1" and rows[1][1] == "1.000000"
    jsonschema.validate(json.loads(js.read_text()), load_schema("coverage"))
    assert main(["coverage", str(affine / "config.json"), str(affine_result), "-n", "0"]) == 2


def test_coverage_is_byte_identical(affine, affine_result, tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"c{i}.csv"
        main(["coverage", str(affine / "config.json"), str(affine_result), "-n", "3000",
              "--seed", "4", "-o", str(p)])
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_plot_two_ball_geometry(tmp_path):
    res = result_from_balls([[([0.0, 0.0], 1.0, INF)], [([2.0, 1.0], 0.5, 1)]],
                            [-4, -4], [4, 4], goal=Polytope.box([1, 1], [3, 2]))
    rp = tmp_path / "two.json"
    rp.write_text(json.dumps(res.to_dict()))
    svg = tmp_path / "two.svg"
    assert main(["plot", str(rp), "-o", str(svg), "--box=-1,-1:0,0"]) == 0
    root = ET.parse(svg).getroot()
    x0, x1, y0, y1 = map(float, root.get("data-view").split())
    left, top, w, h = map(float, root.get("data-plot").split())

    def px(x, y):
        return left + (x - x0) / (x1 - x0) * w, top + (y1 - y) / (y1 - y0) * h

    rects = [e for e in root.iter(SVG + "rect") if e.get("class") == "ball"]
    polys = [e for e in root.iter(SVG + "polygon") if e.get("class") == "ball"]
    assert len(rects) == 1 and len(polys) == 1
    r = rects[0]
    ex, ey = px(-1.0, 1.0)
    assert float(r.get("x")) == pytest.approx(ex, abs=1e-3)
    assert float(r.get("y")) == pytest.approx(ey, abs=1e-3)
    assert float(r.get("width")) == pytest.approx(2 / (x1 - x0) * w, abs=1e-3)
    pts = [tuple(map(float, p.split(","))) for p in polys[0].get("points").split()]
    want = [px(2.5, 1.0), px(2.0, 1.5), px(1.5, 1.0), px(2.0, 0.5)]
    assert np.allclose(pts, want, atol=1e-3)
    assert polys[0].get("data-t") == "2" and float(polys[0].get("data-r")) == 0.5
    assert any(e.get("class") == "goal" for e in root.iter(SVG + "polygon"))
    assert any(e.get("class") == "start-set" for e in root.iter(SVG + "polygon"))
    rows = list(csv.DictReader(io.StringIO((tmp_path / "two.csv").read_text())))
    assert len(rows) == 2


def test_plot_rejects_other_dimensions(tmp_path, capsys):
    res = result_from_balls([[([0.0, 0.0, 0.0], 1.0, INF)]], [-1] * 3, [1] * 3)
    rp = tmp_path / "three.json"
    rp.write_text(json.dumps(res.to_dict()))
    assert main(["plot", str(rp), "-o", str(tmp_path / "x.svg")]) == 2
    assert "2-D" in capsys.readouterr().err


def test_export_lp(affine, tmp_path):
    out = tmp_path / "ball.lp"
    assert main(["export-lp", str(affine / "config.json"), "-t", "2", "--center", "0",
                 "-o", str(out)]) == 0
    model = read_lp(out.read_text())
    assert model.num_vars > 0
    from ubreach.solver import solve
    assert solve(model).objective_incumbent == pytest.approx(4.0, abs=1e-6)
    assert main(["export-lp", str(affine / "config.json"), "-t", "9", "-o", str(out)]) == 2


def test_console_entry_point(affine):
    proc = subprocess.run([sys.executable, "-m", "ubreach.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ubreach" in proc.stdout
