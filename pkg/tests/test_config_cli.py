import json

import pytest

from dispfield.cli import main
from dispfield.config import PipelineConfig, config_from_dict, defaults_json, load_config
from dispfield.errors import ConfigError

SMALL = {"synth": {"width": 500, "height": 200, "tips_px": [4.0], "n_views": 2, "overlap": 0.4},
         "match": {"template_size": 21, "search_radius": 10}}


@pytest.mark.parametrize("bad", [
    {"bogus": {}},
    {"mesh": {"cel": 50}},
    {"mesh": {"cell": "50"}},
    {"mesh": {"cell": 50.5}},
    {"match": {"subpixel": 1}},
    {"match": {"template_size": 80}},
    {"synth": {"overlap": 0.95}},
    {"segment": {"rect": [1, 2, 0, 4]}},
    {"field": {"coefficient": -1.0}},
    {"sweep": {"cells": [50, 4]}},
    {"mesh": None},
    [],
])
def test_strict_config_rejects(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_defaults_round_trip(tmp_path):
    data = json.loads(defaults_json())
    assert config_from_dict(data) == PipelineConfig()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"registration": {"n_octaves": 4}, "field": {"coefficient": 2}}))
    cfg = load_config(p)
    assert cfg.registration.n_octaves == 4 and cfg.field.coefficient == 2.0
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    assert json.loads(capsys.readouterr().out) == PipelineConfig().to_dict()


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"mesh": {"cell": 2}}))
    out = tmp_path / "out"
    assert main(["synth", "--config", str(p), "--out", str(out)]) == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed"
    assert main(["synth", "--threads", "0", "--out", str(out)]) == 2


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "s")]) == 0
    return root, cfg


def test_cli_chain(small_run):
    root, cfg = small_run
    s, st = root / "s", root / "st"
    views = [str(s / "views" / f"reference_v{i}.png") for i in range(2)]
    assert main(["stitch", "--config", str(cfg), "--views", *views, "--out", str(st)]) == 0
    assert (st / "transforms.json").exists()
    dviews = [str(s / "views" / f"case1_v{i}.png") for i in range(2)]
    assert main(["stitch", "--views", *dviews, "--transforms", str(st / "transforms.json"),
                 "--name", "case1", "--out", str(st)]) == 0
    assert main(["segment", "--config", str(cfg), "--image", str(st / "panorama.png"),
                 "--rect", "10,50,480,100", "--out", str(root / "sg")]) == 0
    assert main(["mesh", "--mask", str(root / "sg" / "mask.png"), "--cell", "25", "--out", str(root / "m")]) == 0
    args = ["solve", "--config", str(cfg), "--reference", str(st / "panorama.png"),
            "--deformed", str(st / "case1.png"), "--mesh", str(root / "m" / "mesh.json"),
            "--mask", str(root / "sg" / "mask.png"), "--coefficient", "1.25", "--out"]
    assert main(args + [str(root / "so1")]) == 0
    assert main(args + [str(root / "so2"), "--threads", "2"]) == 0
    for f in ("case_field_px.csv", "case_field_mm.csv", "case_nodes.csv"):
        assert (root / "so1" / f).read_bytes() == (root / "so2" / f).read_bytes()
    field = str(root / "so1" / "case_field_px.csv")
    assert main(["eval", "--measured", field, "--truth", field, "--out", str(root / "ev")]) == 0
    rep = json.loads((root / "ev" / "report.json").read_text())
    assert rep["D_v"] == 0.0
    man = json.loads((root / "so1" / "manifest.json").read_text())
    assert man["status"] == "ok" and man["inputs"] and man["outputs"]


def test_bad_rect_exit_code(small_run):
    root, cfg = small_run
    img = str(root / "s" / "reference.png")
    assert main(["segment", "--image", img, "--rect", "1,2,0,4", "--out", str(root / "x1")]) == 2
    assert main(["segment", "--image", img, "--rect", "0,0,4,4", "--out", str(root / "x2")]) == 3
    man = json.loads((root / "x2" / "manifest.json").read_text())
    assert man["status"] == "failed"


def test_eval_grid_mismatch(small_run, tmp_path):
    root, _ = small_run
    truth = root / "s" / "truth_case1.csv"
    other = tmp_path / "t.csv"
    lines = truth.read_text().splitlines()
    last_y = lines[-1].split(",")[1]
    # dropping a whole row of samples changes the grid
    other.write_text("\n".join(l for l in lines if l.split(",")[1] != last_y) + "\n")
    assert main(["eval", "--measured", str(other), "--truth", str(truth), "--out", str(tmp_path / "e")]) == 3
