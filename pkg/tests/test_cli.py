import json
import xml.etree.ElementTree as ET

import pytest

from landsharp.checkpoint import load_checkpoint
from landsharp.cli import main
from landsharp.landscape import SurfaceGrid
from _schemas import validate_file

DATA = ["--train-size", "40", "--test-size", "30", "--frames", "9"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["-q", "train", "--epochs", "1", "--batch-size", "16", "--seed", "3", *DATA,
                 "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    state = load_checkpoint(trained / "model.mscp")
    assert state.info["seed"] == 3 and state.epoch == 1
    validate_file(trained / "metrics.json", "metrics")
    assert (trained / "epochs.csv").read_text().splitlines()[0] == "epoch,train_loss,train_accuracy,dev_accuracy"


def test_sharpness_one_shot_json(trained, tmp_path, capsys):
    code = main(["-q", "sharpness", "--checkpoint", str(trained / "model.mscp"), "--repeats", "3",
                 "--epsilon", "0.25", "--points", "11", "--radius", "0.25", "--eval-samples", "10",
                 *DATA, "--out", str(tmp_path)])
    assert code == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["values"]) == 3 and {"mean", "std"} <= set(res)
    validate_file(tmp_path / "sharpness.json", "sharpness")
    assert len(list(tmp_path.glob("surface_seed*.csv"))) == 3


def test_scan_then_sharpness_matches_one_shot(trained, tmp_path, capsys):
    ck = str(trained / "model.mscp")
    common = ["--eval-samples", "10", *DATA]
    assert main(["-q", "scan", "--checkpoint", ck, "--seed", "4", *common, "--out", str(tmp_path / "s")]) == 0
    validate_file(tmp_path / "s" / "surface.json", "surface")
    capsys.readouterr()
    assert main(["-q", "sharpness", str(tmp_path / "s" / "surface.csv")]) == 0
    two_step = json.loads(capsys.readouterr().out)
    assert main(["-q", "sharpness", "--checkpoint", ck, "--repeats", "1", "--seed", "4", *common]) == 0
    one_shot = json.loads(capsys.readouterr().out)
    assert two_step["values"] == one_shot["values"] and two_step["seeds"] == [4]


def test_plot_surface_cell_count(trained, tmp_path):
    ck = str(trained / "model.mscp")
    assert main(["-q", "scan", "--checkpoint", ck, "--points", "5", "--eval-samples", "10", *DATA,
                 "--out", str(tmp_path)]) == 0
    assert main(["-q", "plot", str(tmp_path / "surface.csv"), "--out", str(tmp_path / "h.svg")]) == 0
    root = ET.parse(tmp_path / "h.svg").getroot()
    cells = [e for e in root.iter("{http://www.w3.org/2000/svg}rect") if e.get("class") == "cell"]
    rows = len((tmp_path / "surface.csv").read_text().splitlines()) - 1
    assert len(cells) == rows == 25
    assert main(["-q", "plot", str(tmp_path / "surface.csv"), "--kind", "surface-contour",
                 "--out", str(tmp_path / "c.svg")]) == 0


def test_gen_data_roundtrip(tmp_path, capsys):
    assert main(["gen-data", "--seed", "2", *DATA, "--out", str(tmp_path / "d")]) == 0
    assert "70 samples" in capsys.readouterr().out
    assert main(["-q", "train", "--epochs", "1", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "t")]) == 0


def test_study_report_and_plots(tmp_path, capsys):
    out = tmp_path / "st"
    args = ["-q", "study", "--arch", "Mini10", "--optimiser", "Adam", "SGD", "--lr", "1e-3",
            "--batch-size", "16", "--seed", "1", "2", "--epochs", "1", "--repeats", "2", "--points", "3",
            "--eval-samples", "10", *DATA, "--out", str(out)]
    assert main(args) == 0
    assert "4 records" in capsys.readouterr().out
    validate_file(out / "report.json", "report")
    assert main(["-q", "report", str(out)]) == 0
    assert "r(sharpness, OOD)" in capsys.readouterr().out
    for name in ("sharpness_vs_accuracy.svg", "sharpness_per_model.svg", "groups_seed.svg"):
        ET.parse(out / name)
    assert main(["-q", "plot", str(out), "--kind", "grouped-bars", "--group", "seed",
                 "--out", str(tmp_path / "g.svg")]) == 0


def test_study_exclusions(tmp_path, capsys):
    args = ["-q", "study", "--arch", "Mini10", "--optimiser", "SGD", "--lr", "1e-3", "1e-4",
            "--batch-size", "16", "--seed", "1", "--exclude", "lr=1e-4", "--epochs", "1", "--repeats", "1",
            "--points", "3", "--eval-samples", "10", *DATA, "--out", str(tmp_path)]
    assert main(args) == 0
    assert "1 records" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["train"], ["train", "--out", "x", "--arch", "Mini99"],
    ["scan", "--out", "x"], ["study", "--out", "x", "--exclude", "colour=red"],
    ["sharpness"], ["train", "--out", "x", "--lr", "abc"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert main(["-q", "scan", "--checkpoint", str(tmp_path / "missing.mscp"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.mscp"
    bad.write_bytes(b"nope")
    assert main(["-q", "sharpness", "--checkpoint", str(bad)]) == 2
    assert "not a checkpoint" in capsys.readouterr().err
    assert main(["-q", "train", "--epochs", "1", "--lr", "-1", *DATA, "--out", str(tmp_path)]) == 2
    assert main(["-q", "report", str(tmp_path)]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out


def test_sharpness_epsilon_beyond_grid_is_runtime_error(trained, tmp_path, capsys):
    assert main(["-q", "scan", "--checkpoint", str(trained / "model.mscp"), "--points", "3",
                 "--radius", "0.1", "--eval-samples", "10", *DATA, "--out", str(tmp_path)]) == 0
    assert main(["-q", "sharpness", str(tmp_path / "surface.csv"), "--epsilon", "0.25"]) == 2
    assert "exceeds" in capsys.readouterr().err
    assert SurfaceGrid.load(tmp_path / "surface.csv").losses.shape == (3, 3)
