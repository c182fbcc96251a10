import csv
import re

import numpy as np
import pytest

from fedser.charts import heatmap_svg, line_chart_svg
from fedser.cli import main
from fedser.config import bundled_config_path, load_config

SMALL = """
seed = 1
out = "{out}"

[corpus]
source = "synthetic"
clips_per_client = 5
num_classes = 2
noise = 0.05

[federation]
n_clients = 2
rounds = 3
mode = "nature"
eval_every = 1
train_batch = 4

[attack]
family = "fgsm"
eval_attacks = ["fgsm", "deepfool"]
"""


@pytest.fixture
def small_config(tmp_path):
    def make(out="out", extra=""):
        path = tmp_path / "cfg.toml"
        path.write_text(SMALL.format(out=(tmp_path / out).as_posix()) + extra)
        return path
    return make


def test_validate_bundled_config(capsys):
    assert main(["validate", "--config", str(bundled_config_path())]) == 0
    assert "4 clients, 30 rounds" in capsys.readouterr().out
    cfg = load_config(bundled_config_path())
    assert (cfg.federation.model, cfg.corpus.num_classes, cfg.corpus.clips_per_client) == ("tiny", 4, 40)


def test_missing_field_is_named(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text(SMALL.format(out="x").replace("rounds = 3\n", ""))
    assert main(["validate", "--config", str(path)]) == 2
    assert "federation.rounds" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text(SMALL.format(out="x").replace("train_batch = 4", "train_batch = 4\nmomentum = 0.9"))
    assert main(["validate", "--config", str(path)]) == 2
    assert "federation.momentum" in capsys.readouterr().err


def test_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("seed = 0\n[corpus\nsource = 1\n")
    assert main(["validate", "--config", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_overrides_apply(small_config, capsys):
    assert main(["validate", "--config", str(small_config()), "--clients", "3", "--rounds", "7"]) == 0
    assert "3 clients, 7 rounds" in capsys.readouterr().out


def test_run_outputs_and_determinism(small_config, tmp_path):
    cfg = small_config()
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = tmp_path / "a"
    names = {p.name for p in a.iterdir()}
    assert {"run_log.csv", "uar.svg", "resolved_config.json", "round_1.ckpt", "round_3.ckpt"} <= names
    assert any(n.startswith("confusion_round_3_randomised_adversarial_deepfool") for n in names)
    log = (a / "run_log.csv").read_bytes()
    assert log == (tmp_path / "b" / "run_log.csv").read_bytes()
    rows = list(csv.DictReader(log.decode().splitlines()))
    for t in ("1", "2", "3"):
        assert {r["condition"] for r in rows if r["round"] == t} == {
            "original", "randomised", "adversarial", "randomised_adversarial"}
    # the snapshot alone reproduces the run
    assert main(["run", "--config", str(a / "resolved_config.json"), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "run_log.csv").read_bytes() == log


def test_run_grid_writes_one_directory_per_cell(small_config, tmp_path):
    cfg = small_config(extra='\n[grid]\nmodes = ["nature", "adv_train"]\nattacks = ["fgsm"]\n')
    assert main(["run", "--config", str(cfg), "--rounds", "2", "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "nature" / "run_log.csv").exists()
    assert (tmp_path / "g" / "adv_train_fgsm" / "round_2.ckpt").exists()


def test_run_stays_inside_output_directory(small_config, tmp_path, monkeypatch):
    cfg = small_config(out="only_here")
    monkeypatch.chdir(tmp_path)
    before = set(tmp_path.iterdir())
    assert main(["run", "--config", str(cfg), "--rounds", "1"]) == 0
    assert set(tmp_path.iterdir()) - before == {tmp_path / "only_here"}


def test_chart_points_determinism_and_rejection(tmp_path):
    log = tmp_path / "log.csv"
    header = "round,condition,attack,uar,accuracy,mean_perturbation_norm,attack_success_rate\n"
    body = "".join(f"{t},original,none,0.{t // 10 + 5},0.5,,\n{t},adversarial,fgsm,0.3,0.3,0.05,0.5\n"
                   for t in (10, 20, 30))
    log.write_text(header + body)
    assert main(["chart", "--log", str(log), "--out", str(tmp_path / "a.svg")]) == 0
    assert main(["chart", "--log", str(log), "--out", str(tmp_path / "b.svg")]) == 0
    svg = (tmp_path / "a.svg").read_text()
    assert svg == (tmp_path / "b.svg").read_text()
    polylines = re.findall(r'<polyline[^>]*points="([^"]+)"', svg)
    assert len(polylines) == 2 and all(len(p.split()) == 3 for p in polylines)
    assert ">round<" in svg and ">UAR<" in svg
    log.write_text(header + "10,original,none,1.2,0.5,,\n")
    assert main(["chart", "--log", str(log), "--out", str(tmp_path / "c.svg")]) == 1
    log.write_text(header)
    assert main(["chart", "--log", str(log), "--out", str(tmp_path / "d.svg")]) == 1


def test_svg_helpers_are_well_formed():
    import xml.dom.minidom
    xml.dom.minidom.parseString(line_chart_svg({("original", "none"): [(1, 0.5)]}))
    xml.dom.minidom.parseString(heatmap_svg(np.arange(12.0).reshape(4, 3), "t"))
    with pytest.raises(ValueError):
        line_chart_svg({})


def _grid(path):
    return np.array([[float(v) for v in row] for row in csv.reader(path.read_text().splitlines())])


def test_attack_demo(small_config, tmp_path, capsys):
    cfg = small_config()
    assert main(["attack-demo", "--config", str(cfg), "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert "not found" in capsys.readouterr().err
    assert main(["run", "--config", str(cfg)]) == 0
    ckpt = tmp_path / "out" / "round_3.ckpt"
    demo = tmp_path / "demo"
    assert main(["attack-demo", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(demo)]) == 0
    pert = _grid(demo / "fgsm_perturbation_x100.csv")
    assert pert.shape == (373, 64)
    assert np.abs(pert).max() <= 100 * 0.05 + 1e-9
    for kind in ("original", "perturbation_x100", "adversarial"):
        assert (demo / f"deepfool_{kind}.csv").exists() and (demo / f"deepfool_{kind}.svg").exists()
    summary = list(csv.DictReader((demo / "attack_summary.csv").read_text().splitlines()))
    assert [r["attack"] for r in summary] == ["fgsm", "deepfool"]
    zero = tmp_path / "zero"
    assert main(["attack-demo", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(zero),
                 "--attacks", "fgsm", "--epsilon", "0"]) == 0
    assert np.all(_grid(zero / "fgsm_perturbation_x100.csv") == 0)


def test_failed_run_leaves_error_report(small_config, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.format(out="x").replace('source = "synthetic"',
                   f'source = "wav"\ndirectory = "{tmp_path.as_posix()}"\nmanifest = "{(tmp_path / "none.csv").as_posix()}"'))
    out = tmp_path / "o"
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 1
    assert "none.csv" in (out / "error.txt").read_text()
    assert main(["run", "--config", str(small_config()), "--rounds", "1", "--out", str(out)]) == 0
    assert not (out / "error.txt").exists()
