import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from cyclegen import dataset as ds
from cyclegen.cli import build_parser, main, resolve

SMALL = ["--length", "16", "--seed", "5"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Fixture data plus a tuned and trained voltage model at L=16."""
    d = tmp_path_factory.mktemp("cli")
    assert run("fixture", "--cells", 2, "--cycles", 6, "--length-raw", 40, "--seed", 5, "--out", d / "train.csv") == 0
    assert run("fixture", "--cells", 1, "--cycles", 4, "--first-cell", 3, "--length-raw", 40, "--seed", 5,
               "--out", d / "test.csv") == 0
    assert run("tune", "--data", d / "train.csv", "--depths", "2,3", "--widths", "16,32", "--epochs", 20,
               "--out-dir", d, *SMALL) == 0
    assert run("train", "--data", d / "train.csv", "--val-data", d / "test.csv", "--epochs", 150,
               "--out-dir", d, *SMALL) == 0
    return d


def test_fixture_command(tmp_path):
    out = tmp_path / "f.csv"
    assert run("fixture", "--cells", 1, "--cycles", 4, "--seed", 7, "--out", out) == 0
    samples = ds.read_csv(out)
    assert {s.cycle_index for s in samples} == {1, 2, 3, 4}
    first = out.read_bytes()
    assert run("fixture", "--cells", 1, "--cycles", 4, "--seed", 7, "--out", out) == 0
    assert out.read_bytes() == first


def test_fixture_zero_cycles_is_usage_error(tmp_path, capsys):
    assert run("fixture", "--cycles", 0, "--out", tmp_path / "f.csv") == 2
    assert not (tmp_path / "f.csv").exists()


def test_fixture_bad_fade_is_usage_error(tmp_path):
    assert run("fixture", "--cycles", 400, "--out", tmp_path / "f.csv") == 2


def test_protocol_defaults():
    p = build_parser()
    tune_args = resolve(p, ["tune"])
    assert (tune_args.tuning_cycles, tune_args.epochs) == (2, 50)
    assert tune_args.depths == (2, 4, 6, 8, 10) and tune_args.widths == (16, 32, 64, 128)
    assert resolve(p, ["train"]).epochs == 400
    assert resolve(p, ["generate"]).max_hops == 100
    assert resolve(p, ["eval"]).length == 128


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 12\nseed = 9\nout-dir = outputs\n")
    p = build_parser()
    a = resolve(p, ["train", "--config", str(cfg)])
    assert (a.epochs, a.seed, a.out_dir) == (12, 9, Path("outputs"))
    b = resolve(p, ["train", "--config", str(cfg), "--epochs", "3"])
    assert (b.epochs, b.seed) == (3, 9)


def test_config_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_option = 1\n")
    assert run("train", "--config", cfg) == 2
    cfg.write_text("epochs = many\n")
    assert run("train", "--config", cfg) == 2
    assert run("train", "--config", tmp_path / "missing.cfg") == 2


def test_tune_outputs(workdir):
    rows = (workdir / "tune-voltage.csv").read_text().splitlines()
    assert rows[0] == "rank,depth,width,param_count,final_loss" and len(rows) == 5
    arch = json.loads((workdir / "arch-voltage.json").read_text())
    assert arch["widths"][0] == arch["widths"][-1] == 16
    assert arch["tuning_cycles"] == 2


def test_tune_default_grid_has_twenty_rows(workdir, tmp_path):
    assert run("tune", "--data", workdir / "train.csv", "--epochs", 1, "--out-dir", tmp_path, *SMALL) == 0
    assert len((tmp_path / "tune-voltage.csv").read_text().splitlines()) == 21


def test_train_outputs(workdir):
    for name in ("chargenet-voltage.json", "dischargenet-voltage.json", "coupled-voltage.json"):
        assert (workdir / name).exists()
    loss = (workdir / "loss-voltage.csv").read_text().splitlines()
    assert loss[0] == "epoch,to_charge_loss,to_discharge_loss" and len(loss) == 151
    meta = json.loads((workdir / "coupled-voltage.json").read_text())
    assert meta["calibration_source"] == "validation" and meta["calibrated_hop_error"] > 0


def test_train_same_seed_identical_files(workdir, tmp_path):
    arch = workdir / "arch-voltage.json"
    for sub in ("a", "b"):
        assert run("train", "--data", workdir / "train.csv", "--arch", arch, "--epochs", 5,
                   "--out-dir", tmp_path / sub, *SMALL) == 0
    for name in ("chargenet-voltage.json", "dischargenet-voltage.json", "loss-voltage.csv", "coupled-voltage.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_missing_arch_is_usage_error(workdir, tmp_path):
    assert run("train", "--data", workdir / "train.csv", "--out-dir", tmp_path, *SMALL) == 2


def test_train_divergence_exit_code(workdir, tmp_path):
    assert run("train", "--data", workdir / "train.csv", "--arch", workdir / "arch-voltage.json",
               "--epochs", 3, "--lr", 1e300, "--out-dir", tmp_path, *SMALL) == 4


def test_bad_data_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("cell_id,cycle_index\n1,2\n")
    assert run("tune", "--data", bad, "--out-dir", tmp_path) == 3
    assert run("tune", "--data", tmp_path / "absent.csv", "--out-dir", tmp_path) == 2


def test_generate_zero_hops_header_only(workdir, tmp_path):
    assert run("generate", "--data", workdir / "test.csv", "--model-dir", workdir, "--max-hops", 0,
               "--out-dir", tmp_path, *SMALL) == 0
    assert (tmp_path / "synthetic-voltage.csv").read_text().count("\n") == 1
    meta = json.loads((tmp_path / "chain-voltage.json").read_text())
    assert meta["hops"] == 0 and meta["stop_reason"] == "max_hops"


def test_generate_fifty_cycles_and_retrain(workdir, tmp_path):
    assert run("generate", "--data", workdir / "test.csv", "--model-dir", workdir, "--max-hops", 100,
               "--out-dir", tmp_path, *SMALL) == 0
    synth = tmp_path / "synthetic-voltage.csv"
    samples = ds.read_csv(synth)
    cycles = {(s.cycle_index, s.phase) for s in samples}
    assert len(cycles) == 100 and len({c for c, _ in cycles}) == 50
    assert min(c for c, _ in cycles) == 5  # seed is the last test cycle, 4
    assert all(2.0 <= s.voltage_v <= 4.5 for s in samples)
    meta = json.loads((tmp_path / "chain-voltage.json").read_text())
    assert meta["hops"] == 100 and meta["seed_cycle"] == 4
    # augmentation loop: the synthetic cycles retrain without error
    assert run("train", "--data", synth, "--arch", workdir / "arch-voltage.json", "--epochs", 3,
               "--out-dir", tmp_path / "retrain", *SMALL) == 0


def test_generate_threshold_and_bounds(workdir, tmp_path):
    e = json.loads((workdir / "coupled-voltage.json").read_text())["calibrated_hop_error"]
    assert run("generate", "--data", workdir / "test.csv", "--model-dir", workdir, "--threshold", repr(5 * e),
               "--out-dir", tmp_path, *SMALL) == 0
    assert json.loads((tmp_path / "chain-voltage.json").read_text())["hops"] == 5
    assert run("generate", "--data", workdir / "test.csv", "--model-dir", workdir, "--bounds", "3.5,4.5",
               "--out-dir", tmp_path, *SMALL) == 0
    assert json.loads((tmp_path / "chain-voltage.json").read_text())["stop_reason"] == "bound_violation"


def test_eval_outputs(workdir, tmp_path, capsys):
    assert run("eval", "--data", workdir / "test.csv", "--model-dir", workdir, "--out-dir", tmp_path, *SMALL) == 0
    rows = (tmp_path / "metrics-voltage-to_discharge.csv").read_text().splitlines()
    assert rows[0] == "cycle_index,mse,mae,rmse" and len(rows) == 1 + 4
    assert len((tmp_path / "metrics-voltage-to_charge.csv").read_text().splitlines()) == 1 + 3
    summary = json.loads((tmp_path / "metrics-voltage.json").read_text())
    assert summary["units"] == "V"
    assert summary["directions"]["to_discharge"]["aggregate"]["rmse"] < 0.1


def test_eval_on_own_outputs_is_zero(workdir, tmp_path):
    assert run("generate", "--data", workdir / "test.csv", "--model-dir", workdir, "--max-hops", 6,
               "--out-dir", tmp_path, *SMALL) == 0
    assert run("eval", "--data", tmp_path / "synthetic-voltage.csv", "--model-dir", workdir,
               "--out-dir", tmp_path, *SMALL) == 0
    summary = json.loads((tmp_path / "metrics-voltage.json").read_text())
    for d in summary["directions"].values():
        assert all(v < 1e-12 for v in d["aggregate"].values())


def test_eval_drive_cycle_summary(tmp_path, capsys):
    assert run("fixture", "--cells", 2, "--cycles", 4, "--length-raw", 30, "--seed", 2, "--out", tmp_path / "d.csv") == 0
    common = ["--param", "soc", "--out-dir", tmp_path, *SMALL]
    assert run("tune", "--data", tmp_path / "d.csv", "--depths", 2, "--widths", 8, "--epochs", 2, *common) == 0
    assert run("train", "--data", tmp_path / "d.csv", "--epochs", 2, *common) == 0
    capsys.readouterr()
    assert run("eval", "--data", tmp_path / "d.csv", "--drive-cycle", *common) == 0
    out = capsys.readouterr().out
    assert "MAE" in out and "RMSE" in out and "%" in out and "MSE" not in out.replace("RMSE", "")


def test_plot_outputs(workdir, tmp_path):
    assert run("plot", "--data", workdir / "test.csv", "--model-dir", workdir, "--cycle", 1,
               "--out-dir", tmp_path, *SMALL) == 0
    stem = tmp_path / "overlay-voltage-to_discharge-cell3-c1"
    lines = stem.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "step,true,predicted" and len(lines) == 17
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.max(np.abs(data[:, 1] - data[:, 2])) < 0.25
    root = ET.parse(stem.with_suffix(".svg")).getroot()
    assert root.tag.endswith("svg")


def test_plot_missing_cycle_is_data_error(workdir, tmp_path):
    assert run("plot", "--data", workdir / "test.csv", "--model-dir", workdir, "--cycle", 99,
               "--out-dir", tmp_path, *SMALL) == 3


def test_log_env(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("CYCLEGEN_LOG", "debug")
    assert run("eval", "--data", workdir / "test.csv", "--model-dir", workdir, "--out-dir", tmp_path, *SMALL) == 0
    monkeypatch.setenv("CYCLEGEN_LOG", "nonsense")
    assert run("eval", "--data", workdir / "test.csv", "--model-dir", workdir, "--out-dir", tmp_path, *SMALL) == 0
