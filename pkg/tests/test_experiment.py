import json
import os

import numpy as np
import pytest

from dualprop.cli import main
from dualprop.experiment import (ExperimentConfig, load_config, load_data, metric_columns, parse_blob_spec,
                                 parse_config_text, read_metrics, run_experiment, run_theory_checks)
from dualprop.model import load_checkpoint

BLOBS = "blobs:classes=3,dim=6,n=40,sep=4"


def blob_config(tmp_path, **kw):
    base = dict(arch="6-8-3", data=BLOBS, epochs=2, batch_size=16, out=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_text_roundtrip(tmp_path):
    cfg = ExperimentConfig(alpha=0.25, schedule="sweeps:3", lipschitz_every_epoch=False)
    path = tmp_path / "c.txt"
    path.write_text("# a comment\n" + cfg.to_text())
    assert load_config(path) == cfg
    assert load_config(path, alpha=1.0, beta=None).alpha == 1.0


def test_config_parse_types_and_errors():
    vals = parse_config_text("epochs = 3\nlr = 1e-3  # trailing\nlipschitz-every-epoch = no\n")
    assert vals == {"epochs": 3, "lr": 1e-3, "lipschitz_every_epoch": False}
    with pytest.raises(ValueError):
        parse_config_text("colour = blue")
    with pytest.raises(ValueError):
        parse_config_text("epochs 3")
    with pytest.raises(ValueError):
        parse_config_text("lipschitz_every_epoch = maybe")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(arch="10").validate()
    with pytest.raises(ValueError):
        ExperimentConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        ExperimentConfig(alpha=1.5).validate()


def test_blob_spec():
    assert parse_blob_spec("classes=2,sep=1.5") == {"classes": 2, "dim": 20, "n": 100, "sep": 1.5}
    with pytest.raises(ValueError):
        parse_blob_spec("colour=3")


def test_load_data_split_and_subset(tmp_path):
    tr, ev = load_data(blob_config(tmp_path))
    assert (len(tr), len(ev)) == (108, 12)
    tr, ev = load_data(blob_config(tmp_path, subset=50))
    assert (len(tr), len(ev)) == (45, 5)
    with pytest.raises(ValueError):
        load_data(blob_config(tmp_path, data="cifar:"))


def test_run_writes_all_outputs(tmp_path):
    cfg = blob_config(tmp_path, grad_angle_every=3)
    summary = run_experiment(cfg)
    out = tmp_path / "run"
    rows = read_metrics(out / "metrics.csv")
    assert list(rows[0]) == metric_columns(2)
    assert len(rows) == summary["batches"] == 2 * 7
    assert all(len(r) == len(metric_columns(2)) and None not in r.values() for r in rows)
    assert rows[0]["angle_layer_0"] != "nan" and rows[1]["angle_layer_0"] == "nan"
    assert rows[6]["test_acc"] != "nan" and rows[6]["lipschitz"] != "nan"
    saved = json.loads((out / "summary.json").read_text())
    assert {"final_test_acc", "final_lipschitz", "diverged"} <= set(saved)
    assert saved["diverged"] is False and saved["epochs_completed"] == 2
    assert load_checkpoint(out / "checkpoint.bin").widths == [6, 8, 3]
    assert (out / "config.txt").read_text() == cfg.to_text()


def test_zero_lr_keeps_train_loss_constant(tmp_path):
    run_experiment(blob_config(tmp_path, lr=0.0, epochs=1))
    losses = {r["train_loss"] for r in read_metrics(tmp_path / "run" / "metrics.csv")}
    assert len(losses) == 1


def test_metrics_bit_identical(tmp_path):
    cfg = blob_config(tmp_path, grad_angle_every=2)
    run_experiment(cfg, str(tmp_path / "a"))
    run_experiment(cfg, str(tmp_path / "b"))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_architecture_must_fit_data(tmp_path):
    with pytest.raises(ValueError):
        run_experiment(blob_config(tmp_path, arch="5-8-3"))
    with pytest.raises(ValueError):
        run_experiment(blob_config(tmp_path, arch="6-8-2"))


def test_divergence_keeps_header_and_rows(tmp_path, mnist_dir):
    cfg = ExperimentConfig(scheme="dp", alpha=0.0, beta=0.5, schedule="sweeps:30", arch="784-256-256-10",
                           data=f"mnist:{mnist_dir}", subset=500, epochs=2, out=str(tmp_path / "div"))
    summary = run_experiment(cfg)
    assert summary["aborted"] and summary["diverged"]
    rows = read_metrics(tmp_path / "div" / "metrics.csv")
    assert list(rows[0]) == metric_columns(3)
    assert len(rows) == summary["batches"] > 0
    assert all(r["diverged"] == "1" and None not in r.values() for r in rows)


def test_theory_checks_report(tmp_path):
    out = tmp_path / "theory.json"
    report = run_theory_checks(seed=0, n_instances=20, out=str(out))
    assert report["passed"]
    assert report["prop1_alpha_direction"] in {"non-increasing", "non-decreasing", "constant"}
    assert report["trilevel_half_residual"]["max_residual"] <= 1e-12
    assert json.loads(out.read_text())["prop1_alpha_direction"] == report["prop1_alpha_direction"]


# -- CLI -----------------------------------------------------------------

def test_cli_train_config_file_and_flag_override(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"arch = 6-8-3\ndata = {BLOBS}\nepochs = 3\nbatch_size = 16\n")
    out = tmp_path / "cli"
    assert main(["train", "--config", str(conf), "--epochs", "1", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["epochs_completed"] == 1 and summary["config"]["arch"] == "6-8-3"
    assert "final_test_acc" in json.loads(capsys.readouterr().out)


def test_cli_lipschitz_and_infer(tmp_path, capsys):
    out = tmp_path / "cli"
    main(["train", "--arch", "6-8-3", "--data", BLOBS, "--epochs", "1", "--out", str(out)])
    capsys.readouterr()
    assert main(["lipschitz", str(out / "checkpoint.bin")]) == 0
    est = float(capsys.readouterr().out)
    assert est == pytest.approx(json.loads((out / "summary.json").read_text())["final_lipschitz"])
    assert main(["infer", "--checkpoint", str(out / "checkpoint.bin"), "--data", BLOBS, "--samples", "5"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["diverged"] is False and 0.0 <= res["accuracy"] <= 1.0


def test_cli_grad_check(capsys):
    code = main(["grad-check", "--arch", "10-16-12-5", "--beta", "1e-4", "--alpha", "0", "--random-inputs",
                 "--samples", "8", "--fd"])
    res = json.loads(capsys.readouterr().out)
    assert code == 0
    assert min(res["cosine"]) >= 0.999 and max(res["fd_rel_error"]) <= 1e-5


def test_cli_theory_check(tmp_path, capsys):
    assert main(["theory-check", "--instances", "10", "--out", str(tmp_path / "t.json")]) == 0
    text = capsys.readouterr().out
    assert "prop1 alpha direction:" in text and "FAIL" not in text


def test_cli_synth_data(tmp_path):
    path = tmp_path / "b.csv"
    assert main(["synth-data", "--classes", "2", "--dim", "3", "--n", "4", "--out", str(path)]) == 0
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (8, 4) and set(table[:, -1]) == {0.0, 1.0}
    assert path.read_text().splitlines()[0] == "x0,x1,x2,label"


def test_cli_mnist_sample(tmp_path, monkeypatch):
    pytest.importorskip("mlxtend")
    monkeypatch.delenv("DUALPROP_DATA", raising=False)
    assert main(["mnist-sample"]) == 2
    assert main(["mnist-sample", "--out", str(tmp_path / "m")]) == 0
    assert sorted(os.listdir(tmp_path / "m")) == ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
