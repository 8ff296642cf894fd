import csv
import dataclasses
import json

import numpy as np
import pytest

from mtlopm.cli import EXCLUDED, SECTIONS, build_parser, main
from mtlopm.features import load_dataset, save_dataset
from mtlopm.mtlnet import MtlNetwork, MtlTopology, save_model

SMALL = ["--n-symbols", "300", "--osnr", "34", "40", "--frames-per-point", "4", "--bin-count", "20"]
QUICK = ["--max-epochs", "5"]


def run(*argv):
    return main([str(a) for a in argv])


def simulate(out, *extra):
    assert run("simulate", "--out", out, *SMALL, *extra) == 0
    return out / "dataset.csv"


def test_simulate_minimal(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path, "--frames-per-point", "1", "--formats", "PAM4", "--osnr", "40",
               "--n-symbols", "300") == 0
    assert capsys.readouterr().out.strip() == "1 examples (1 train / 0 val / 0 test)"
    assert len(load_dataset(tmp_path / "dataset.csv")) == 1


def test_simulate_default_counts(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path) == 0
    assert capsys.readouterr().out.strip() == "420 examples (360 train / 39 val / 21 test)"
    meta = json.loads((tmp_path / "dataset.json").read_text())
    assert meta["bin_count"] == 100 and meta["frames_per_point"] == 10


def test_simulate_idempotent(tmp_path):
    a = simulate(tmp_path / "a")
    b = simulate(tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()


def test_refuses_overwrite(tmp_path, capsys):
    simulate(tmp_path)
    before = (tmp_path / "dataset.csv").read_bytes()
    assert run("simulate", "--out", tmp_path, *SMALL, "--seed", "9") == 1
    err = capsys.readouterr().err
    assert "--force" in err and len(err.strip().splitlines()) == 1
    assert (tmp_path / "dataset.csv").read_bytes() == before
    assert run("simulate", "--out", tmp_path, *SMALL, "--seed", "9", "--force") == 0
    assert (tmp_path / "dataset.csv").read_bytes() != before


def test_train_and_evaluate(tmp_path):
    ds = simulate(tmp_path / "d")
    assert run("train", "--dataset", ds, "--out", tmp_path / "m", *QUICK, "--loss-ratio", "5") == 0
    model = json.loads((tmp_path / "m" / "model.json").read_text())
    assert model["loss_weights"]["w_mfi"] == 1.0 and model["loss_weights"]["w_osnr"] == 5.0
    with open(tmp_path / "m" / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "train_loss", "val_loss", "val_acc", "val_rmse_db"]
    assert 1 <= len(rows) <= 5
    assert run("evaluate", "--model", tmp_path / "m" / "model.json", "--dataset", ds, "--out", tmp_path / "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    n_test = load_dataset(ds).counts()["test"]
    assert metrics["n_examples"] == n_test
    with open(tmp_path / "e" / "scatter.csv") as fh:
        assert len(list(csv.DictReader(fh))) == n_test


def test_train_stl(tmp_path):
    ds = simulate(tmp_path / "d")
    assert run("train", "--dataset", ds, "--out", tmp_path / "m", *QUICK, "--stl", "mfi") == 0
    model = json.loads((tmp_path / "m" / "model.json").read_text())
    assert [b["task"] for b in model["topology"]["branches"]] == ["mfi"]
    assert run("evaluate", "--model", tmp_path / "m" / "model.json", "--dataset", ds, "--out", tmp_path / "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["osnr_rmse_db"] is None


def test_evaluate_perfect_pair(tmp_path):
    ds_path = simulate(tmp_path / "d")
    ds = load_dataset(ds_path)
    # A net whose output depends only on the bias: use a dataset whose test labels are all one point.
    for e in ds.examples:
        e.osnr_db, e.osnr_norm = 34.0, 0.0
        e.format_onehot = np.array([1.0, 0.0, 0.0])
        e.fmt = e.fmt.OOK
    save_dataset(ds, tmp_path / "p.csv")
    net = MtlNetwork(MtlTopology.default(20))
    net.layers[2][1][:] = [5.0, 0.0, 0.0]
    save_model(net, tmp_path / "m.json")
    assert run("evaluate", "--model", tmp_path / "m.json", "--dataset", tmp_path / "p.csv", "--out", tmp_path / "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["mfi_accuracy"] == 1.0 and metrics["osnr_rmse_db"] == 0.0


def test_evaluate_mismatch(tmp_path, capsys):
    ds = simulate(tmp_path / "d")
    save_model(MtlNetwork(MtlTopology.default(30)), tmp_path / "m.json")
    assert run("evaluate", "--model", tmp_path / "m.json", "--dataset", ds, "--out", tmp_path / "e") == 1
    assert "30 bins" in capsys.readouterr().err


def test_nonfinite_names_epoch(tmp_path, capsys):
    ds = simulate(tmp_path / "d")
    assert run("train", "--dataset", ds, "--out", tmp_path / "m", "--learning-rate", "1e200", "--max-epochs", "50") == 1
    err = capsys.readouterr().err
    assert "NonFinite" in err and "epoch" in err


def test_sweep_loss_ratio(tmp_path, capsys):
    assert run("sweep", "loss-ratio", "--out", tmp_path, *SMALL, *QUICK, "--values", "1", "5", "--n-seeds", "1",
               "--shared-neurons", "10") == 0
    with open(tmp_path / "sweep_loss_ratio.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["value"]) for r in rows] == [1.0, 5.0]
    assert "stl_osnr_rmse_avg" in rows[0]
    best = min(rows, key=lambda r: (float(r["rmse_avg"]), float(r["value"])))
    assert f"optimal loss_ratio for mtl: {int(float(best['value']))}" in capsys.readouterr().out


def test_sweep_bins_rows(tmp_path):
    assert run("sweep", "bins", "--out", tmp_path, *SMALL, *QUICK, "--values", "10", "20", "--n-seeds", "1") == 0
    with open(tmp_path / "sweep_bins.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["value"], r["kind"]) for r in rows] == [(v, k) for v in ("10", "20")
                                                       for k in ("mtl", "stl_mfi", "stl_osnr")]
    meta = json.loads((tmp_path / "sweep_bins.json").read_text())
    assert meta["config"]["sweep"]["n_seeds"] == 1


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"frames_per_point": 2, "osnr_grid": [34, 40], "bin_count": 20},
                               "sim": {"n_symbols": 300}}))
    assert run("simulate", "--out", tmp_path / "a", "--config", cfg) == 0
    assert len(load_dataset(tmp_path / "a" / "dataset.csv")) == 12
    assert run("simulate", "--out", tmp_path / "b", "--config", cfg, "--frames-per-point", "1") == 0
    assert len(load_dataset(tmp_path / "b" / "dataset.csv")) == 6


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"sim": {"seed": 3}}, {"train": {"lr": 1}}])
def test_config_unknown_keys(tmp_path, capsys, bad):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(bad))
    assert run("simulate", "--out", tmp_path, "--config", cfg) == 1
    assert "unknown key" in capsys.readouterr().err
    assert not (tmp_path / "dataset.csv").exists()


def test_invalid_value_rejected_before_work(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path, "--n-taps", "4") == 1
    assert "n_taps" in capsys.readouterr().err
    assert not (tmp_path / "dataset.csv").exists()


@pytest.mark.parametrize("command", ["simulate", "train", "evaluate", "sweep"])
def test_help_lists_every_key(command):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    text = sub.format_help()
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name in EXCLUDED.get(section, ()):
                continue
            assert "--" + f.name.replace("_", "-") in text
    assert text.count("default:") >= sum(len(dataclasses.fields(c)) for c in SECTIONS.values()) - 4
