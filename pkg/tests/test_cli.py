import csv
import json

import numpy as np
import pytest

from mixaug.cli import main
from mixaug.dataio import read_manifest, read_pnm


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--classes", "3", "--per-class", "8", "--size", "12", "--seed", "4", "--out", str(out)]) == 0
    return out


def _train(data_dir, out, *extra):
    return main(["train", "--data", str(data_dir), "--out", str(out), "--epochs", "2", "--batch-size", "8", *extra])


def test_synth_writes_manifests(data_dir):
    train = read_manifest(data_dir / "train.csv")
    evals = read_manifest(data_dir / "eval.csv")
    assert train.class_counts() == [8, 8, 8]
    assert evals.class_counts() == [2, 2, 2]


@pytest.mark.parametrize("argv", [
    ["synth", "--classes", "1", "--out", "x"],
    ["synth", "--classes", "3", "--imbalance", "1,2", "--out", "x"],
    ["train", "--mode", "bogus", "--data", "x"],
    ["train", "--mode", "mixup", "--data", "x"],
    ["train", "--mode", "vanilla"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    argv = [a.replace("x", str(tmp_path / "x")) if a == "x" else a for a in argv]
    assert main(argv) == 2


def test_missing_dataset_exits_1(tmp_path, capsys):
    assert _train(tmp_path / "nope", tmp_path / "out") == 1
    assert "train.csv" in capsys.readouterr().err


def test_train_is_byte_reproducible(data_dir, tmp_path):
    args = ("--mode", "mixaugment", "--alpha", "0.2", "--dropout", "0.25", "--flip-prob", "0.5", "--seeds", "3,5")
    assert _train(data_dir, tmp_path / "a", *args) == 0
    assert _train(data_dir, tmp_path / "b", *args) == 0
    cell = "mixaugment_a0.2_d0.25_f0.5"
    for seed in (3, 5):
        for name in ("record.csv", "checkpoint.bin", "report.csv", "summary.json"):
            a = (tmp_path / "a" / cell / f"seed{seed}" / name).read_bytes()
            b = (tmp_path / "b" / cell / f"seed{seed}" / name).read_bytes()
            assert a == b, name
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()


def test_config_file_and_flag_precedence(data_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "mixup", "alpha": 0.4, "epochs": 1, "seeds": [2], "data": str(data_dir)}))
    assert main(["train", "--config", str(cfg), "--alpha", "0.3", "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "mixup_a0.3_d0_f0" / "seed2" / "summary.json").read_text())
    assert summary["config"]["alpha"] == 0.3
    assert summary["config"]["max_epochs"] == 1


def test_config_unknown_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate_typo": 1}))
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path)]) == 2


def test_aggregate_rows_per_cell(data_dir, tmp_path):
    out = tmp_path / "runs"
    assert _train(data_dir, out, "--mode", "vanilla", "--seeds", "1,2,3") == 0
    assert _train(data_dir, out, "--mode", "mixup", "--alpha", "8", "--seeds", "1") == 0
    with (out / "aggregate.csv").open() as fh:
        rows = {r["cell"]: r for r in csv.DictReader(fh)}
    assert set(rows) == {"vanilla_anone_d0_f0", "mixup_a8_d0_f0"}
    seeds = [float(r["accuracy"]) for r in csv.DictReader((out / "vanilla_anone_d0_f0" / "seeds.csv").open())]
    assert float(rows["vanilla_anone_d0_f0"]["accuracy_median"]) == pytest.approx(np.median(seeds))
    assert (out / "mixup_a8_d0_f0" / "WARNING.txt").exists()


def test_underfit_warning_printed(data_dir, tmp_path, capsys):
    assert _train(data_dir, tmp_path, "--mode", "mixup", "--alpha", "8", "--epochs", "1") == 0
    assert "underfitting" in capsys.readouterr().out


def test_eval_report_and_arch_mismatch(data_dir, tmp_path, capsys):
    assert _train(data_dir, tmp_path / "r", "--mode", "vanilla", "--seed", "0") == 0
    ckpt = tmp_path / "r" / "vanilla_anone_d0_f0" / "seed0" / "checkpoint.bin"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data_dir / "eval.csv")]) == 0
    text = capsys.readouterr().out
    for name in read_manifest(data_dir / "eval.csv").class_names:
        assert sum(line.startswith(name + " ") for line in text.splitlines()) == 1
    assert "mean correct" in text and "median wrong" in text

    other = tmp_path / "other"
    assert main(["synth", "--classes", "4", "--per-class", "4", "--size", "12", "--out", str(other)]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(other / "eval.csv")]) == 1
    assert "checkpoint expects" in capsys.readouterr().err


def test_eval_bad_checkpoint_exits_1(data_dir, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(data_dir / "eval.csv")]) == 1


@pytest.mark.parametrize("lam", [0.6, 1.0])
def test_augment_preview_forced_lambda(data_dir, tmp_path, lam):
    out = tmp_path / "p"
    assert main(["augment-preview", "--data", str(data_dir / "train.csv"), "--lam", str(lam),
                 "--count", "3", "--out", str(out)]) == 0
    for n in range(3):
        side = dict(line.split("=", 1) for line in (out / f"mix_{n:03d}.txt").read_text().splitlines())
        assert float(side["lambda"]) == lam
        weights = [float(v) for k, v in side.items() if k.startswith("label.")]
        assert sum(weights) == pytest.approx(1.0, abs=1e-12)
        img = read_pnm(out / f"mix_{n:03d}.pnm")
        src_i = read_pnm(data_dir / side["source_i"])
        src_j = read_pnm(data_dir / side["source_j"])
        if lam == 1.0:
            np.testing.assert_array_equal(img, src_i)
        else:
            expect = np.clip(np.rint(lam * src_i.astype(float) + (1 - lam) * src_j), 0, 255)
            assert np.max(np.abs(img.astype(float) - expect)) <= 1


def test_report_rerenders(data_dir, tmp_path, capsys):
    assert _train(data_dir, tmp_path, "--mode", "vanilla", "--epochs", "1") == 0
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "median ±IQR" in text and "precision" in text
    assert main(["report", "--out", str(tmp_path / "missing")]) == 1
