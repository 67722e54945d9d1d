import json

import pytest

from causalmask.checkpoint import load_checkpoint, save_checkpoint
from causalmask.cli import cli_main
from causalmask.embio import read_emb
from causalmask.trainer import TrainConfig, fit


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"train": {"max_epochs": 3, "batch_size": 128}}))
    assert cli_main(["synth", "--seed", "7", "--out", str(out)]) == 0
    return out


def test_synth_is_byte_identical(synth_dir, tmp_path):
    assert cli_main(["synth", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("train.emb", "val.emb", "test_same.emb", "test_shift1.emb", "spec.json"):
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_train_eval_inspect(synth_dir, tmp_path, capsys):
    args = ["train", "--train", str(synth_dir / "train.emb"), "--val", str(synth_dir / "val.emb"),
            "--out", str(tmp_path), "--config", str(synth_dir / "cfg.json"), "--seed", "2"]
    assert cli_main(args) == 0
    hist = json.loads((tmp_path / "history.json").read_text())
    best = next(r for r in hist["records"] if r["epoch"] == hist["best_epoch"])
    ckpt = str(tmp_path / "model.ckpt")
    assert cli_main(["eval", "--checkpoint", ckpt, "--test", str(synth_dir / "val.emb"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert abs(rep["rows"][0]["accuracy"] - best["val_accuracy"]) <= 1e-12
    assert rep["schema_version"] == 1
    capsys.readouterr()
    assert cli_main(["inspect", "--checkpoint", ckpt, "--test", str(synth_dir / "test_same.emb")]) == 0
    assert "recovery:" in capsys.readouterr().out


def test_train_resume_from_checkpoint(synth_dir, tmp_path):
    base = ["--train", str(synth_dir / "train.emb"), "--val", str(synth_dir / "val.emb")]
    full = tmp_path / "full"
    assert cli_main(["train", *base, "--out", str(full), "--config", str(synth_dir / "cfg.json")]) == 0
    cfg = TrainConfig.from_dict({"max_epochs": 3, "batch_size": 128})
    early = tmp_path / "early.ckpt"

    def stop_at_one(progress):
        if progress.epoch == 1:
            save_checkpoint(early, progress, cfg)

    fit(read_emb(synth_dir / "train.emb"), read_emb(synth_dir / "val.emb"), cfg, on_epoch=stop_at_one)
    resumed = tmp_path / "resumed"
    assert cli_main(["train", *base, "--out", str(resumed), "--checkpoint", str(early)]) == 0
    assert (resumed / "model.ckpt").read_bytes() == (full / "model.ckpt").read_bytes()
    assert (resumed / "history.json").read_bytes() == (full / "history.json").read_bytes()
    _, prog = load_checkpoint(resumed / "model.ckpt")
    assert prog.epoch == 3


def test_usage_errors(capsys):
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["eval", "--nope"]) == 2
    assert cli_main([]) == 2


def test_runtime_errors(tmp_path, capsys):
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"NOPE" + bytes(16))
    assert cli_main(["train", "--train", str(bad), "--val", str(bad), "--out", str(tmp_path)]) == 1
    assert "BadMagicError" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"learning_rat": 1}}))
    assert cli_main(["ablate", "--config", str(cfg)]) == 1
