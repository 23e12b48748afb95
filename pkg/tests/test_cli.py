"""CLI pipeline: synth -> preprocess -> train -> eval -> embed, plus
checkpoint round trips, resume, and error exit codes."""

import json
import os

import numpy as np
import pytest

from plastic_nmn import checkpoint as ckpt
from plastic_nmn import preprocess as pp
from plastic_nmn import training as tr
from plastic_nmn.cli import main


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    raw = str(root / "raw")
    feat = str(root / "feat")
    run = str(root / "run")
    config = str(root / "config.json")
    with open(config, "w") as fh:
        json.dump({"seed": 3, "folds": 2, "k": 8, "l": 4, "batch": 8,
                   "synth": {"total_windows": 300, "duration_seconds": 4.0}},
                  fh)
    assert main(["synth", "--config", config, "--out", raw]) == 0
    assert main(["preprocess", "--in", raw, "--out", feat]) == 0
    assert main(["train", "--config", config, "--data", feat, "--out", run,
                 "--fold", "0", "--epochs", "2"]) == 0
    return {"root": root, "raw": raw, "feat": feat, "run": run,
            "config": config}


def test_synth_writes_manifest_and_echo(pipeline):
    manifest = json.load(open(os.path.join(pipeline["raw"], "manifest.json")))
    assert manifest["kind"] == "raw"
    labels = [e["label"] for e in manifest["entries"]]
    assert set(labels) == set(range(7))
    assert os.path.exists(os.path.join(pipeline["raw"], "resolved_config.json"))


def test_synth_same_seed_identical_bytes(pipeline, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    for out in (out_a, out_b):
        assert main(["synth", "--config", pipeline["config"], "--out", out]) == 0
    for name in sorted(os.listdir(out_a)):
        if name.endswith(".f32"):
            assert _read(os.path.join(out_a, name)) == _read(os.path.join(out_b, name))


def test_preprocess_idempotent_bytes(pipeline, tmp_path):
    again = str(tmp_path / "feat2")
    assert main(["preprocess", "--in", pipeline["raw"], "--out", again]) == 0
    for name in sorted(os.listdir(pipeline["feat"])):
        if name.endswith(".f32"):
            assert _read(os.path.join(pipeline["feat"], name)) == \
                _read(os.path.join(again, name))


def test_preprocess_window_count(pipeline):
    manifest = json.load(open(os.path.join(pipeline["feat"], "manifest.json")))
    # 4 s at 250 Hz: floor((1000 - 250)/62) + 1 = 13 windows per recording
    assert all(e["n_windows"] == 13 for e in manifest["entries"])


def test_malformed_manifest_exit_code_2(tmp_path, capsys):
    bad = str(tmp_path / "bad")
    os.makedirs(bad)
    with open(os.path.join(bad, "manifest.json"), "w") as fh:
        fh.write("{broken")
    assert main(["preprocess", "--in", bad, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "\n" not in err.strip()


def test_unknown_config_key_rejected(tmp_path, capsys):
    config = str(tmp_path / "c.json")
    with open(config, "w") as fh:
        json.dump({"learning_rate": 1e-3}, fh)
    assert main(["synth", "--config", config, "--out", str(tmp_path / "o")]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_env_seed_override(pipeline, tmp_path, monkeypatch):
    out_env = str(tmp_path / "env")
    monkeypatch.setenv("PLASTIC_NMN_SEED", "99")
    assert main(["synth", "--config", pipeline["config"], "--out", out_env]) == 0
    echo = json.load(open(os.path.join(out_env, "resolved_config.json")))
    assert echo["config"]["seed"] == 99
    # explicit --seed beats the environment
    out_flag = str(tmp_path / "flag")
    assert main(["synth", "--config", pipeline["config"], "--out", out_flag,
                 "--seed", "5"]) == 0
    echo = json.load(open(os.path.join(out_flag, "resolved_config.json")))
    assert echo["config"]["seed"] == 5


def test_train_writes_checkpoint_and_curve(pipeline):
    fold_dir = os.path.join(pipeline["run"], "fold0")
    meta, arrays = ckpt.load_checkpoint(fold_dir)
    assert meta["model"] == "plastic-nmn"
    assert meta["epoch"] == 2 and meta["fold"] == 0
    assert "head.w" in arrays and "memory.input.alpha" in arrays
    curve = open(os.path.join(fold_dir, "loss_curve.csv")).read().splitlines()
    assert curve[0] == "epoch,mean_loss" and len(curve) == 3


def test_eval_and_embed_outputs(pipeline):
    out = str(pipeline["root"] / "report")
    assert main(["eval", "--checkpoint", os.path.join(pipeline["run"], "fold0"),
                 "--data", pipeline["feat"], "--out", out]) == 0
    report = json.load(open(os.path.join(out, "report.json")))
    confusion = np.asarray(report["confusion"])
    sums = confusion.sum(axis=1)
    assert ((np.abs(sums - 1.0) <= 1e-9) | (sums == 0.0)).all()
    assert 0.0 <= report["mean_weighted_f1"] <= 1.0

    emb_out = str(pipeline["root"] / "emb")
    assert main(["embed", "--checkpoint", os.path.join(pipeline["run"], "fold0"),
                 "--data", pipeline["feat"], "--n", "20", "--out", emb_out]) == 0
    rows = open(os.path.join(emb_out, "embeddings.csv")).read().splitlines()
    assert rows[0] == "id,label,pc1,pc2"
    assert len(rows) == 21


def test_eval_rerun_identical(pipeline, tmp_path):
    out_a = str(tmp_path / "ra")
    out_b = str(tmp_path / "rb")
    for out in (out_a, out_b):
        assert main(["eval", "--checkpoint", os.path.join(pipeline["run"], "fold0"),
                     "--data", pipeline["feat"], "--out", out]) == 0
    assert _read(os.path.join(out_a, "report.json")) == \
        _read(os.path.join(out_b, "report.json"))


def test_checkpoint_roundtrip_bit_exact(pipeline, tmp_path):
    fold_dir = os.path.join(pipeline["run"], "fold0")
    meta, arrays = ckpt.load_checkpoint(fold_dir)
    copy_dir = str(tmp_path / "copy")
    ckpt.save_checkpoint(copy_dir, {k: v for k, v in meta.items()
                                    if k not in ("format", "arrays")}, arrays)
    assert _read(os.path.join(fold_dir, "params.bin")) == \
        _read(os.path.join(copy_dir, "params.bin"))
    meta2, arrays2 = ckpt.load_checkpoint(copy_dir)
    for name in arrays:
        np.testing.assert_array_equal(arrays[name], arrays2[name])


def test_checkpoint_forward_bit_identical(pipeline):
    fold_dir = os.path.join(pipeline["run"], "fold0")
    _, model_a, scaler_a, _, _ = ckpt.restore_training_state(fold_dir)
    _, model_b, scaler_b, _, _ = ckpt.restore_training_state(fold_dir)
    samples = pp.load_sample_dataset(pipeline["feat"])[:16]
    out_a = tr.evaluate(model_a, scaler_a, samples)
    out_b = tr.evaluate(model_b, scaler_b, samples)
    np.testing.assert_array_equal(out_a.logits, out_b.logits)


def test_resume_reproduces_uninterrupted_run(pipeline, tmp_path):
    feat = pipeline["feat"]
    config = pipeline["config"]
    run_full = str(tmp_path / "full")
    run_resume = str(tmp_path / "resumed")
    assert main(["train", "--config", config, "--data", feat, "--out", run_full,
                 "--fold", "1", "--epochs", "3"]) == 0
    assert main(["train", "--config", config, "--data", feat, "--out", run_resume,
                 "--fold", "1", "--epochs", "1"]) == 0
    assert main(["train", "--config", config, "--data", feat, "--out", run_resume,
                 "--fold", "1", "--epochs", "3", "--resume"]) == 0
    a = ckpt.load_checkpoint(os.path.join(run_full, "fold1"))
    b = ckpt.load_checkpoint(os.path.join(run_resume, "fold1"))
    assert a[0]["loss_curve"] == b[0]["loss_curve"]
    for name in a[1]:
        np.testing.assert_array_equal(a[1][name], b[1][name])


def test_resume_rejects_config_mismatch(pipeline, tmp_path, capsys):
    run_dir = str(tmp_path / "mismatch")
    assert main(["train", "--config", pipeline["config"], "--data",
                 pipeline["feat"], "--out", run_dir, "--fold", "0",
                 "--epochs", "1"]) == 0
    assert main(["train", "--config", pipeline["config"], "--data",
                 pipeline["feat"], "--out", run_dir, "--fold", "0",
                 "--epochs", "2", "--seed", "123", "--resume"]) == 2
    assert "different configuration" in capsys.readouterr().err


def test_missing_checkpoint_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"),
                 "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "checkpoint" in capsys.readouterr().err
