import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from cirtrain.cli import cmd_eval, cmd_synth, cmd_train, evaluate_model, main
from cirtrain.config import RunConfig, apply_override
from cirtrain.data import read_records
from cirtrain.metrics import METRIC_KEYS
from cirtrain.model import RetrievalModel
from cirtrain.train import train_model


def tiny_config(tmp_path, **overrides):
    cfg = RunConfig()
    cfg.model = dataclasses.replace(cfg.model, dim=8, prompts=4, compositor_layers=2)
    cfg.synth = dataclasses.replace(cfg.synth, n_train=48, n_val=24)
    training = {"epochs": 2, "batch_size": 8}
    training.update(overrides)
    cfg.training = dataclasses.replace(cfg.training, **training)
    cfg.paths = dataclasses.replace(
        cfg.paths,
        train_set=str(tmp_path / "train.jsonl"),
        val_set=str(tmp_path / "val.jsonl"),
        checkpoint=str(tmp_path / "ckpt.json"),
        train_log=str(tmp_path / "log.jsonl"),
        report=str(tmp_path / "report.json"),
    )
    return cfg


def test_synth_writes_expected_counts(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cmd_synth(cfg) == 0
    out = capsys.readouterr().out
    assert "48 train" in out and "24 val" in out
    assert len(read_records(cfg.paths.train_set)) == 48
    val = read_records(cfg.paths.val_set)
    assert len(val) == 24
    assert all(len(r.subset_ids) == 5 for r in val)


def test_synth_deterministic_files(tmp_path):
    cfg = tiny_config(tmp_path)
    cmd_synth(cfg)
    first = (open(cfg.paths.train_set, "rb").read(), open(cfg.paths.val_set, "rb").read())
    cmd_synth(cfg)
    second = (open(cfg.paths.train_set, "rb").read(), open(cfg.paths.val_set, "rb").read())
    assert first == second


def test_train_writes_checkpoint_log_and_decreasing_loss(tmp_path, capsys):
    cfg = tiny_config(tmp_path, epochs=3)
    cmd_synth(cfg)
    assert cmd_train(cfg) == 0
    lines = [json.loads(l) for l in open(cfg.paths.train_log)]
    assert len(lines) == 3
    assert lines[-1]["total"] < lines[0]["total"]
    assert json.load(open(cfg.paths.checkpoint))  # non-empty checkpoint document


def test_train_determinism_bitwise_checkpoints(tmp_path):
    cfg = tiny_config(tmp_path)
    cmd_synth(cfg)
    cmd_train(cfg)
    first = open(cfg.paths.checkpoint, "rb").read()
    cmd_train(cfg)
    second = open(cfg.paths.checkpoint, "rb").read()
    assert first == second


def test_eval_report_keys_and_missing_checkpoint(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    cmd_synth(cfg)
    with pytest.raises(FileNotFoundError):
        cmd_eval(cfg)
    cmd_train(cfg)
    assert cmd_eval(cfg) == 0
    report = json.load(open(cfg.paths.report))
    assert set(report) == set(METRIC_KEYS)
    table = capsys.readouterr().out
    assert "recall_at_1" in table


def test_disabled_auxiliaries_logged_as_null(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg.ablation = dataclasses.replace(cfg.ablation, use_alignment=False, use_reasoning=False)
    cmd_synth(cfg)
    cmd_train(cfg)
    row = json.loads(open(cfg.paths.train_log).readline())
    assert row["alignment"] is None and row["reasoning"] is None


def test_training_aborts_with_diagnostic_on_nonfinite(tmp_path):
    cfg = tiny_config(tmp_path)
    cmd_synth(cfg)
    records = read_records(cfg.paths.train_set)
    model = RetrievalModel(cfg)
    # poison one trainable parameter so a matmul overflows during the forward pass
    model.parameters()["text_encoder.embedding"].data[...] = 1e200
    with pytest.raises(RuntimeError, match="non-finite") as err:
        train_model(model, records, cfg)
    assert "op '" in str(err.value)  # diagnostic names the producing op


def test_main_smoke_via_argv(tmp_path, capsys):
    paths = [
        f"paths.train_set={tmp_path / 'train.jsonl'}",
        f"paths.val_set={tmp_path / 'val.jsonl'}",
        f"paths.checkpoint={tmp_path / 'ckpt.json'}",
        f"paths.train_log={tmp_path / 'log.jsonl'}",
        f"paths.report={tmp_path / 'report.json'}",
    ]
    sets = []
    for assignment in paths + ["model.dim=8", "model.prompts=2", "model.compositor_layers=1",
                               "synth.n_train=32", "synth.n_val=16",
                               "training.epochs=1", "training.batch_size=8"]:
        sets += ["--set", assignment]
    assert main(["synth"] + sets) == 0
    assert main(["train"] + sets) == 0
    assert main(["eval"] + sets) == 0
    out = capsys.readouterr().out
    assert "wrote report" in out


def test_config_file_plus_override(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg_path = tmp_path / "cfg.json"
    from cirtrain.config import save_config
    save_config(cfg, cfg_path)
    assert main(["synth", "--config", str(cfg_path), "--set", "synth.n_train=16"]) == 0
    assert len(read_records(cfg.paths.train_set)) == 16


def test_cli_entry_point_subprocess(tmp_path):
    # one end-to-end through the installed console script path
    result = subprocess.run(
        [sys.executable, "-m", "cirtrain.cli", "synth",
         "--set", f"paths.train_set={tmp_path / 't.jsonl'}",
         "--set", f"paths.val_set={tmp_path / 'v.jsonl'}",
         "--set", "synth.n_train=8", "--set", "synth.n_val=6"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert "wrote 8 train records" in result.stdout


def test_unknown_override_fails_fast():
    with pytest.raises(ValueError):
        main(["synth", "--set", "synth.n_trian=8"])


def test_gradcheck_exit_codes(monkeypatch, capsys):
    import cirtrain.cli as cli

    def fake_rows(corrupt=None):
        status = "FAIL" if corrupt else "ok"
        return [
            {"name": "ref_encoder.cls", "status": "skipped (frozen)", "max_rel_err": None},
            {"name": "bridge.w_ref", "status": status, "max_rel_err": 1.0 if corrupt else 1e-6},
        ]

    monkeypatch.setattr(cli, "run_gradient_check", fake_rows)
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "skipped (frozen)" in out and "PASS" in out
    assert main(["gradcheck", "--corrupt", "bridge.w_ref"]) == 1
    assert "FAIL" in capsys.readouterr().out
