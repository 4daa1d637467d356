import subprocess
import sys

import pytest

from graphcf.cli import ExperimentConfig, build_config, main, read_config_file, write_config
from graphcf.model import ModelKind
from graphcf.weighting import ConfigError

TIMING = {"timing.csv"}


def run(*argv):
    return main([str(a) for a in argv])


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        run("train", "--help")
    text = capsys.readouterr().out
    assert "(default: 20)" in text and "(default: A_GCF)" in text and "--optimizer" in text


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# comment\nK = 8\nepochs = 7\nhidden = 16,8\n")
    import argparse

    ns = argparse.Namespace(config=str(cfg_file), epochs="3")
    cfg = build_config(ns)
    assert (cfg.K, cfg.epochs, cfg.hidden, cfg.k) == (8, 3, (16, 8), 20)
    write_config(cfg, tmp_path / "round.txt")
    again = ExperimentConfig(**read_config_file(tmp_path / "round.txt"))
    assert again == cfg


def test_bad_config_values(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        read_config_file(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig(train_fraction=1.5)
    with pytest.raises(ConfigError):
        ExperimentConfig(model_kind="BPR")


def test_errors_exit_with_code_two(tmp_path, capsys):
    assert run("run", "--model_kind", "NOPE", "--out_dir", tmp_path) == 2
    err = capsys.readouterr().err
    assert "A_GCF2" in err and "MF" in err
    assert run("prepare", "--data", tmp_path / "missing.csv", "--out_dir", tmp_path) == 2
    assert run("train", "--out_dir", tmp_path / "empty") == 2
    assert "prepare" in capsys.readouterr().err


def test_divergence_exits_with_code_three(tmp_path):
    out = tmp_path / "w"
    assert run("run", "--model_kind", "W_GCF", "--epochs", 3, "--learning_rate", 1e6,
               "--weight_init", "sqrt_k", "--out_dir", out) == 3


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
def test_toy_pipeline_every_kind(tmp_path, kind, capsys):
    out = tmp_path / kind
    assert run("run", "--model_kind", kind, "--epochs", 1, "--k", 5, "--pretrain_epochs", 1, "--out_dir", out) == 0
    for name in ("config.txt", "dataset.txt", "train.txt", "test.txt", "hist_user.csv", "hist_item.csv",
                 "model.bin", "curve.csv", "timing.csv", "eval.csv", "eval.txt"):
        assert (out / name).exists(), name
    attentive = ModelKind.parse(kind).weighting == "attentive"
    assert (out / "attention.csv").exists() == attentive
    assert (out / "attention_pairs.csv").exists() == attentive
    assert "test RMSE" in capsys.readouterr().out


def test_relevance_sampling_and_sweep(tmp_path):
    out = tmp_path / "rel"
    assert run("run", "--model_kind", "A_GCF", "--sampling", "relevance", "--epochs", 1, "--k", 4,
               "--pretrain_epochs", 2, "--out_dir", out) == 0
    assert (out / "relevance_mf.bin").exists()
    assert run("analyze", "--model_kind", "A_GCF", "--sampling", "relevance", "--epochs", 1, "--k", 4,
               "--sweep_temperatures", "0.1,1", "--out_dir", out) == 0
    sweep = (out / "sweep.csv").read_text().splitlines()
    assert sweep[0].startswith("temperature,final_test_rmse,mean_1") and len(sweep) == 3
    assert (out / "sweep_t0.1" / "attention.csv").exists()


def test_analyze_rejects_non_attentive(tmp_path):
    assert run("analyze", "--model_kind", "GCF", "--out_dir", tmp_path) == 2


def test_two_runs_are_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("run", "--model_kind", "A_GCF2", "--epochs", 2, "--k", 6, "--out_dir", out) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
    for rel in files:
        if rel.name in TIMING or rel.name == "config.txt":
            continue
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--instances", 1) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == len(ModelKind)


def test_synth_then_prepare_custom_file(tmp_path):
    data = tmp_path / "r.csv"
    assert run("synth", data, "--users", 30, "--items", 40, "--records", 400, "--seed", 1) == 0
    lines = data.read_text().splitlines()
    assert len(lines) == 400 and lines[0].count(",") == 2
    out = tmp_path / "p"
    assert run("prepare", "--data", data, "--out_dir", out) == 0
    assert (out / "train.txt").exists()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "graphcf.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
