import os
import subprocess
import sys

import numpy as np
import pytest

import semadv.dataio as dataio
import semadv.runconfig as rc
from semadv.cli import main


def run_cli(args):
    return main(args)


@pytest.fixture(scope="module")
def ckpt_dir(tmp_path_factory):
    """Checkpoints for CLI runs, reusing the session-trained fixtures."""
    d = tmp_path_factory.mktemp("ckpts")
    return d


def save_fixture_ckpts(d, std_victim, aux_classifier, surrogate_classifier):
    if not (d / "victim.ckpt").exists():
        dataio.save_checkpoint(d / "victim.ckpt", std_victim)
        dataio.save_checkpoint(d / "aux.ckpt", aux_classifier)
        dataio.save_checkpoint(d / "surrogate.ckpt", surrogate_classifier)


def write_tiny_config(path, **attack_overrides):
    cfg = rc.default_config()
    cfg["attack"].update(dict(m_samples=10, n_final=3, kappa=0.5, distance="l2sq",
                              objective="cw", c1=5.0, step_size=0.05, n_steps=8,
                              chunk=5), **attack_overrides)
    cfg["ebm"].update(dict(steps=2, batch_size=2, lmc_steps=2))
    cfg["victim"].update(dict(learning_rate=1e-3, batch_size=32, epochs=1, subset=120))
    cfg["aux"].update(dict(epochs=1, subset=80))
    cfg["pgd"].update(dict(steps=5))
    rc.save(path, cfg)
    return cfg


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["fly-to-the-moon"])
    assert e.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["selftest", "--frobnicate"])
    assert e.value.code == 2


def test_missing_checkpoint_is_diagnostic_exit_1(tmp_path, capsys):
    code = main(["attack", "--victim", str(tmp_path / "nope.ckpt"),
                 "--aux", str(tmp_path / "nope2.ckpt"),
                 "--source-class", "7", "--target", "9", "--out", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_train_classifier_subcommand(tmp_path):
    cfg_path = tmp_path / "c.toml"
    write_tiny_config(cfg_path)
    code = main(["train-classifier", "--config", str(cfg_path), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "victim.ckpt").exists()


def test_attack_deterministic_reports(tmp_path, std_victim, aux_classifier,
                                      surrogate_classifier):
    save_fixture_ckpts(tmp_path, std_victim, aux_classifier, surrogate_classifier)
    cfg_path = tmp_path / "c.toml"
    write_tiny_config(cfg_path)
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["attack", "--victim", str(tmp_path / "victim.ckpt"),
                     "--aux", str(tmp_path / "aux.ckpt"),
                     "--source-class", "7", "--target", "9",
                     "--config", str(cfg_path), "--seed", "7", "--out", str(out)])
        assert code == 0
        outs.append((out / "attack-7-to-9.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_grid_smoke_emits_matrix_and_grids(tmp_path, std_victim, aux_classifier,
                                           surrogate_classifier):
    save_fixture_ckpts(tmp_path, std_victim, aux_classifier, surrogate_classifier)
    cfg_path = tmp_path / "c.toml"
    write_tiny_config(cfg_path)
    out = tmp_path / "grid"
    code = main(["grid", "--victim", str(tmp_path / "victim.ckpt"),
                 "--aux", str(tmp_path / "aux.ckpt"),
                 "--surrogate", str(tmp_path / "surrogate.ckpt"),
                 "--classes", "3,5", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    matrix = (out / "success-matrix.csv").read_text().strip().splitlines()
    assert len(matrix) == 3  # header + two source rows
    assert (out / "grid-report.jsonl").exists()


def test_eval_on_refined_tensors(tmp_path, std_victim, aux_classifier,
                                 surrogate_classifier, digits):
    save_fixture_ckpts(tmp_path, std_victim, aux_classifier, surrogate_classifier)
    _, _, Xte, yte = digits
    refined_dir = tmp_path / "refined"
    refined_dir.mkdir(exist_ok=True)
    dataio.save_tensor(refined_dir / "refined-3-to-5.saet",
                       Xte[yte == 3][:4].astype(np.float32))
    code = main(["eval", "--surrogate", str(tmp_path / "surrogate.ckpt"),
                 "--refined-dir", str(refined_dir), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "eval.jsonl").exists()


def test_pgd_baseline_subcommand(tmp_path, std_victim, aux_classifier,
                                 surrogate_classifier):
    save_fixture_ckpts(tmp_path, std_victim, aux_classifier, surrogate_classifier)
    cfg_path = tmp_path / "c.toml"
    write_tiny_config(cfg_path)
    code = main(["pgd-baseline", "--victim", str(tmp_path / "victim.ckpt"),
                 "--config", str(cfg_path), "--out", str(tmp_path)])
    assert code == 0
    written = [p for p in os.listdir(tmp_path) if p.startswith("pgd-")]
    assert written


def test_sample_victim_subcommand(tmp_path, std_victim, aux_classifier,
                                  surrogate_classifier):
    save_fixture_ckpts(tmp_path, std_victim, aux_classifier, surrogate_classifier)
    cfg_path = tmp_path / "c.toml"
    write_tiny_config(cfg_path)
    code = main(["sample-victim", "--victim", str(tmp_path / "victim.ckpt"),
                 "--target", "4", "--count", "4",
                 "--config", str(cfg_path), "--out", str(tmp_path)])
    assert code == 0
    assert any(p.startswith("pvic-4") for p in os.listdir(tmp_path))


def test_cli_entrypoint_runs_as_module():
    proc = subprocess.run([sys.executable, "-m", "semadv.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "selftest" in proc.stdout
