import json
import shutil
import subprocess
import sys

import gmf.cli as cli


def _write(tmp_path, **cfg):
    base = {"experiment": "em_order", "model": {"name": "ou_scalar", "params": {}}, "N": [1], "k": [8, 16],
            "T": 1.0, "replications": 20, "seed": 0, "out_dir": str(tmp_path / "out")}
    base.update(cfg)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base))
    return path


def test_run_writes_artifacts(tmp_path, capsys):
    assert cli.main(["run", str(_write(tmp_path))]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "strong_order" in out
    assert (tmp_path / "out" / "result.csv").exists()
    assert (tmp_path / "out" / "manifest.txt").exists()


def test_run_out_override(tmp_path):
    assert cli.main(["run", str(_write(tmp_path)), "--out", str(tmp_path / "other"), "--workers", "2"]) == 0
    assert (tmp_path / "other" / "result.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", str(_write(tmp_path, bogus=1))]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_divergence_exit_code(tmp_path):
    path = _write(tmp_path, experiment="sgd_demo", N=[4], k=[8], replications=1,
                  model={"name": "sgd_quadratic", "params": {"alpha2": 1e80}})
    assert cli.main(["run", str(path)]) == cli.EXIT_DIVERGED


def test_selftest(capsys):
    assert cli.main(["selftest", "--instances", "30", "--pairs", "20"]) == cli.EXIT_OK
    assert "selftest passed" in capsys.readouterr().out


def test_selftest_failure_exit_code(monkeypatch):
    monkeypatch.setattr(cli, "ot_selftest", lambda *a: {"failures": 1.0})
    assert cli.main(["selftest"]) == cli.EXIT_SELFTEST


def test_run_ot_selftest_failure_exit_code(tmp_path, monkeypatch):
    import gmf.experiments as experiments

    monkeypatch.setattr(experiments, "ot_selftest", lambda *a: {"oracle_matches": 0.0, "failures": 3.0})
    assert cli.main(["run", str(_write(tmp_path, experiment="ot_selftest", model={"name": "consensus_only"}))]) == 4


def test_info(capsys):
    assert cli.main(["info", "sgd_quadratic"]) == 0
    assert "default params" in capsys.readouterr().out
    assert cli.main(["info"]) == 0
    assert "cosine" in capsys.readouterr().out
    assert cli.main(["info", "product"]) == 0
    assert cli.main(["info", "nope"]) == cli.EXIT_CONFIG


def test_console_script(tmp_path):
    exe = shutil.which("gmf")
    cmd = [exe] if exe else [sys.executable, "-m", "gmf.cli"]
    done = subprocess.run(cmd + ["info", "consensus_only"], capture_output=True, text=True)
    assert done.returncode == 0
    assert "consensus_only" in done.stdout
