import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from safepd.cli import EXIT_ABORT, EXIT_OK, EXIT_USAGE, main
from safepd.tabular import generate_verification_cmdp, tabular_to_dict

TINY = """
training: {iterations: 40, batch_size: 4, estimator: full-reinforce, seed: 2}
policy: {rbf_spacing: 2.5, rbf_sigma: 1.0}
evaluation: {every: 40, rollouts: 10, h_eval: 15}
output: {checkpoint_every: 20}
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(TINY)
    return p


def test_train_then_eval(tmp_path, cfg_file, capsys):
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "run")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "lambda_red=" in out and "mean_reward=" in out
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["trace_rows"] == 41
    ck = tmp_path / "run" / "checkpoint_final.json"
    rc = main(["eval", "--config", str(cfg_file), "--checkpoint", str(ck), "--rollouts", "1",
               "--out", str(tmp_path / "e.json")])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["n_rollouts"] == 1
    assert all(c["std"] == 0.0 for c in doc["constraints"])


def test_train_zero_iterations(tmp_path, cfg_file):
    assert main(["train", "--config", str(cfg_file), "--iterations", "0",
                 "--out", str(tmp_path / "r")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == ["checkpoint_final.json",
                                                                  "manifest.json"]


def test_same_seed_same_trace(tmp_path, cfg_file):
    for d in ("a", "b"):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    main(["train", "--config", str(cfg_file), "--seed", "3", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("training:\n  gamma: 2\n")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "bad.yaml:2:" in err and "training.gamma" in err


def test_corrupted_checkpoint(tmp_path, cfg_file, capsys):
    ck = tmp_path / "ck.json"
    ck.write_text('{"format": "safepd-policy", "theta": [1, 2')
    out = tmp_path / "e.json"
    rc = main(["eval", "--config", str(cfg_file), "--checkpoint", str(ck), "--out", str(out)])
    assert rc == EXIT_USAGE
    assert "corrupted" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_non_finite_abort_keeps_partial_trace(tmp_path):
    p = tmp_path / "boom.yaml"
    p.write_text(TINY.replace("estimator: full-reinforce", "estimator: full-reinforce, eta_theta: 1.0e+308"))
    rc = main(["train", "--config", str(p), "--out", str(tmp_path / "r")])
    assert rc == EXIT_ABORT
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["status"] == "aborted"
    assert (tmp_path / "r" / "trace.csv").read_text().startswith("# safepd-trace")


def test_trained_policy_beats_zero_policy(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(TINY.replace("iterations: 40", "iterations: 300"))
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
    main(["train", "--config", str(cfg), "--iterations", "0", "--out", str(tmp_path / "zero")])
    res = {}
    for name in ("run", "zero"):
        out = tmp_path / f"{name}.json"
        main(["eval", "--config", str(cfg), "--rollouts", "400", "--h-eval", "50",
              "--checkpoint", str(tmp_path / name / "checkpoint_final.json"), "--out", str(out)])
        res[name] = json.loads(out.read_text())
    a, b = res["run"], res["zero"]
    k = "mean_reward_per_step"
    se = np.hypot(a[k + "_std"], b[k + "_std"]) / np.sqrt(400)
    assert a[k] - b[k] > 3 * se


def test_oracle_shipped_instance(capsys):
    assert main(["oracle"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "status=PASS" in out


def test_oracle_unconstrained_and_infeasible(tmp_path, capsys):
    doc = tabular_to_dict(generate_verification_cmdp(seed=3, n_states=2))
    for name, c in (("free", 0.0), ("infeasible", 11.0)):
        doc["thresholds"] = [c]
        (tmp_path / f"{name}.yaml").write_text(yaml.safe_dump(doc))
    assert main(["oracle", str(tmp_path / "free.yaml"), "--resolution", "20"]) == EXIT_OK
    assert "gap=0.0" in capsys.readouterr().out
    assert main(["oracle", str(tmp_path / "infeasible.yaml"), "--resolution", "20"]) == EXIT_OK
    assert "status=INFEASIBLE" in capsys.readouterr().out


def test_oracle_bad_instance(tmp_path):
    (tmp_path / "x.yaml").write_text("format_version: 1\n")
    assert main(["oracle", str(tmp_path / "x.yaml")]) == EXIT_USAGE


def test_ablate_single_index(tmp_path, cfg_file, capsys):
    rc = main(["ablate", "--config", str(cfg_file), "--index", "4", "--out", str(tmp_path / "a")])
    assert rc == EXIT_OK
    doc = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert list(doc["improvement"]) == ["purple"]
    assert "improvement_purple=" in capsys.readouterr().out
    assert main(["ablate", "--config", str(cfg_file), "--index", "9"]) == EXIT_USAGE


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["eval", "--checkpoint", "x", "--seed", "-1"])


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "safepd.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("train", "eval", "oracle", "ablate"):
        assert cmd in out
