import csv
import json
import subprocess
import sys

import pytest

from shipems.cli import main
from shipems.config import save_config

from conftest import tiny_run_config


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    save_config(tiny_run_config(), d / "tiny.json")
    return d / "tiny.json"


@pytest.fixture(scope="module")
def profiles(cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("profiles")
    assert main(["generate-profiles", "--config", str(cfg_file), "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(cfg_file, profiles, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--config", str(cfg_file), "--profiles", str(profiles), "--out", str(out)]) == 0
    return out


def test_generate_layout(profiles):
    man = json.loads((profiles / "manifest.json").read_text())
    assert man["seed"] == 3
    assert len(man["train"]) == 8 and len(man["validation"]) == 2
    assert (profiles / "validation" / f"{man['validation'][0]}.csv").exists()


def test_train_outputs(trained, capsys):
    assert json.loads((trained / "summary.json").read_text())["best_checkpoint"].endswith("best")
    assert (trained / "learning_curve.png").stat().st_size > 0


def test_evaluate_two_checkpoints(cfg_file, profiles, trained, tmp_path, capsys):
    ck = str(trained / "seed_0" / "best")
    rc = main(["evaluate", "--config", str(cfg_file), "--profiles", str(profiles), "--checkpoint", ck, ck,
               "--names", "uniform", "multi", "--out", str(tmp_path)])
    assert rc == 0
    assert "Sum" in capsys.readouterr().out
    head = next(csv.reader(open(tmp_path / "report.csv")))
    assert "cost_ratio_pct_multi" in head


def test_evaluate_baseline(cfg_file, profiles, tmp_path):
    assert main(["evaluate", "--config", str(cfg_file), "--profiles", str(profiles), "--out", str(tmp_path)]) == 0
    assert "cost_usd_zero_action" in (tmp_path / "report.csv").read_text()


def test_benchmark(cfg_file, profiles, trained, tmp_path, capsys):
    ck = str(trained / "seed_0" / "best")
    rc = main(["benchmark", "--config", str(cfg_file), "--profiles", str(profiles), "--checkpoint", ck,
               "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "DDP" in out and "TD3 uniform" in out


def test_gradcheck(tmp_path, capsys):
    assert main(["gradcheck", "--nets", "6", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert "networks checked" in capsys.readouterr().out
    assert len((tmp_path / "gradcheck.csv").read_text().splitlines()) == 7


def test_dimension_mismatch_exit_code(cfg_file, profiles, trained, tmp_path, capsys):
    ck = str(trained / "seed_0" / "best")
    rc = main(["evaluate", "--config", str(cfg_file), "--clusters", "4", "--profiles", str(profiles),
               "--checkpoint", ck, "--out", str(tmp_path)])
    assert rc == 2
    assert "DimensionMismatchError" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"ship": {"soc_bounds": [0.9, 0.1]}}')
    assert main(["generate-profiles", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error: ConfigError" in capsys.readouterr().err


def test_missing_profiles_dir(cfg_file, tmp_path, capsys):
    assert main(["benchmark", "--config", str(cfg_file), "--profiles", str(tmp_path / "nope"),
                 "--out", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_missing_checkpoint(cfg_file, profiles, tmp_path):
    assert main(["evaluate", "--config", str(cfg_file), "--profiles", str(profiles),
                 "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "shipems.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("generate-profiles", "train", "evaluate", "benchmark", "gradcheck"):
        assert cmd in r.stdout


def test_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
