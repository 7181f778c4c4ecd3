import shutil
from pathlib import Path

import pytest

from riskrct import cli
from riskrct.domain import read_header

SMALL = """
[simulation]
population = 1200
horizon_days = 100

[gat]
epochs = 20

[gbdt]
rounds = 20

[trial]
duration_days = 8
follow_up_days = 42

[pipeline]
top_k = 20
threshold = 0.6

[analysis]
windows = 1-14,15-28,29-42
"""
STAGES = ("simulate", "train", "trial", "analyze", "report")


def run_all(config, out):
    for stage in STAGES:
        assert cli.main([stage, "--config", str(config), "--out", str(out)]) == 0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.ini"
    config.write_text(SMALL)
    run_all(config, root / "a")
    run_all(config, root / "b")
    return root, config


def test_all_outputs_written(runs):
    root, _ = runs
    for name in cli.FILES.values():
        assert (root / "a" / name).exists(), name
    leftovers = [p.name for p in (root / "a").iterdir() if p.name not in cli.FILES.values()]
    assert leftovers == []


def test_runs_are_byte_identical(runs):
    root, _ = runs
    for name in cli.FILES.values():
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes(), name


def test_headers_carry_config_hash(runs):
    root, config = runs
    h = read_header(root / "a" / cli.FILES["ledger"])
    assert h["config_hash"] == cli.load_config(config).config_hash()
    assert "Inhibitory effects on violations" in (root / "a" / cli.FILES["report"]).read_text()


def test_missing_input_exits_2(tmp_path, runs):
    _, config = runs
    assert cli.main(["trial", "--config", str(config), "--out", str(tmp_path / "none")]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 2


def test_invalid_config_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[pipeline]\nthreshold = 1.5\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 3
    assert "pipeline.threshold" in capsys.readouterr().err
    assert cli.main(["simulate", "--top-k", "0", "--out", str(tmp_path)]) == 3


def test_mismatched_inputs_exit_4(tmp_path, runs):
    root, config = runs
    out = tmp_path / "copy"
    shutil.copytree(root / "a", out)
    other = tmp_path / "other.ini"
    other.write_text(SMALL.replace("top_k = 20", "top_k = 19"))
    assert cli.main(["analyze", "--config", str(other), "--out", str(out)]) == 4


def test_unknown_command_prints_usage(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_failed_stage_leaves_no_partial_files(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(RuntimeError):
        with cli.staged_outputs(out) as tmp:
            tmp("a.txt").write_text("partial")
            raise RuntimeError("boom")
    assert list(out.iterdir()) == []
    with cli.staged_outputs(out) as tmp:
        tmp("a.txt").write_text("whole")
    assert [p.name for p in out.iterdir()] == ["a.txt"]


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
