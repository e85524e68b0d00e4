import csv
import filecmp
import subprocess
import sys

import pytest

from icplab.cli import main
from icplab.data import load_covtype

SMOKE = """[experiment]
protocol = A
grid = 600
epsilons = 0.2, 0.1
repetitions = 2
test_size = 400
per_class = 300
master_seed = 3

[training]
epochs = 4
"""


@pytest.fixture
def smoke_cfg(tmp_path):
    p = tmp_path / "smoke.ini"
    p.write_text(SMOKE)
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_prepare_summary(small_covtype_file, tmp_path, capsys):
    out = tmp_path / "bal.data"
    code = main(["prepare", "--data-path", str(small_covtype_file), "--per-class", "150",
                 "--seed", "4", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "total: 1050" in text
    assert text.count(": 150\n") == 7
    assert load_covtype(out).class_counts.tolist() == [150] * 7


def test_prepare_uses_env_path(small_covtype_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ICPLAB_DATA", str(small_covtype_file))
    assert main(["prepare", "--per-class", "10", "--out", str(tmp_path / "b.data")]) == 0
    assert "total: 70" in capsys.readouterr().out


def test_prepare_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.data"
    assert main(["prepare", "--data-path", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_prepare_too_many_per_class(small_covtype_file, tmp_path, capsys):
    code = main(["prepare", "--data-path", str(small_covtype_file), "--per-class", "401",
                 "--out", str(tmp_path / "x.data")])
    assert code == 3
    assert "401 requested" in capsys.readouterr().err
    assert not (tmp_path / "x.data").exists()


def test_prepare_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.data"
    bad.write_text("1,2,3\n")
    assert main(["prepare", "--data-path", str(bad)]) == 3
    assert "line 1" in capsys.readouterr().err


def test_run_smoke_and_rerun_is_byte_identical(small_covtype_file, smoke_cfg, tmp_path):
    args = ["run", "--config", str(smoke_cfg), "--data-path", str(small_covtype_file),
            "--out-dir", str(tmp_path / "res"), "--timestamp"]
    assert main(args + ["first"]) == 0
    assert main(args + ["second"]) == 0
    a, b = tmp_path / "res" / "A" / "first", tmp_path / "res" / "A" / "second"
    assert len(rows(a / "raw.csv")) == 1 * 2 * 2
    assert len(rows(a / "aggregate.csv")) == 1 * 2 * 4 * 2
    for name in ("raw.csv", "aggregate.csv", "config.echo"):
        assert filecmp.cmp(a / name, b / name, shallow=False)


def test_run_output_root_from_env(small_covtype_file, smoke_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("ICPLAB_OUT", str(tmp_path / "envroot"))
    cfg = smoke_cfg.read_text().replace("repetitions = 2", "repetitions = 1")
    smoke_cfg.write_text(cfg)
    code = main(["run", "--config", str(smoke_cfg), "--data-path", str(small_covtype_file),
                 "--timestamp", "t"])
    assert code == 0
    out = tmp_path / "envroot" / "A" / "t"
    assert (out / "raw.csv").exists() and not (out / "aggregate.csv").exists()


def test_run_invalid_epsilon_names_field(smoke_cfg, tmp_path, capsys):
    smoke_cfg.write_text(SMOKE.replace("0.2, 0.1", "1.5"))
    code = main(["run", "--config", str(smoke_cfg), "--data-path", str(tmp_path / "unused"),
                 "--out-dir", str(tmp_path / "res")])
    assert code == 3
    assert "epsilons" in capsys.readouterr().err
    assert not (tmp_path / "res").exists()


def test_run_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.ini")]) == 2


def test_run_runtime_failure(small_covtype_file, smoke_cfg, tmp_path, capsys):
    smoke_cfg.write_text(SMOKE + "learning_rate = 1e200\n")
    code = main(["run", "--config", str(smoke_cfg), "--data-path", str(small_covtype_file),
                 "--out-dir", str(tmp_path / "res")])
    assert code == 4
    assert "grid value 600, repetition 0" in capsys.readouterr().err


def test_validate_config(smoke_cfg, capsys):
    assert main(["validate-config", "--config", str(smoke_cfg)]) == 0
    assert "ok: protocol A" in capsys.readouterr().out
    smoke_cfg.write_text(SMOKE.replace("grid = 600", "grid = 5000"))
    assert main(["validate-config", "--config", str(smoke_cfg)]) == 3


@pytest.fixture
def finished_run(small_covtype_file, smoke_cfg, tmp_path):
    smoke_cfg.write_text(SMOKE.replace("grid = 600", "grid = 300, 600"))
    main(["run", "--config", str(smoke_cfg), "--data-path", str(small_covtype_file),
          "--out-dir", str(tmp_path / "res"), "--timestamp", "t"])
    return tmp_path / "res" / "A" / "t"


def test_aggregate_reproduces_run_output(finished_run, tmp_path):
    out = tmp_path / "again.csv"
    assert main(["aggregate", "--raw", str(finished_run / "raw.csv"), "--out", str(out)]) == 0
    assert filecmp.cmp(out, finished_run / "aggregate.csv", shallow=False)


def test_aggregate_incomplete_raw(finished_run, tmp_path, capsys):
    lines = (finished_run / "raw.csv").read_text().splitlines(keepends=True)
    bad = tmp_path / "raw.csv"
    bad.write_text("".join(lines[:-1]))
    assert main(["aggregate", "--raw", str(bad)]) == 3
    assert "missing" in capsys.readouterr().err


def test_plot_points_band_and_zero_line(finished_run, tmp_path):
    out = tmp_path / "plots"
    code = main(["plot", "--aggregate", str(finished_run / "aggregate.csv"), "--statistic", "bias",
                 "--epsilon", "0.2", "--out-dir", str(out)])
    assert code == 0
    svg = (out / "A_bias_eps0.2.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count('class="point"') == 2
    assert svg.count('class="ci-band"') == 1
    assert 'class="zero-line"' in svg


def test_plot_width_has_no_zero_line(finished_run, tmp_path):
    out = tmp_path / "plots"
    assert main(["plot", "--aggregate", str(finished_run / "aggregate.csv"), "--statistic", "width",
                 "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["A_width_eps0.1.svg", "A_width_eps0.2.svg"]
    assert 'class="zero-line"' not in (out / names[0]).read_text()


def test_plot_mean_alpha_single_chart(finished_run, tmp_path):
    out = tmp_path / "plots"
    assert main(["plot", "--aggregate", str(finished_run / "aggregate.csv"),
                 "--statistic", "mean_alpha", "--out-dir", str(out)]) == 0
    assert [p.name for p in out.iterdir()] == ["A_mean_alpha.svg"]


def test_plot_empty_csv_writes_nothing(tmp_path, capsys):
    empty = tmp_path / "aggregate.csv"
    empty.write_text("")
    out = tmp_path / "plots"
    assert main(["plot", "--aggregate", str(empty), "--statistic", "diff",
                 "--out-dir", str(out)]) == 3
    assert "empty" in capsys.readouterr().err
    assert not out.exists()


def test_plot_missing_columns(tmp_path):
    bad = tmp_path / "aggregate.csv"
    bad.write_text("protocol,mean\nA,0.1\n")
    assert main(["plot", "--aggregate", str(bad), "--statistic", "diff",
                 "--out-dir", str(tmp_path / "p")]) == 3


def test_plot_unknown_epsilon_writes_nothing(finished_run, tmp_path):
    out = tmp_path / "plots"
    assert main(["plot", "--aggregate", str(finished_run / "aggregate.csv"), "--statistic", "diff",
                 "--epsilon", "0.2", "--epsilon", "0.33", "--out-dir", str(out)]) == 3
    assert not out.exists()


def test_module_entry_point(smoke_cfg):
    proc = subprocess.run([sys.executable, "-m", "icplab.cli", "validate-config",
                           "--config", str(smoke_cfg)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("ok:")
