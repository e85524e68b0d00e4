import dataclasses
import filecmp

import numpy as np
import pytest

from icplab import metrics
from icplab.data import CONTINUOUS_COLUMNS, apply_scaler, fit_scaler
from icplab.experiment import (DEFAULT_EPSILONS, DEFAULT_GRIDS, ConfigError, ExperimentConfig,
                               ExperimentError, IncompleteTableError, ResultsTable,
                               aggregate_experiment, config_to_ini, conformity_overlap_study,
                               find_aggregate, parse_config, run_experiment, run_repetition,
                               write_outputs)
from icplab.icp import conformity_scores
from icplab.mlp import TrainConfig
from icplab.synthetic import make_covtype_like

FAST = TrainConfig(epochs=3)


@pytest.fixture(scope="module")
def small():
    return make_covtype_like(60, seed=2)


def cfg(**kw):
    base = dict(protocol="A", grid=(100,), epsilons=(0.2, 0.1), repetitions=2, test_size=80,
                per_class=40, train=FAST)
    base.update(kw)
    return ExperimentConfig(**base)


def test_defaults():
    assert DEFAULT_EPSILONS == (0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.025, 0.01)
    assert DEFAULT_GRIDS["A"][0] == 500 and DEFAULT_GRIDS["A"][-1] == 13400
    assert DEFAULT_GRIDS["B"] == tuple(range(250, 6501, 250))
    assert DEFAULT_GRIDS["C"] == (0, 250, 500, 750, 1000, 1250, 1500, 1750, 2000)
    c = ExperimentConfig("A", DEFAULT_GRIDS["A"]).validate()
    assert c.repetitions == 200 and c.n_balanced == 19229 and c.test_size == 5329


def test_default_grids_are_feasible():
    for p in "ABC":
        ExperimentConfig(p, DEFAULT_GRIDS[p]).validate()


def test_single_row_contract(small):
    t = run_experiment(cfg(repetitions=1, epsilons=(0.2,)), small)
    assert len(t.records) == 1
    r = t.records[0]
    assert (r.n_train, r.n_cal, r.n_test, r.overlap) == (100, 280 - 80 - 100, 80, 0)


def test_row_count_and_order(small):
    c = cfg(grid=(60, 100), repetitions=3)
    t = run_experiment(c, small)
    assert len(t.records) == 2 * 2 * 3
    keys = [(r.grid_value, r.repetition, r.epsilon) for r in t.records]
    assert keys == [(g, rep, e) for g in (60, 100) for rep in range(3) for e in (0.2, 0.1)]


def test_protocol_a_calibration_size_follows_train(small):
    t = run_experiment(cfg(grid=(199,), epsilons=(0.2,)), small)
    assert {r.n_cal for r in t.records} == {280 - 80 - 199}


def test_per_run_nestedness(small):
    c = cfg(epsilons=(0.6, 0.4, 0.2, 0.1, 0.05), repetitions=2)
    t = run_experiment(c, small)
    for rep in range(2):
        rows = [r for r in t.records if r.repetition == rep]
        cov = [r.coverage for r in rows]
        wid = [r.width for r in rows]
        # epsilons listed in decreasing order, so both must be non-decreasing
        assert all(a <= b for a, b in zip(cov, cov[1:]))
        assert all(a <= b for a, b in zip(wid, wid[1:]))
        for r in rows:
            assert r.diff == abs(r.bias)


def test_deterministic_csv(small, tmp_path):
    c = cfg()
    a, b = run_experiment(c, small), run_experiment(c, small)
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)


def test_seed_isolation(small):
    two = run_experiment(cfg(repetitions=2), small)
    three = run_experiment(cfg(repetitions=3), small)
    assert three.records[:4] == two.records
    # a different grid neighbour does not change this grid value's runs
    both = run_experiment(cfg(grid=(60, 100), repetitions=2), small)
    assert both.select(100) == two.select(100)
    # distinct repetitions really differ
    assert two.records[0].coverage != two.records[2].coverage or \
        two.records[0].mean_alpha != two.records[2].mean_alpha


def test_workers_do_not_change_output(small):
    c = cfg(grid=(60, 100), repetitions=2)
    assert run_experiment(c, small, workers=2).records == run_experiment(c, small).records


def test_fixed_balanced_pool(small):
    c = cfg(fixed_balanced_pool=True, save_partitions=True)
    t = run_experiment(c, small)
    sources = [src for _, src in t.partitions.values()]
    np.testing.assert_array_equal(sources[0], sources[1])
    redraw = run_experiment(cfg(save_partitions=True), small)
    s0, s1 = [src for _, src in redraw.partitions.values()]
    assert not np.array_equal(s0, s1)


def test_stage_error_carries_coordinates(small):
    # a huge learning rate makes the loss overflow in the first epoch
    c = cfg(train=TrainConfig(learning_rate=1e200, epochs=2), repetitions=1)
    with pytest.raises(ExperimentError) as exc:
        run_experiment(c, small)
    assert exc.value.grid_value == 100 and exc.value.repetition == 0
    assert "grid value 100, repetition 0" in str(exc.value)


def test_stage_error_from_worker(small):
    c = cfg(train=TrainConfig(learning_rate=1e200, epochs=2), grid=(60, 100))
    with pytest.raises(ExperimentError) as exc:
        run_experiment(c, small, workers=2)
    assert exc.value.protocol == "A"


def test_undersized_data_fails_before_training(small):
    with pytest.raises(Exception, match="class"):
        run_experiment(cfg(per_class=61, test_size=80), small)


def test_b_and_c_shape_consistency(small):
    b = run_experiment(cfg(protocol="B", grid=(50,), overlap=0, repetitions=1, save_partitions=True),
                       small)
    c = run_experiment(cfg(protocol="C", grid=(0,), pool=100, repetitions=1, save_partitions=True),
                       small)
    for t in (b, c):
        (part, _), = t.partitions.values()
        assert part.overlap_size == 0
        assert part.train_idx.size == part.cal_idx.size == 50
        assert np.intersect1d(part.train_idx, part.cal_idx).size == 0


def test_total_overlap_alpha_is_training_score_mean(small):
    c = cfg(protocol="C", grid=(100,), pool=100, repetitions=1)
    res = run_repetition(c, small, 100, 0, keep_model=True)
    part = res.partition
    np.testing.assert_array_equal(part.train_idx, part.cal_idx)
    pool = small.subset(res.source_index)
    train = pool.subset(part.train_idx)
    train = apply_scaler(fit_scaler(train, CONTINUOUS_COLUMNS), train)
    expect = conformity_scores(res.model, train.X, train.y).mean()
    assert res.records[0].mean_alpha == pytest.approx(expect, rel=1e-12)


def test_overlap_study_trend():
    data = make_covtype_like(250, seed=5)
    c = ExperimentConfig("C", grid=(0, 800), epsilons=(0.2,), repetitions=3, test_size=300,
                         per_class=250, pool=800, train=TrainConfig(epochs=25))
    summary = conformity_overlap_study(c, data)
    assert summary[800].mean > summary[0].mean
    assert summary[0].formula_id == metrics.FORMULA_SD


def test_overlap_study_requires_c_and_grid(small):
    with pytest.raises(ConfigError):
        conformity_overlap_study(cfg(), small)
    with pytest.raises(ConfigError):
        conformity_overlap_study(cfg(protocol="C", grid=()), small)


def test_aggregate_rows(small):
    t = run_experiment(cfg(grid=(60, 100), repetitions=3), small)
    rows = aggregate_experiment(t)
    assert len(rows) == 2 * 2 * 4 * 2
    diffs = [r.diff for r in t.select(60, 0.2)]
    agg = find_aggregate(rows, 60, 0.2, "diff")
    assert agg == metrics.aggregate(diffs, "diff")
    assert find_aggregate(rows, 60, 0.2, "mean_alpha", metrics.FORMULA_SD).n_runs == 3


def test_aggregate_hand_values():
    from icplab.experiment import RunRecord
    recs = [RunRecord("A", 5, 0.2, r, 0.8, 0.0, d, 1.0, 0.5, 1, 1, 1, 0)
            for r, d in enumerate([0.1, 0.2, 0.3])]
    t = ResultsTable("A", (5,), (0.2,), (0, 1, 2), recs)
    s = find_aggregate(aggregate_experiment(t), 5, 0.2, "diff")
    assert s.mean == pytest.approx(0.2, abs=1e-15)
    w = find_aggregate(aggregate_experiment(t), 5, 0.2, "width")
    assert w.ci_low == w.ci_high == 1.0


def test_aggregate_single_repetition_fails(small):
    t = run_experiment(cfg(repetitions=1), small)
    with pytest.raises(ValueError, match="at least 2"):
        aggregate_experiment(t)


def test_aggregate_incomplete_lists_missing(small):
    t = run_experiment(cfg(), small)
    t = dataclasses.replace(t, records=t.records[:-1])
    with pytest.raises(IncompleteTableError) as exc:
        aggregate_experiment(t)
    assert exc.value.missing == [(100, 0.1, 1)]


def test_raw_csv_roundtrip(small, tmp_path):
    t = run_experiment(cfg(), small)
    t.write_csv(tmp_path / "raw.csv")
    back = ResultsTable.read_csv(tmp_path / "raw.csv")
    assert back.records == t.records
    assert (back.grid, back.epsilons, back.repetitions) == (t.grid, t.epsilons, t.repetitions)


def test_write_outputs_layout(small, tmp_path):
    c = cfg(save_partitions=True)
    t = run_experiment(c, small)
    out = write_outputs(tmp_path / "o", c, t, aggregate_experiment(t))
    names = sorted(p.name for p in out.iterdir())
    assert names == ["aggregate.csv", "config.echo", "partitions", "raw.csv"]
    assert sorted(p.name for p in (out / "partitions").iterdir()) == \
        ["grid100_rep0.csv", "grid100_rep1.csv"]
    assert parse_config((out / "config.echo").read_text()) == dataclasses.replace(
        c, train=dataclasses.replace(FAST, seed=0))


SMOKE = """
[experiment]
protocol = a
grid = 100
epsilons = 0.2, 0.1
repetitions = 2
test_size = 80
per_class = 40

[training]
epochs = 3
learning_rate = 0.05
"""


def test_parse_config():
    c = parse_config(SMOKE)
    assert c.protocol == "A" and c.grid == (100,) and c.epsilons == (0.2, 0.1)
    assert c.train == TrainConfig(epochs=3)
    assert parse_config(config_to_ini(c)) == c


def test_parse_config_default_grid():
    c = parse_config("[experiment]\nprotocol = C\n")
    assert c.grid == DEFAULT_GRIDS["C"] and c.epsilons == DEFAULT_EPSILONS


@pytest.mark.parametrize("text, field", [
    (SMOKE.replace("0.2, 0.1", "1.5"), "epsilons"),
    (SMOKE.replace("protocol = a", "protocol = D"), "protocol"),
    (SMOKE.replace("repetitions = 2", "repetitions = 0"), "repetitions"),
    (SMOKE.replace("repetitions = 2", "repetitions = two"), "repetitions"),
    (SMOKE.replace("grid = 100", "grid = 100, 100"), "grid"),
    (SMOKE.replace("grid = 100", "grid = 5000"), "grid"),
    (SMOKE.replace("epochs = 3", "epochs = 0"), "training"),
    (SMOKE.replace("epochs = 3", "momentum = 0.9"), "training.momentum"),
    (SMOKE + "\n[experiment]\n", "file"),
    ("[experiment]\nprotocol = A\nbogus = 1\n", "bogus"),
    ("[other]\nx = 1\n", "experiment"),
])
def test_config_errors_name_field(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field


def test_c_grid_parity_is_validated():
    with pytest.raises(ConfigError, match="even"):
        ExperimentConfig("C", grid=(250, 251)).validate()


def test_errors_survive_pickling():
    import pickle
    from icplab.data import InsufficientClassError, ParseError
    from icplab.mlp import TrainingDivergence
    errs = [TrainingDivergence(3, float("inf")), ParseError(7, "bad"),
            InsufficientClassError(2, 1, 5), ConfigError("grid", "empty grid"),
            IncompleteTableError([(1, 0.2, 0)]),
            ExperimentError("C", 250, 4, TrainingDivergence(1, float("nan")))]
    for e in errs:
        back = pickle.loads(pickle.dumps(e))
        assert type(back) is type(e) and str(back) == str(e)


def test_config_comments_and_continuation_lines():
    c = parse_config("[experiment]\nprotocol = B   # fixed overlap\ngrid = 250, 500,\n"
                     "    750\n; comment line\noverlap = 0\n")
    assert c.grid == (250, 500, 750) and c.overlap == 0


def test_shipped_configs_are_valid():
    from pathlib import Path
    from icplab.experiment import load_config
    root = Path(__file__).resolve().parents[1] / "configs"
    found = sorted(root.glob("*.ini"))
    assert found
    for p in found:
        load_config(p)
