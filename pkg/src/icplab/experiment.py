"""Repeated-split experiment harness.

For every (grid value, repetition) the pipeline is: undersample to a
balanced pool, split per protocol, fit min-max scaling on the training
part, train the MLP, score the calibration part, and evaluate prediction
sets on the test part at every significance level. One trained model
serves the whole significance grid.

Randomness is derived from ``numpy.random.SeedSequence`` entropy
``[master_seed, ord(protocol), grid_value, repetition]``, so each
repetition is reproducible on its own and independent of execution order
or worker count.
"""

from __future__ import annotations

import configparser
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from icplab import metrics
from icplab.data import (CONTINUOUS_COLUMNS, N_CLASSES, N_FEATURES, Dataset,
                         apply_scaler, fit_scaler, undersample_indices)
from icplab.icp import calibrate, predict_batch
from icplab.mlp import TrainConfig, train_sgd
from icplab.partition import (PartitionError, split_experiment_a,
                              split_experiment_b, split_experiment_c)

logger = logging.getLogger(__name__)

PROTOCOLS = ("A", "B", "C")
CONFIDENCE_LEVELS = (0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.975, 0.99)
DEFAULT_EPSILONS = tuple(round(1.0 - c, 6) for c in CONFIDENCE_LEVELS)
DEFAULT_GRIDS = {
    "A": tuple(range(500, 13001, 500)) + (13400,),
    "B": tuple(range(250, 6501, 250)),
    "C": tuple(range(0, 2001, 250)),
}
GRID_VARIABLE = {"A": "train_size", "B": "set_size", "C": "shared"}

RAW_COLUMNS = ("protocol", "grid_value", "epsilon", "repetition", "coverage", "bias",
               "diff", "width", "mean_alpha", "n_train", "n_cal", "n_test", "overlap")
AGGREGATE_COLUMNS = ("protocol", "grid_variable", "grid_value", "epsilon", "statistic",
                     "mean", "ci_low", "ci_high", "n_runs", "formula_id")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message

    def __reduce__(self):
        return (type(self), (self.field, self.message))


class ExperimentError(RuntimeError):
    def __init__(self, protocol, grid_value, repetition, cause):
        super().__init__(
            f"protocol {protocol}, grid value {grid_value}, repetition {repetition}: "
            f"{type(cause).__name__}: {cause}"
        )
        self.protocol = protocol
        self.grid_value = grid_value
        self.repetition = repetition
        self._cause = cause

    def __reduce__(self):
        # crosses process boundaries when raised inside a worker
        return (type(self), (self.protocol, self.grid_value, self.repetition, self._cause))


class IncompleteTableError(ValueError):
    def __init__(self, missing):
        shown = ", ".join(f"(grid={g}, eps={e}, rep={r})" for g, e, r in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        super().__init__(f"{len(missing)} missing result rows: {shown}{more}")
        self.missing = missing

    def __reduce__(self):
        return (type(self), (self.missing,))


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    grid: tuple = ()
    epsilons: tuple = DEFAULT_EPSILONS
    repetitions: int = 200
    master_seed: int = 0
    test_size: int = 5329
    per_class: int = 2747
    overlap: int = 250
    pool: int = 2000
    fixed_balanced_pool: bool = False
    save_partitions: bool = False
    workers: int = 1
    data_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"must be one of {PROTOCOLS}, got {self.protocol!r}")
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))

    @property
    def n_balanced(self) -> int:
        return self.per_class * N_CLASSES

    def validate(self) -> "ExperimentConfig":
        if not self.grid:
            raise ConfigError("grid", "empty grid")
        if len(set(self.grid)) != len(self.grid):
            raise ConfigError("grid", "duplicate grid values")
        if not self.epsilons:
            raise ConfigError("epsilons", "no significance levels")
        for e in self.epsilons:
            if not 0.0 < e < 1.0:
                raise ConfigError("epsilons", f"{e} outside (0, 1)")
        if self.repetitions < 1:
            raise ConfigError("repetitions", "must be >= 1")
        if self.master_seed < 0:
            raise ConfigError("master_seed", "must be >= 0")
        if self.per_class < 1:
            raise ConfigError("per_class", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        rng = np.random.default_rng(0)
        for g in self.grid:
            try:
                split(self, g, rng)
            except PartitionError as exc:
                raise ConfigError("grid", f"value {g}: {exc}") from None
        return self


def split(config: ExperimentConfig, grid_value: int, rng: np.random.Generator):
    n = config.n_balanced
    if config.protocol == "A":
        return split_experiment_a(n, config.test_size, grid_value, rng)
    if config.protocol == "B":
        return split_experiment_b(n, config.test_size, grid_value, config.overlap, rng)
    return split_experiment_c(n, config.test_size, config.pool, grid_value, rng)


# --- config files ---------------------------------------------------------

_INT_KEYS = ("repetitions", "master_seed", "test_size", "per_class", "overlap", "pool", "workers")
_BOOL_KEYS = ("fixed_balanced_pool", "save_partitions")


def _parse_list(field_name, text, cast):
    try:
        return tuple(cast(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(field_name, f"cannot parse {text!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Build a validated config from INI text (sections [experiment], [training])."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from None
    if not cp.has_section("experiment"):
        raise ConfigError("experiment", "missing [experiment] section")
    sec = cp["experiment"]
    known = {"protocol", "grid", "epsilons", "data_path", *_INT_KEYS, *_BOOL_KEYS}
    for key in sec:
        if key not in known:
            raise ConfigError(key, "unknown key")
    if "protocol" not in sec:
        raise ConfigError("protocol", "required")
    protocol = sec["protocol"].strip().upper()
    kw = {"protocol": protocol}
    kw["grid"] = (_parse_list("grid", sec["grid"], int) if "grid" in sec
                  else DEFAULT_GRIDS.get(protocol, ()))
    if "epsilons" in sec:
        kw["epsilons"] = _parse_list("epsilons", sec["epsilons"], float)
    for key in _INT_KEYS:
        if key in sec:
            try:
                kw[key] = sec.getint(key)
            except ValueError:
                raise ConfigError(key, f"not an integer: {sec[key]!r}") from None
    for key in _BOOL_KEYS:
        if key in sec:
            try:
                kw[key] = sec.getboolean(key)
            except ValueError:
                raise ConfigError(key, f"not a boolean: {sec[key]!r}") from None
    if sec.get("data_path", "").strip():
        kw["data_path"] = sec["data_path"].strip()
    if cp.has_section("training"):
        tsec = cp["training"]
        tkw = {}
        casts = {"learning_rate": float, "epochs": int, "batch_size": int, "init": str}
        for key in tsec:
            if key not in casts:
                raise ConfigError(f"training.{key}", "unknown key")
            try:
                tkw[key] = casts[key](tsec[key].strip())
            except ValueError:
                raise ConfigError(f"training.{key}", f"cannot parse {tsec[key]!r}") from None
        try:
            kw["train"] = TrainConfig(**tkw)
        except ValueError as exc:
            raise ConfigError("training", str(exc)) from None
    return ExperimentConfig(**kw).validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_to_ini(config: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for f in fields(config):
        if f.name == "train":
            continue
        value = getattr(config, f.name)
        if f.name in ("grid", "epsilons"):
            value = ", ".join(repr(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        elif value is None:
            value = ""
        lines.append(f"{f.name} = {value}")
    lines.append("")
    lines.append("[training]")
    for key, value in asdict(config.train).items():
        if key != "seed":
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --- running ----------------------------------------------------------------

def child_seed(master_seed: int, protocol: str, grid_value: int, repetition: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, ord(protocol), grid_value, repetition])


def fixed_pool_indices(config: ExperimentConfig, data: Dataset) -> np.ndarray:
    """The single balanced pool used by every repetition when ``fixed_balanced_pool`` is set."""
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed]))
    return undersample_indices(data.y, config.per_class, rng, data.n_classes)


@dataclass(frozen=True)
class RunRecord:
    protocol: str
    grid_value: int
    epsilon: float
    repetition: int
    coverage: float
    bias: float
    diff: float
    width: float
    mean_alpha: float
    n_train: int
    n_cal: int
    n_test: int
    overlap: int


@dataclass
class RepetitionResult:
    records: list
    partition: object
    source_index: np.ndarray
    model: object = None
    calibration: object = None


def run_repetition(config: ExperimentConfig, data: Dataset, grid_value: int, repetition: int,
                   pool_index: np.ndarray | None = None, keep_model: bool = False) -> RepetitionResult:
    ss_balance, ss_split, ss_train = child_seed(
        config.master_seed, config.protocol, grid_value, repetition).spawn(3)
    if pool_index is None:
        pool_index = undersample_indices(data.y, config.per_class,
                                         np.random.default_rng(ss_balance), data.n_classes)
    pool = data.subset(pool_index)
    part = split(config, grid_value, np.random.default_rng(ss_split))
    train, cal, test = pool.subset(part.train_idx), pool.subset(part.cal_idx), pool.subset(part.test_idx)

    continuous = CONTINUOUS_COLUMNS if data.n_features == N_FEATURES else None
    scaler = fit_scaler(train, continuous)
    train, cal, test = (apply_scaler(scaler, d) for d in (train, cal, test))

    train_cfg = replace(config.train, seed=int(ss_train.generate_state(1, np.uint64)[0]))
    model = train_sgd(train, train_cfg)
    scores = calibrate(model, cal)
    table = predict_batch(scores, model, test, config.epsilons)
    mean_alpha = metrics.mean_calibration_alpha(scores)

    records = []
    for e, eps in enumerate(config.epsilons):
        m = metrics.run_metrics(table.mask[:, e, :], test.y, eps)
        records.append(RunRecord(config.protocol, grid_value, eps, repetition, m.coverage, m.bias,
                                 m.diff, m.width, mean_alpha, len(train), len(cal), len(test),
                                 part.overlap_size))
    logger.info("protocol %s %s=%d rep %d: mean alpha %.4f, width@%g %.3f",
                config.protocol, GRID_VARIABLE[config.protocol], grid_value, repetition,
                mean_alpha, config.epsilons[0], records[0].width)
    return RepetitionResult(records, part, pool_index,
                            model if keep_model else None, scores if keep_model else None)


@dataclass
class ResultsTable:
    protocol: str
    grid: tuple
    epsilons: tuple
    repetitions: tuple
    records: list
    partitions: dict = field(default_factory=dict, repr=False)

    def missing(self):
        have = {(r.grid_value, r.epsilon, r.repetition) for r in self.records}
        return [(g, e, r) for g in self.grid for r in self.repetitions for e in self.epsilons
                if (g, e, r) not in have]

    def select(self, grid_value=None, epsilon=None):
        return [r for r in self.records
                if (grid_value is None or r.grid_value == grid_value)
                and (epsilon is None or r.epsilon == epsilon)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_COLUMNS)
            for r in self.records:
                w.writerow([repr(float(v)) if isinstance(v, float) else v
                            for v in (getattr(r, c) for c in RAW_COLUMNS)])

    @classmethod
    def read_csv(cls, path) -> "ResultsTable":
        casts = {f.name: f.type for f in fields(RunRecord)}
        to = {"str": str, "int": int, "float": float}
        records = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            absent = set(RAW_COLUMNS) - set(reader.fieldnames or ())
            if absent:
                raise ValueError(f"raw results file lacks columns {sorted(absent)}")
            for row in reader:
                records.append(RunRecord(**{k: to[casts[k]](row[k]) for k in RAW_COLUMNS}))
        if not records:
            raise ValueError("raw results file has no rows")
        protocols = {r.protocol for r in records}
        if len(protocols) != 1:
            raise ValueError(f"mixed protocols in one results file: {sorted(protocols)}")

        def ordered(values):
            return tuple(dict.fromkeys(values))

        return cls(protocols.pop(), ordered(r.grid_value for r in records),
                   ordered(r.epsilon for r in records),
                   tuple(sorted({r.repetition for r in records})), records)


_worker_state = {}


def _init_worker(config, data, pool_index):
    _worker_state.update(config=config, data=data, pool_index=pool_index)


def _guarded(config, data, grid_value, repetition, pool_index):
    try:
        return run_repetition(config, data, grid_value, repetition, pool_index)
    except Exception as exc:
        raise ExperimentError(config.protocol, grid_value, repetition, exc) from exc


def _worker_task(grid_value, repetition):
    s = _worker_state
    return _guarded(s["config"], s["data"], grid_value, repetition, s["pool_index"])


def run_experiment(config: ExperimentConfig, data: Dataset, workers: int | None = None) -> ResultsTable:
    """Run every (grid value, repetition) and collect per-significance metrics.

    A failing repetition aborts the experiment with an :class:`ExperimentError`
    carrying its coordinates. Output order is (grid, repetition, epsilon) in
    config order regardless of ``workers``.
    """
    config.validate()
    pool_index = fixed_pool_indices(config, data) if config.fixed_balanced_pool else None
    if pool_index is None:
        # fail fast on an undersized dataset before any training
        undersample_indices(data.y, config.per_class, np.random.default_rng(0), data.n_classes)
    tasks = [(g, r) for g in config.grid for r in range(config.repetitions)]
    workers = config.workers if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(config, data, pool_index)) as ex:
            futures = [ex.submit(_worker_task, g, r) for g, r in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_guarded(config, data, g, r, pool_index) for g, r in tasks]
    records, partitions = [], {}
    for (g, r), res in zip(tasks, results):
        records.extend(res.records)
        if config.save_partitions:
            partitions[(g, r)] = (res.partition, res.source_index)
    return ResultsTable(config.protocol, config.grid, config.epsilons,
                        tuple(range(config.repetitions)), records, partitions)


@dataclass(frozen=True)
class AggregateRow:
    protocol: str
    grid_value: int
    epsilon: float
    stats: metrics.AggregateMetrics


def aggregate_experiment(table: ResultsTable, formulas=metrics.FORMULAS) -> list[AggregateRow]:
    """Cross-repetition mean and interval for every (grid value, epsilon, statistic)."""
    missing = table.missing()
    if missing:
        raise IncompleteTableError(missing)
    by_key = {}
    for r in table.records:
        by_key.setdefault((r.grid_value, r.epsilon), []).append(r)
    rows = []
    for g in table.grid:
        for e in table.epsilons:
            recs = sorted(by_key[(g, e)], key=lambda r: r.repetition)
            for stat in metrics.STATISTICS:
                values = [getattr(r, stat) for r in recs]
                for formula in formulas:
                    rows.append(AggregateRow(table.protocol, g, e,
                                             metrics.aggregate_with(formula, values, stat)))
    return rows


def write_aggregate_csv(path, rows: list[AggregateRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            s = row.stats
            w.writerow([row.protocol, GRID_VARIABLE[row.protocol], row.grid_value,
                        repr(float(row.epsilon)), s.stat_name, repr(float(s.mean)),
                        repr(float(s.ci_low)), repr(float(s.ci_high)), s.n_runs, s.formula_id])


def find_aggregate(rows, grid_value, epsilon, statistic, formula_id=metrics.FORMULA_SE):
    for row in rows:
        if (row.grid_value == grid_value and row.epsilon == epsilon
                and row.stats.stat_name == statistic and row.stats.formula_id == formula_id):
            return row.stats
    raise KeyError((grid_value, epsilon, statistic, formula_id))


def summarise_alpha(table: ResultsTable) -> dict:
    """Per grid value: mean over runs of per-run mean calibration score, +- 2 s.d."""
    first_eps = table.epsilons[0]
    return {g: metrics.aggregate_sd([r.mean_alpha for r in table.select(g, first_eps)],
                                    "mean_alpha")
            for g in table.grid}


def conformity_overlap_study(config: ExperimentConfig, data: Dataset) -> dict:
    if config.protocol != "C":
        raise ConfigError("protocol", "the overlap study runs protocol C")
    if not config.grid:
        raise ConfigError("grid", "empty grid")
    return summarise_alpha(run_experiment(config, data))


def write_outputs(out_dir, config: ExperimentConfig, table: ResultsTable,
                  aggregates: list[AggregateRow] | None) -> Path:
    """Write raw.csv, aggregate.csv, config.echo and optional partitions/ into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "raw.csv")
    if aggregates is not None:
        write_aggregate_csv(out / "aggregate.csv", aggregates)
    (out / "config.echo").write_text(config_to_ini(config))
    if table.partitions:
        pdir = out / "partitions"
        pdir.mkdir(exist_ok=True)
        for (g, r), (part, source) in sorted(table.partitions.items()):
            part.write_csv(pdir / f"grid{g}_rep{r}.csv", source)
    return out
