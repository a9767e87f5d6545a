"""Experiment engine: CSV ingestion, queries, repeated releases and reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import budgeting, composition, core, kernels, subsampling
from .core import BrdpMechanism, ErrorBound
from .errors import DomainError, EmptyDatasetError, SchemaError
from .kernels import BudgetPair, KernelKind
from .subsampling import QueryKind

MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none", "?"})
QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)
MECHANISMS = ("dp", "brdp", "subsampled-brdp")
MAX_EMPTY_RESAMPLES = 100


@dataclass(frozen=True)
class DatasetTable:
    ids: tuple[str, ...]
    values: np.ndarray
    id_column: str
    value_column: str
    clip_lo: float
    clip_hi: float

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise DomainError("clip_lo must be below clip_hi")
        values = np.clip(np.asarray(self.values, dtype=float), self.clip_lo, self.clip_hi)
        object.__setattr__(self, "values", values)
        if len(self.ids) != values.size:
            raise SchemaError("ids and values differ in length")

    def __len__(self) -> int:
        return self.values.size

    @property
    def value_range(self) -> float:
        return self.clip_hi - self.clip_lo

    @classmethod
    def from_values(cls, values, clip_lo: float, clip_hi: float) -> DatasetTable:
        values = np.asarray(values, dtype=float)
        ids = tuple(str(i) for i in range(values.size))
        return cls(ids, values, "id", "value", clip_lo, clip_hi)


def ingest_csv(path, id_column: str, value_column: str, clip_lo: float, clip_hi: float) -> DatasetTable:
    """Read a comma-separated file with a header row.

    Rows whose value is missing or non-numeric are dropped; the rest are
    clipped. Row order follows the file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (id_column, value_column):
            if col not in header:
                raise SchemaError(f"column {col!r} not found in header {header}")
        ids, values = [], []
        for row in reader:
            raw = (row.get(value_column) or "").strip()
            if raw.lower() in MISSING_TOKENS:
                continue
            try:
                v = float(raw)
            except ValueError:
                continue
            if not math.isfinite(v):
                continue
            ids.append(str(row.get(id_column, "")))
            values.append(v)
    if not values:
        raise EmptyDatasetError(f"no usable values in column {value_column!r} of {path}")
    return DatasetTable(tuple(ids), np.array(values), id_column, value_column, clip_lo, clip_hi)


@dataclass(frozen=True)
class Interval:
    """Open interval ``(lo, hi)`` used as the count predicate."""

    lo: float = -math.inf
    hi: float = math.inf

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return (values > self.lo) & (values < self.hi)


def run_query(values: np.ndarray, kind, predicate: Interval | None = None) -> float:
    kind = QueryKind.parse(kind)
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyDatasetError("query on an empty table")
    if kind is QueryKind.SUM:
        return float(values.sum())
    if kind is QueryKind.AVERAGE:
        return float(values.mean())
    return float(np.count_nonzero((predicate or Interval())(values)))


def run_subsampled_query(
    values: np.ndarray,
    kind,
    p: float,
    rng: np.random.Generator,
    predicate: Interval | None = None,
    on_empty: str = "resample",
) -> float:
    """Estimate from a Bernoulli subsample, rescaled by ``|X| / |X_s|`` for Sum and Count."""
    kind = QueryKind.parse(kind)
    n = values.size
    for _ in range(MAX_EMPTY_RESAMPLES):
        mask = rng.random(n) < p
        m = int(mask.sum())
        if m:
            break
        if on_empty != "resample":
            raise EmptyDatasetError("empty subsample")
    else:
        raise EmptyDatasetError(f"subsample stayed empty after {MAX_EMPTY_RESAMPLES} draws")
    sub = values[mask]
    if kind is QueryKind.AVERAGE:
        return float(sub.mean())
    return run_query(sub, kind, predicate) * n / m


def sensitivity_for(kind, table: DatasetTable) -> float:
    """Sum uses the clip range, Count uses 1 and Average the clip range over ``|X|``."""
    kind = QueryKind.parse(kind)
    if kind is QueryKind.SUM:
        return table.value_range
    if kind is QueryKind.COUNT:
        return 1.0
    return table.value_range / len(table)


def partition(table: DatasetTable, parts: int) -> list[DatasetTable]:
    """Disjoint split by a stable hash of the record id."""
    if parts < 1:
        raise DomainError("partitions must be >= 1")
    if parts == 1:
        return [table]
    keys = np.array([zlib.crc32(i.encode("utf-8")) % parts for i in table.ids])
    out = []
    for k in range(parts):
        idx = np.flatnonzero(keys == k)
        if idx.size == 0:
            raise EmptyDatasetError(f"partition {k} is empty")
        ids = tuple(table.ids[i] for i in idx)
        out.append(dataclasses.replace(table, ids=ids, values=table.values[idx]))
    return out


@dataclass
class ExperimentConfig:
    mechanism: str = "brdp"
    kernel: str = "gaussian"
    epsilon: float = 1.0
    delta: float = 1e-5
    theta: float = 1.0
    query: str = "average"
    predicate_lo: float = -math.inf
    predicate_hi: float = math.inf
    trials: int = 1000
    partitions: int = 1
    seed: int = 0
    tol: float = budgeting.DEFAULT_TOL
    q: float | None = None
    p: float | None = None
    sensitivity: float | None = None
    sensitivity_scaling: str = "none"
    clip_lo: float = 0.0
    clip_hi: float = 1.0
    on_empty: str = "resample"
    center_outputs: bool = False
    keep_outputs: bool = True
    record_runtime: bool = False

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise SchemaError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        self.kernel = KernelKind.parse(self.kernel).value
        self.query = QueryKind.parse(self.query).value
        if int(self.trials) != self.trials or self.trials < 1:
            raise SchemaError("trials must be a positive integer")
        if int(self.partitions) != self.partitions or self.partitions < 1:
            raise SchemaError("partitions must be a positive integer")
        if self.on_empty not in ("resample", "fail"):
            raise SchemaError("on_empty must be 'resample' or 'fail'")
        BudgetPair(self.epsilon, self.delta)
        ErrorBound(self.theta)

    @property
    def budget(self) -> BudgetPair:
        return BudgetPair(self.epsilon, self.delta)

    @property
    def predicate(self) -> Interval:
        return Interval(self.predicate_lo, self.predicate_hi)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise SchemaError(f"unknown config keys: {unknown}")
        clean = {k: _from_jsonable(v) for k, v in data.items()}
        try:
            return cls(**clean)
        except TypeError as exc:
            raise SchemaError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise SchemaError("config must be a JSON object")
        return cls.from_dict(data)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _from_jsonable(v):
    if v in ("inf", "-inf", "nan"):
        return float(v)
    return v


@dataclass
class PartitionResult:
    size: int
    true_answer: float
    empirical_acceptance: float
    standard_error: float
    analytic_acceptance: float
    mean_rounds: float
    quantiles: dict
    params: dict
    outputs: list = field(default_factory=list)


@dataclass
class AcceptanceReport:
    config: dict
    empirical_acceptance: float | None
    standard_error: float | None
    analytic_acceptance: float | None
    composed_epsilon: float | None
    composed_T: int
    target_delta: float
    partitions: list = field(default_factory=list)
    runtime_seconds: float | None = None

    def to_dict(self) -> dict:
        return _clean(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> AcceptanceReport:
        data = dict(data)
        data["partitions"] = [PartitionResult(**p) for p in data.get("partitions", [])]
        return cls(**data)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def box_quantiles(outputs) -> dict:
    keys = [f"q{lvl * 100:g}" for lvl in QUANTILE_LEVELS]
    arr = np.asarray(outputs, dtype=float)
    if arr.size == 0:
        return dict.fromkeys(keys)
    vals = np.quantile(arr, QUANTILE_LEVELS)
    return {k: float(v) for k, v in zip(keys, vals)}


@dataclass(frozen=True)
class BuiltMechanism:
    mechanism: BrdpMechanism
    p: float
    sigma_E: float
    params: dict


def population_of(values: np.ndarray, predicate: Interval) -> subsampling.PopulationModel:
    """Moment summary of a partition, used for the sampling-error model."""
    sd = float(values.std())
    return subsampling.PopulationModel(
        values.size, float(values.mean()), sd if sd > 0 else 1e-12, float(predicate(values).mean())
    )


def build_mechanism(cfg: ExperimentConfig, sensitivity: float, values: np.ndarray) -> BuiltMechanism:
    """Resolve the mechanism for one partition and record every parameter used."""
    kind = KernelKind.parse(cfg.kernel)
    bound = ErrorBound(cfg.theta)
    budget = cfg.budget
    p, sigma_E, inner, sens = 1.0, 0.0, budget, sensitivity
    if cfg.mechanism == "dp":
        mech = BrdpMechanism(kernels.calibrate(kind, budget, sensitivity), 0.0, bound)
        eps_y = budget.epsilon
    elif cfg.mechanism == "brdp" and cfg.q is not None:
        mech = BrdpMechanism(kernels.calibrate(kind, budget, sensitivity), cfg.q, bound)
        eps_y = budget.epsilon
    elif cfg.mechanism == "brdp":
        alloc = budgeting.allocate(budget, sensitivity, cfg.theta, cfg.tol, kind)
        mech, eps_y = alloc.mechanism, alloc.epsilon_y
    else:
        pop = population_of(values, cfg.predicate)
        method = "analytic" if kind is KernelKind.GAUSSIAN else "monte_carlo"
        if cfg.p is None:
            # The rate is searched with the Gaussian kernel and reused for Laplace.
            plan, _ = subsampling.find_p(
                budget, sensitivity, cfg.theta, cfg.query, pop, cfg.tol,
                sensitivity_scaling=cfg.sensitivity_scaling,
            )
            p = plan.p
        else:
            p = cfg.p
        inner = subsampling.deamplify(budget, p)
        sens = subsampling.inner_sensitivity(sensitivity, p, cfg.sensitivity_scaling)
        sigma_E = subsampling.sampling_sigma(cfg.query, pop, p)

        def obj(k, q):
            return subsampling.combined_objective_for_kernel(k, q, bound, sigma_E, method=method)

        if cfg.q is not None:
            mech = BrdpMechanism(kernels.calibrate(kind, inner, sens), cfg.q, bound)
            eps_y = inner.epsilon
        else:
            alloc = budgeting.allocate(inner, sens, cfg.theta, cfg.tol, kind, objective_fn=obj)
            mech, eps_y = alloc.mechanism, alloc.epsilon_y
    shift = core.shift_params(mech.kernel, bound, mech.q)
    params = {
        "epsilon_y": eps_y,
        "delta_y": inner.delta,
        "q": mech.q,
        "p": p,
        "scale": mech.kernel.scale,
        "sensitivity": sens,
        "W": shift.W,
        "L": shift.L,
        "sigma_E": sigma_E,
        "inner_epsilon": inner.epsilon,
        "inner_delta": inner.delta,
    }
    return BuiltMechanism(mech, p, sigma_E, params)


def composed_epsilon(built: BuiltMechanism, T: int, target_delta: float) -> float:
    """Leakage of ``T`` releases on one partition; disjoint partitions do not add up."""
    mech = built.mechanism
    if built.p < 1.0:
        return subsampling.subsampled_epsilon_T(mech, built.p, T, target_delta)
    if mech.q == 0.0:
        return composition.kernel_epsilon_T(mech.kernel, T, target_delta)
    return composition.brdp_epsilon_T(mech, T, target_delta)


def _trial_rng(seed: int, part: int, trial: int) -> np.random.Generator:
    # Counter-based sub-streams: each trial's stream depends only on its index.
    return np.random.default_rng(np.random.SeedSequence([seed, part, trial]))


def run_partition(
    cfg: ExperimentConfig, table: DatasetTable, index: int
) -> tuple[PartitionResult, BuiltMechanism]:
    values = table.values
    pred = cfg.predicate
    sens = cfg.sensitivity if cfg.sensitivity is not None else sensitivity_for(cfg.query, table)
    built = build_mechanism(cfg, sens, values)
    mech = built.mechanism
    truth = run_query(values, cfg.query, pred)
    outputs = np.empty(cfg.trials)
    rounds = np.empty(cfg.trials)
    for t in range(cfg.trials):
        rng = _trial_rng(cfg.seed, index, t)
        if built.p < 1.0:
            answer = run_subsampled_query(values, cfg.query, built.p, rng, pred, cfg.on_empty)
        else:
            answer = truth
        outputs[t], rounds[t] = core.sample(mech, answer, rng)
    err = outputs - truth
    hit = np.abs(err) <= cfg.theta
    rate = float(hit.mean())
    if built.sigma_E > 0:
        analytic = subsampling.end_to_end_acceptance(mech, built.sigma_E)
    else:
        analytic = core.acceptance_rate(mech)
    # Centering is post-processing of released values only.
    shown = err - err.mean() if cfg.center_outputs else err
    return PartitionResult(
        size=int(values.size),
        true_answer=truth,
        empirical_acceptance=rate,
        standard_error=math.sqrt(rate * (1.0 - rate) / cfg.trials),
        analytic_acceptance=analytic,
        mean_rounds=float(rounds.mean()),
        quantiles=box_quantiles(shown),
        params=built.params,
        outputs=[float(v) for v in shown] if cfg.keep_outputs else [],
    ), built


def run_experiment(cfg: ExperimentConfig, table: DatasetTable) -> AcceptanceReport:
    start = time.perf_counter()
    parts = partition(table, cfg.partitions)
    results, leak = [], []
    for i, part in enumerate(parts):
        res, built = run_partition(cfg, part, i)
        results.append(res)
        leak.append(composed_epsilon(built, cfg.trials, cfg.delta))
    total_trials = cfg.trials * len(results)
    rate = sum(r.empirical_acceptance for r in results) / len(results)
    se = math.sqrt(rate * (1.0 - rate) / total_trials)
    analytic = sum(r.analytic_acceptance for r in results) / len(results)
    return AcceptanceReport(
        config=cfg.to_dict(),
        empirical_acceptance=rate,
        standard_error=se,
        analytic_acceptance=analytic,
        composed_epsilon=max(leak),
        composed_T=cfg.trials,
        target_delta=cfg.delta,
        partitions=results,
        runtime_seconds=time.perf_counter() - start if cfg.record_runtime else None,
    )


CSV_FIELDS = (
    "partition", "size", "true_answer", "empirical_acceptance", "standard_error",
    "analytic_acceptance", "mean_rounds", "q2.5", "q25", "q50", "q75", "q97.5",
    "epsilon_y", "delta_y", "q", "p", "scale", "sensitivity", "W", "L", "sigma_E",
    "inner_epsilon", "inner_delta", "composed_epsilon", "composed_T", "target_delta",
)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def render_report(report: AcceptanceReport, fmt: str = "json") -> str:
    data = report.to_dict()
    if fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    if fmt != "csv":
        raise DomainError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for i, part in enumerate(data["partitions"]):
        row = {"partition": i, **part, **part["quantiles"], **part["params"]}
        row.update(
            composed_epsilon=data["composed_epsilon"],
            composed_T=data["composed_T"],
            target_delta=data["target_delta"],
        )
        writer.writerow([_csv_cell(row.get(k)) for k in CSV_FIELDS])
    return buf.getvalue()


def emit_report(report: AcceptanceReport, fmt: str = "json", path=None) -> str:
    """Serialize the report; writes to ``path`` when given and returns the text."""
    text = render_report(report, fmt)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def synthetic_table(size: int, mu: float, sigma_x: float, clip_lo: float, clip_hi: float, seed: int) -> DatasetTable:
    """Gaussian records, clipped; a stand-in when no CSV is supplied."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    return DatasetTable.from_values(rng.normal(mu, sigma_x, size), clip_lo, clip_hi)
