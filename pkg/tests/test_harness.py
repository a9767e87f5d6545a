import json
import math

import numpy as np
import pytest

from brdp import harness
from brdp.errors import EmptyDatasetError, SchemaError
from brdp.harness import AcceptanceReport, DatasetTable, ExperimentConfig, Interval


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_ingest_basic_and_clamp(tmp_path):
    t = harness.ingest_csv(write(tmp_path, "id,v\na,5\n"), "id", "v", 0, 10)
    assert len(t) == 1 and t.values[0] == 5
    t = harness.ingest_csv(write(tmp_path, "id,v\na,120\nb,NA\nc,\nd,x\ne,-3\n"), "id", "v", 0, 100)
    assert t.values.tolist() == [100.0, 0.0]
    assert t.ids == ("a", "e")


def test_ingest_errors(tmp_path):
    with pytest.raises(SchemaError):
        harness.ingest_csv(write(tmp_path, "id,w\na,1\n"), "id", "v", 0, 1)
    with pytest.raises(EmptyDatasetError):
        harness.ingest_csv(write(tmp_path, "id,v\na,NA\n"), "id", "v", 0, 1)


def test_sum_sensitivity_from_clip():
    t = DatasetTable.from_values([1, 2, 3], 0, 22)
    assert harness.sensitivity_for("sum", t) == 22
    assert harness.sensitivity_for("count", t) == 1
    assert harness.sensitivity_for("average", t) == pytest.approx(22 / 3)


def test_queries():
    v = np.array([1.0, 2.0, 3.0])
    assert harness.run_query(v, "sum") == 6
    assert harness.run_query(v, "average") == 2
    assert harness.run_query(v, "count", Interval(1.5, math.inf)) == 2
    with pytest.raises(EmptyDatasetError):
        harness.run_query(np.array([]), "sum")


def test_subsampled_query_full_rate_is_exact(rng):
    v = np.arange(10.0)
    assert harness.run_subsampled_query(v, "sum", 1.0, rng) == pytest.approx(45.0)
    with pytest.raises(EmptyDatasetError):
        harness.run_subsampled_query(v, "sum", 1e-12, rng, on_empty="fail")


def test_partition_is_disjoint_and_stable():
    t = DatasetTable.from_values(np.arange(100.0), 0, 100)
    parts = harness.partition(t, 4)
    ids = [set(p.ids) for p in parts]
    assert sum(len(s) for s in ids) == 100
    assert all(not (a & b) for i, a in enumerate(ids) for b in ids[i + 1 :])
    assert [p.ids for p in harness.partition(t, 4)] == [p.ids for p in parts]


def test_config_round_trip_and_schema(tmp_path):
    cfg = ExperimentConfig(epsilon=0.5, predicate_lo=1.0)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(SchemaError):
        ExperimentConfig(mechanism="other")
    p = write(tmp_path, "[1, 2]", "cfg.json")
    with pytest.raises(SchemaError):
        ExperimentConfig.from_json(p)


def small_table():
    return harness.synthetic_table(2000, 5.0, 2.0, 0.0, 10.0, seed=3)


def test_q0_experiment_matches_kernel_acceptance():
    cfg = ExperimentConfig(mechanism="brdp", q=0.0, epsilon=1.0, theta=0.005, trials=2000, seed=1)
    r = harness.run_experiment(cfg, small_table())
    part = r.partitions[0]
    assert part.params["q"] == 0.0
    assert abs(r.empirical_acceptance - part.analytic_acceptance) < 3 * r.standard_error
    assert part.mean_rounds == 1.0


def test_brdp_beats_dp_empirically():
    t = small_table()
    base = dict(epsilon=1.0, theta=0.005, trials=1000, seed=2, keep_outputs=False)
    dp = harness.run_experiment(ExperimentConfig(mechanism="dp", **base), t)
    br = harness.run_experiment(ExperimentConfig(mechanism="brdp", **base), t)
    se = math.hypot(dp.standard_error, br.standard_error)
    assert br.empirical_acceptance >= dp.empirical_acceptance - 3 * se


def test_partitions_report_single_query_budget():
    t = small_table()
    one = harness.run_experiment(ExperimentConfig(mechanism="dp", trials=50, theta=0.01), t)
    four = harness.run_experiment(ExperimentConfig(mechanism="dp", trials=50, theta=0.01, partitions=4), t)
    assert len(four.partitions) == 4
    assert four.composed_epsilon < 2 * one.composed_epsilon
    assert all(p.params["epsilon_y"] == 1.0 for p in four.partitions)


def test_report_parameters_and_determinism():
    cfg = ExperimentConfig(mechanism="subsampled-brdp", query="average", epsilon=1.0, theta=0.05, trials=200, seed=4)
    t = small_table()
    a = harness.emit_report(harness.run_experiment(cfg, t), "json")
    b = harness.emit_report(harness.run_experiment(cfg, t), "json")
    assert a == b
    data = json.loads(a)
    assert set(data["partitions"][0]["params"]) >= {"epsilon_y", "q", "p", "scale", "W", "L"}
    assert data["runtime_seconds"] is None


def test_report_round_trip_and_csv(tmp_path):
    cfg = ExperimentConfig(mechanism="brdp", trials=100, theta=0.01, center_outputs=True)
    rep = harness.run_experiment(cfg, small_table())
    path = tmp_path / "r.json"
    harness.emit_report(rep, "json", path)
    again = AcceptanceReport.from_dict(json.loads(path.read_text()))
    assert again.to_dict() == rep.to_dict()
    assert abs(np.mean(rep.partitions[0].outputs)) < 1e-12
    csv_text = harness.emit_report(rep, "csv")
    header, row = csv_text.strip().split("\n")
    assert header.split(",") == list(harness.CSV_FIELDS)
    assert len(row.split(",")) == len(harness.CSV_FIELDS)


def test_centering_never_changes_parameters():
    t = small_table()
    a = harness.run_experiment(ExperimentConfig(trials=100, theta=0.01), t)
    b = harness.run_experiment(ExperimentConfig(trials=100, theta=0.01, center_outputs=True), t)
    assert a.partitions[0].params == b.partitions[0].params
    assert a.empirical_acceptance == b.empirical_acceptance


def test_quantiles():
    assert harness.box_quantiles([]) == dict.fromkeys(["q2.5", "q25", "q50", "q75", "q97.5"])
    x = np.random.default_rng(0).standard_normal(1000)
    assert abs(harness.box_quantiles(x)["q50"]) < 0.1


def test_trial_streams_are_counter_based():
    a = harness._trial_rng(1, 0, 5).random()
    b = harness._trial_rng(1, 0, 5).random()
    c = harness._trial_rng(1, 0, 6).random()
    assert a == b != c


def test_laplace_kernel_outperforms_gaussian_on_average():
    t = small_table()
    base = dict(mechanism="brdp", epsilon=1.0, theta=0.005, trials=1000, seed=3, keep_outputs=False)
    lap = harness.run_experiment(ExperimentConfig(kernel="laplace", **base), t)
    gau = harness.run_experiment(ExperimentConfig(kernel="gaussian", **base), t)
    assert lap.analytic_acceptance >= gau.analytic_acceptance


@pytest.mark.parametrize("kernel", ["gaussian", "laplace"])
def test_subsampled_analytic_acceptance_tracks_empirical(kernel):
    cfg = ExperimentConfig(
        mechanism="subsampled-brdp", kernel=kernel, query="average", epsilon=1.0, theta=0.05, trials=600, seed=8
    )
    rep = harness.run_experiment(cfg, small_table())
    se = max(rep.standard_error, 1e-3)
    assert abs(rep.empirical_acceptance - rep.analytic_acceptance) <= 4 * se
