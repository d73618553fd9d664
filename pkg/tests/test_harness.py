import math

import numpy as np
import pytest

from adaptroute.catalog import Regime, TaskRecord, ValidationItem, build_catalog
from adaptroute.errors import ConfigError
from adaptroute.fusion import DecisionEntry, RoutingDecision
from adaptroute.harness.evaluation import (
    REFERENCE_POINTS,
    RouterConfig,
    TaskRow,
    make_report,
    normalized_average,
    oracle_scores,
    performance_matrix,
    row_normalize,
    run_regime,
)
from adaptroute.harness.sweep import SweepRow, SweepTable, average_tables, budget_sweep, default_budgets
from adaptroute.harness.world import WorldSpec, generate_world
from adaptroute.pairing import Exhaustive, build_pairing

SMALL = dict(tasks=4, adapters=8, validation_size=30, test_size=4)


@pytest.fixture(scope="module")
def world():
    return generate_world(WorldSpec(**SMALL))


def test_spec_validation():
    with pytest.raises(ConfigError):
        WorldSpec(tasks=1)
    with pytest.raises(ConfigError):
        WorldSpec(tasks=4, adapters=3)
    with pytest.raises(ConfigError):
        WorldSpec(query_noise=-1)
    with pytest.raises(ConfigError):
        WorldSpec.from_dict({"tasks": 3, "colour": "red"})
    spec = WorldSpec(**SMALL)
    assert WorldSpec.from_dict(spec.to_dict()) == spec


def test_world_is_deterministic(world):
    again = generate_world(WorldSpec(**SMALL))
    assert again.aligned == world.aligned
    assert np.array_equal(again.affinity(), world.affinity())


def test_zero_query_noise_gives_anchor_embeddings():
    w = generate_world(WorldSpec(**SMALL, query_noise=0.0))
    for tid, i in zip(w.task_ids, range(4)):
        for it in w.validation[tid] + w.test[tid]:
            assert np.array_equal(w.item(it.input).embedding, w.anchors[i])


def test_planted_best_is_unique_row_argmax(world):
    aff = world.affinity()
    ids = list(world.pool)
    for i, tid in enumerate(world.task_ids):
        row = aff[i]
        best = int(np.argmax(row))
        assert ids[best] == world.aligned[tid]
        assert np.sum(row == row[best]) == 1


def test_exhaustive_pairing_recovers_plant(world):
    paired, _ = build_pairing(world.catalog(), world.evaluator(), Exhaustive())
    assert paired.pairing == world.aligned


def test_performance_matrix_diagonal(world):
    pm = performance_matrix(world.catalog(), world.evaluator())
    assert pm.normalized.min() >= 0 and pm.normalized.max() <= 1
    for i, tid in enumerate(pm.task_ids):
        assert pm.normalized[i, pm.adapter_ids.index(world.aligned[tid])] == 1.0
        assert pm.normalized[i].min() == 0.0


def test_row_normalize_examples():
    assert np.array_equal(row_normalize([[0.2, 0.8]]), [[0.0, 1.0]])
    assert np.array_equal(row_normalize([[0.4, 0.4, 0.4]]), [[0.0, 0.0, 0.0]])


def test_normalized_average_laws():
    rows = [TaskRow("a", "bleu", 0.3, 0.3), TaskRow("b", "bleu", 0.71, 0.71)]
    assert normalized_average(rows) == (100.0, [])
    half = [TaskRow(r.task_id, r.metric, 0.5 * r.method_score, r.oracle_score) for r in rows]
    assert normalized_average(half)[0] == 50.0
    avg, excluded = normalized_average(rows + [TaskRow("z", "bleu", 0.2, 0.0)])
    assert avg == 100.0 and excluded == ["z"]
    assert math.isnan(normalized_average([TaskRow("z", "bleu", 0.2, 0.0)])[0])


def test_report_dict_is_sorted_and_carries_reference_points():
    rep = make_report("ood", [TaskRow("b", "bleu", 0.1, 0.2), TaskRow("a", "bleu", 0.2, 0.2)])
    doc = rep.to_dict()
    assert [r["task_id"] for r in doc["rows"]] == ["a", "b"]
    assert doc["reference_points"] == REFERENCE_POINTS
    assert doc["normalized_average"] == 75.0


def test_oracle_scores_requires_aligned(world):
    cat = world.catalog()
    tasks = {t: r.replace(aligned_adapter=None) for t, r in cat.tasks.items()}
    bare = cat.replace(tasks=tasks)
    with pytest.raises(ConfigError):
        oracle_scores(bare, world.evaluator(), world.test)
    paired, _ = build_pairing(bare, world.evaluator())
    fallback = oracle_scores(paired, world.evaluator(), world.test, fallback_to_pairing=True)
    assert fallback == oracle_scores(cat, world.evaluator(), world.test)


def test_non_ood_separable_world_is_100():
    w = generate_world(WorldSpec(**SMALL, query_noise=0.0, anchor_private=3.0))
    cat = w.oracle_catalog()
    rep = run_regime(cat, Regime.NON_OOD, w.encoder, w.evaluator(), w.test, RouterConfig(k=1))
    assert rep.normalized_average == 100.0


def test_regimes_run(world):
    cat, _ = build_pairing(world.catalog(), world.evaluator())
    ev = world.evaluator()
    reps = {r: run_regime(cat, r, world.encoder, ev, world.test) for r in Regime}
    assert all(len(rep.rows) == 4 for rep in reps.values())
    assert reps[Regime.NON_OOD].normalized_average >= reps[Regime.OOD].normalized_average


def test_budget_sweep_full_budget_reaches_exhaustive():
    w = generate_world(WorldSpec(tasks=2, adapters=6, validation_size=20, eval_noise=0.1, seed=1))
    cat = w.catalog()
    n_items = 20
    budgets = [6, 6 * n_items]
    table = budget_sweep(cat.tasks["task_00"], cat.pool, w.evaluator(), budgets, runs=5, seed=0)
    top = [r for r in table.rows if r.budget == budgets[-1]]
    assert {r.method for r in top} == {"uniform", "successive_halving"}
    assert all(r.mean == 100.0 and r.std == 0.0 for r in top)
    with pytest.raises(ConfigError):
        budget_sweep(cat.tasks["task_00"], cat.pool, w.evaluator(), [20, 10], runs=1)


def test_sweep_table_helpers():
    t1 = SweepTable([SweepRow(10, "uniform", 80.0, 1.0, 5, 10.0), SweepRow(20, "uniform", 96.0, 0.0, 5, 20.0)])
    t2 = SweepTable([SweepRow(10, "uniform", 90.0, 3.0, 5, 10.0), SweepRow(20, "uniform", 98.0, 0.0, 5, 20.0)])
    avg = average_tables([t1, t2])
    assert [r.mean for r in avg.series("uniform")] == [85.0, 97.0]
    assert avg.budget_to_reach("uniform", 95.0) == 20
    assert avg.budget_to_reach("uniform", 99.0) is None


def test_default_budgets():
    grid = default_budgets(4, 10)
    assert grid[0] == 4 and grid == sorted(set(grid)) and grid[-1] >= 40
