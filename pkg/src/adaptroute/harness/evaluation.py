"""Mixed-task evaluation: regimes, oracle-normalised averages and the
row-normalised task x adapter performance matrix."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..catalog import Catalog, Regime, ValidationItem, remove_for_regime
from ..encoders import Encoder
from ..errors import ConfigError, NotFoundError
from ..fusion import DecisionEntry, RoutingDecision, route
from ..linalg import LoraAdapter
from ..metrics import MetricKind
from ..pairing import Evaluator, Exhaustive, Strategy, build_pairing, evaluate
from ..retrieval import DEFAULT_K, DEFAULT_TEMPERATURE

# large-model reference values, printed for context only
REFERENCE_POINTS = {"non-ood": 101.2, "ood": 88.4}


class DecisionScorer(Protocol):
    """Generates outputs for a routing decision and scores them per item."""

    def score_decision(
        self, decision: RoutingDecision, pool: dict[str, LoraAdapter], items: Sequence[ValidationItem], metric: MetricKind
    ) -> Sequence[float]: ...


@dataclass(frozen=True)
class RouterConfig:
    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE
    repair: Strategy = Exhaustive()


@dataclass(frozen=True)
class TaskRow:
    task_id: str
    metric: str
    method_score: float
    oracle_score: float

    @property
    def normalized(self) -> float | None:
        if self.oracle_score == 0:
            return None
        return 100.0 * (self.method_score / self.oracle_score)


@dataclass
class EvaluationReport:
    regime: str
    rows: list[TaskRow]
    normalized_average: float
    excluded: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "excluded_zero_oracle": list(self.excluded),
            "normalized_average": self.normalized_average,
            "notes": list(self.notes),
            "reference_points": dict(REFERENCE_POINTS),
            "regime": self.regime,
            "rows": [
                {
                    "method_score": r.method_score,
                    "metric": r.metric,
                    "normalized": r.normalized,
                    "oracle_score": r.oracle_score,
                    "task_id": r.task_id,
                }
                for r in self.rows
            ],
        }


def normalized_average(rows: Sequence[TaskRow]) -> tuple[float, list[str]]:
    """Mean of ``100 * method / oracle`` over rows; zero-oracle rows are excluded and returned."""
    kept = [r.normalized for r in rows if r.oracle_score != 0]
    excluded = sorted(r.task_id for r in rows if r.oracle_score == 0)
    if not kept:
        return float("nan"), excluded
    return float(np.mean(kept)), excluded


def make_report(regime: str, rows: Sequence[TaskRow], notes: Sequence[str] = ()) -> EvaluationReport:
    rows = sorted(rows, key=lambda r: r.task_id)
    avg, excluded = normalized_average(rows)
    return EvaluationReport(str(regime), list(rows), avg, excluded, list(notes))


def _one_hot(adapter_id: str, task_id: str) -> RoutingDecision:
    return RoutingDecision(task_id, (DecisionEntry(task_id, adapter_id, 1.0),))


def oracle_scores(
    catalog: Catalog,
    scorer: DecisionScorer,
    test_sets: dict[str, Sequence[ValidationItem]],
    fallback_to_pairing: bool = False,
) -> dict[str, float]:
    """Score of each task's aligned adapter on its held-out test set.

    With ``fallback_to_pairing`` a task lacking an aligned adapter is
    normalised by its paired (exhaustive-search) adapter instead.
    """
    out = {}
    for tid in sorted(test_sets):
        if tid not in catalog.tasks:
            raise NotFoundError(f"test set for unknown task {tid!r}")
        task = catalog.tasks[tid]
        adapter = task.aligned_adapter
        if adapter is None and fallback_to_pairing:
            adapter = catalog.pairing.get(tid)
        if adapter is None or adapter not in catalog.pool:
            raise ConfigError(f"task {tid!r} has no aligned adapter in the pool")
        items = list(test_sets[tid])
        out[tid] = float(np.mean(scorer.score_decision(_one_hot(adapter, tid), catalog.pool, items, task.metric)))
    return out


def run_regime(
    catalog: Catalog,
    regime: Regime | str,
    encoder: Encoder,
    evaluator,
    test_sets: dict[str, Sequence[ValidationItem]],
    config: RouterConfig = RouterConfig(),
    oracle: dict[str, float] | None = None,
) -> EvaluationReport:
    """Route and score every test query of every task under ``regime``.

    ``evaluator`` must provide both ``score_samples`` (for re-pairing tasks
    whose adapter was removed) and ``score_decision``.
    """
    regime = Regime(regime)
    notes = []
    if oracle is None:
        fallback = any(catalog.tasks[t].aligned_adapter is None for t in test_sets if t in catalog.tasks)
        oracle = oracle_scores(catalog, evaluator, test_sets, fallback_to_pairing=fallback)
        if fallback:
            notes.append("tasks without an aligned adapter are normalised by their exhaustive-pairing winner")
    rows = []
    for tid in sorted(test_sets):
        task = catalog.tasks[tid]
        view = remove_for_regime(catalog, tid, regime)
        if view.unpaired and view.pool:
            view, _ = build_pairing(view, evaluator, config.repair, only=view.unpaired)
        scores = []
        for item in test_sets[tid]:
            decision = route(view, encoder, item.input, config.k, config.temperature, query_id=item.input)
            scores.extend(evaluator.score_decision(decision, view.pool, [item], task.metric))
        rows.append(TaskRow(tid, task.metric.value, float(np.mean(scores)), oracle[tid]))
    return make_report(regime.value, rows, notes)


@dataclass(frozen=True, eq=False)
class PerformanceMatrix:
    task_ids: list[str]
    adapter_ids: list[str]
    raw: np.ndarray
    normalized: np.ndarray


def row_normalize(raw: np.ndarray) -> np.ndarray:
    """Row-wise min-max scaling to [0, 1]; constant rows become all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo = raw.min(axis=1, keepdims=True)
    span = raw.max(axis=1, keepdims=True) - lo
    out = np.zeros_like(raw)
    np.divide(raw - lo, span, out=out, where=span > 0)
    return out


def performance_matrix(catalog: Catalog, evaluator: Evaluator) -> PerformanceMatrix:
    task_ids = sorted(catalog.tasks)
    adapter_ids = sorted(catalog.pool)
    raw = np.empty((len(task_ids), len(adapter_ids)))
    for i, tid in enumerate(task_ids):
        task = catalog.tasks[tid]
        for j, aid in enumerate(adapter_ids):
            raw[i, j] = evaluate(evaluator, aid, list(task.validation), task.metric)
    return PerformanceMatrix(task_ids, adapter_ids, raw, row_normalize(raw))
