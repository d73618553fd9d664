"""Task-to-adapter pairing under an evaluation budget.

Budget is counted in adapter-sample evaluations: scoring one adapter on one
validation item costs one unit.  Three strategies are available:

* exhaustive search over the full validation set,
* uniform selection, which splits a fixed budget evenly across adapters,
* successive halving with a warmup phase and decoupled retention
  (``keep_ratio``) and per-round budget growth (``budget_growth``).

All strategies break score ties by the lexicographically smaller adapter id.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .catalog import Catalog, TaskRecord, ValidationItem
from .errors import (
    AdaptRouteError,
    ConfigError,
    EmptyPoolError,
    EvaluationError,
    InsufficientBudgetError,
    PairingError,
)
from .linalg import LoraAdapter, dump_json
from .metrics import MetricKind
from .seeding import derive_rng


class Evaluator(Protocol):
    """Scores an adapter on validation items; one value in [0, 1] per item.

    Implementations must be deterministic in (adapter, items).
    """

    def score_samples(
        self, adapter_id: str, items: Sequence[ValidationItem], metric: MetricKind
    ) -> Sequence[float]: ...


def evaluate(evaluator: Evaluator, adapter_id: str, samples: Sequence[ValidationItem], metric: MetricKind) -> float:
    if not samples:
        raise EvaluationError(f"adapter {adapter_id}: no samples to evaluate")
    try:
        scores = np.asarray(evaluator.score_samples(adapter_id, samples, metric), dtype=np.float64)
    except AdaptRouteError as exc:
        if isinstance(exc, EvaluationError):
            raise
        raise EvaluationError(f"adapter {adapter_id}: {exc}") from exc
    except Exception as exc:  # evaluator backends are arbitrary user code
        raise EvaluationError(f"adapter {adapter_id}: evaluator failed ({exc!r})") from exc
    if scores.shape != (len(samples),):
        raise EvaluationError(f"adapter {adapter_id}: evaluator returned {scores.shape} scores for {len(samples)} samples")
    if not np.all((scores >= 0.0) & (scores <= 1.0)):
        raise EvaluationError(f"adapter {adapter_id}: scores outside [0, 1]")
    return float(scores.mean())


@dataclass(frozen=True)
class ShConfig:
    base_samples: int = 8
    keep_ratio: float = 0.5
    budget_growth: float = 2.0
    # None means ceil(log_{1/keep_ratio} N) + 2 for a pool of N adapters
    rounds: int | None = None
    warmup_rounds: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.base_samples < 1:
            raise ConfigError("base_samples must be >= 1")
        if not 0 < self.keep_ratio < 1:
            raise ConfigError("keep_ratio must lie in (0, 1)")
        if not self.budget_growth > 1:
            raise ConfigError("budget_growth must be > 1")
        if self.rounds is not None and self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.warmup_rounds < 0:
            raise ConfigError("warmup_rounds must be >= 0")

    def rounds_for(self, n_adapters: int) -> int:
        if self.rounds is not None:
            return self.rounds
        r, reach = 0, 1.0
        while reach * (1 + 1e-12) < n_adapters:
            reach /= self.keep_ratio
            r += 1
        return r + 2

    def samples_for_round(self, r: int, n_items: int) -> int:
        if r < self.warmup_rounds:
            m = self.base_samples
        else:
            m = _ceil(self.base_samples * self.budget_growth ** (r - self.warmup_rounds + 1))
        return min(m, n_items)

    def keep_count(self, n_survivors: int) -> int:
        return max(1, _ceil(self.keep_ratio * n_survivors))


def _ceil(x: float) -> int:
    # ceil of a product of decimal constants, robust to representation error (0.3 * 10)
    return math.ceil(round(x, 9))


@dataclass(frozen=True)
class RoundTrace:
    round: int
    samples_used: int
    survivors: tuple[str, ...]
    scores: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "samples_used": self.samples_used,
            "survivors": list(self.survivors),
            "scores": list(self.scores),
        }


@dataclass(frozen=True)
class PairingOutcome:
    winner: str
    trace: tuple[RoundTrace, ...]
    total_budget_spent: int
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "budget_spent": self.total_budget_spent,
            "method": self.method,
            "trace": [t.to_dict() for t in self.trace],
            "winner": self.winner,
        }


def _adapter_ids(pool) -> list[str]:
    if isinstance(pool, dict):
        ids = list(pool)
    else:
        ids = [a.id if isinstance(a, LoraAdapter) else a for a in pool]
    if len(set(ids)) != len(ids):
        raise ConfigError("pool contains duplicate adapter ids")
    if not ids:
        raise EmptyPoolError("adapter pool is empty")
    return sorted(ids)


def _score_all(evaluator, ids, items, metric, workers: int = 1) -> list[float]:
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda a: evaluate(evaluator, a, items, metric), ids))
    return [evaluate(evaluator, a, items, metric) for a in ids]


def _ranked(ids: Sequence[str], scores: Sequence[float]) -> list[int]:
    return sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))


def exhaustive_pairing(task: TaskRecord, pool, evaluator: Evaluator, workers: int = 1) -> PairingOutcome:
    ids = _adapter_ids(pool)
    items = list(task.validation)
    scores = _score_all(evaluator, ids, items, task.metric, workers)
    best = _ranked(ids, scores)[0]
    trace = (RoundTrace(0, len(items), tuple(ids), tuple(scores)),)
    return PairingOutcome(ids[best], trace, len(ids) * len(items), "exhaustive")


def uniform_selection(
    task: TaskRecord, pool, evaluator: Evaluator, total_budget: int, seed: int = 0, workers: int = 1
) -> PairingOutcome:
    """Give every adapter ``total_budget // N`` items (capped at |V|), all on the same sample."""
    ids = _adapter_ids(pool)
    if total_budget < len(ids):
        raise InsufficientBudgetError(f"budget {total_budget} is below the pool size {len(ids)}")
    n_items = len(task.validation)
    per_adapter = min(total_budget // len(ids), n_items)
    chosen = _sample(derive_rng(seed, task.id), n_items, per_adapter)
    items = [task.validation[i] for i in chosen]
    scores = _score_all(evaluator, ids, items, task.metric, workers)
    best = _ranked(ids, scores)[0]
    trace = (RoundTrace(0, per_adapter, tuple(ids), tuple(scores)),)
    return PairingOutcome(ids[best], trace, per_adapter * len(ids), "uniform")


def _sample(rng: np.random.Generator, n: int, m: int) -> list[int]:
    if m >= n:
        return list(range(n))
    return sorted(rng.choice(n, size=m, replace=False).tolist())


def successive_halving(
    task: TaskRecord, pool, evaluator: Evaluator, cfg: ShConfig = ShConfig(), workers: int = 1
) -> PairingOutcome:
    ids = _adapter_ids(pool)
    if len(ids) == 1:
        return PairingOutcome(ids[0], (), 0, "successive_halving")
    rng = derive_rng(cfg.seed, task.id)
    n_items = len(task.validation)
    survivors = ids
    trace = []
    spent = 0
    last_scores: list[float] = []
    for r in range(cfg.rounds_for(len(ids))):
        m_r = cfg.samples_for_round(r, n_items)
        items = [task.validation[i] for i in _sample(rng, n_items, m_r)]
        last_scores = _score_all(evaluator, survivors, items, task.metric, workers)
        trace.append(RoundTrace(r, m_r, tuple(survivors), tuple(last_scores)))
        spent += m_r * len(survivors)
        keep = _ranked(survivors, last_scores)[: cfg.keep_count(len(survivors))]
        last_scores = [last_scores[i] for i in keep]
        survivors = [survivors[i] for i in keep]
        if len(survivors) == 1:
            break
    # survivors are ordered by last-round score, then id
    return PairingOutcome(survivors[0], tuple(trace), spent, "successive_halving")


def sh_schedule(n_adapters: int, n_items: int, cfg: ShConfig) -> list[tuple[int, int]]:
    """Planned ``(samples, survivors)`` per round; independent of the scores observed."""
    plan = []
    s = n_adapters
    if s <= 1:
        return plan
    for r in range(cfg.rounds_for(n_adapters)):
        plan.append((cfg.samples_for_round(r, n_items), s))
        s = cfg.keep_count(s)
        if s == 1:
            break
    return plan


def sh_cost(n_adapters: int, n_items: int, cfg: ShConfig) -> int:
    return sum(m * s for m, s in sh_schedule(n_adapters, n_items, cfg))


def sh_config_for_budget(n_adapters: int, n_items: int, budget: int, cfg: ShConfig = ShConfig()) -> ShConfig:
    """Largest ``base_samples`` whose planned spend fits ``budget``.

    When even one base sample is too expensive, the number of rounds is
    truncated instead and the last round's leader wins.
    """
    if budget < n_adapters:
        raise InsufficientBudgetError(f"budget {budget} is below the pool size {n_adapters}")
    rounds = cfg.rounds_for(n_adapters)
    fixed = dataclasses.replace(cfg, rounds=rounds)

    def cost(m, r=rounds):
        return sh_cost(n_adapters, n_items, dataclasses.replace(fixed, base_samples=m, rounds=r))

    if cost(1) <= budget:
        lo, hi = 1, max(1, n_items)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if cost(mid) <= budget:
                lo = mid
            else:
                hi = mid - 1
        return dataclasses.replace(fixed, base_samples=lo)
    r = rounds
    while r > 1 and cost(1, r) > budget:
        r -= 1
    return dataclasses.replace(fixed, base_samples=1, rounds=r)


@dataclass(frozen=True)
class Exhaustive:
    name = "exhaustive"


@dataclass(frozen=True)
class SuccessiveHalving:
    config: ShConfig = ShConfig()
    name = "sh"


@dataclass(frozen=True)
class Uniform:
    budget: int
    seed: int = 0
    name = "uniform"


Strategy = Exhaustive | SuccessiveHalving | Uniform


def pair_task(task: TaskRecord, pool, evaluator: Evaluator, strategy: Strategy, workers: int = 1) -> PairingOutcome:
    if isinstance(strategy, Exhaustive):
        return exhaustive_pairing(task, pool, evaluator, workers)
    if isinstance(strategy, SuccessiveHalving):
        return successive_halving(task, pool, evaluator, strategy.config, workers)
    if isinstance(strategy, Uniform):
        return uniform_selection(task, pool, evaluator, strategy.budget, strategy.seed, workers)
    raise ConfigError(f"unknown pairing strategy {strategy!r}")


def build_pairing(
    catalog: Catalog,
    evaluator: Evaluator,
    strategy: Strategy = Exhaustive(),
    only: Iterable[str] | None = None,
    workers: int = 1,
) -> tuple[Catalog, dict[str, PairingOutcome]]:
    """Pair every task (or the tasks in ``only``) with its best adapter.

    Every task is attempted; if any fail, ``PairingError`` lists all of them.
    """
    if not catalog.pool:
        raise EmptyPoolError("cannot pair against an empty adapter pool")
    targets = sorted(catalog.tasks if only is None else only)
    pairing = dict(catalog.pairing)
    outcomes: dict[str, PairingOutcome] = {}
    failures: dict[str, str] = {}
    for tid in targets:
        try:
            outcome = pair_task(catalog.tasks[tid], catalog.pool, evaluator, strategy, workers)
        except AdaptRouteError as exc:
            failures[tid] = str(exc)
            pairing.pop(tid, None)
            continue
        outcomes[tid] = outcome
        pairing[tid] = outcome.winner
    if failures:
        raise PairingError(failures)
    return catalog.replace(pairing=pairing).validate(), outcomes


def pairing_report(outcomes: dict[str, PairingOutcome]) -> dict:
    return {tid: outcomes[tid].to_dict() for tid in sorted(outcomes)}


def report_path_for(catalog_path: str | Path) -> Path:
    p = Path(catalog_path)
    return p.with_name(f"{p.stem}.pairing.json")


def save_pairing_report(outcomes: dict[str, PairingOutcome], path: str | Path) -> None:
    dump_json(pairing_report(outcomes), path)


def trace_bytes(outcome: PairingOutcome) -> bytes:
    return json.dumps(outcome.to_dict(), sort_keys=True).encode()
