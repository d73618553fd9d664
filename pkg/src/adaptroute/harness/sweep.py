"""Budget sweep comparing uniform selection with successive halving.

For every budget and run, both strategies pick an adapter under that budget
and the pick is scored by its full-validation score relative to the best
adapter's full-validation score (100 = the exhaustive-search winner).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..catalog import TaskRecord
from ..errors import ConfigError
from ..pairing import Evaluator, ShConfig, _adapter_ids, evaluate, sh_config_for_budget, sh_cost, successive_halving, uniform_selection
from ..seeding import key_int

METHODS = ("uniform", "successive_halving")


@dataclass(frozen=True)
class SweepRow:
    budget: int
    method: str
    mean: float
    std: float
    runs: int
    mean_spent: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def series(self, method: str) -> list[SweepRow]:
        return sorted((r for r in self.rows if r.method == method), key=lambda r: r.budget)

    def budget_to_reach(self, method: str, level: float) -> int | None:
        """Smallest swept budget whose mean normalised score reaches ``level``."""
        for r in self.series(method):
            if r.mean >= level:
                return r.budget
        return None

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in sorted(self.rows, key=lambda r: (r.budget, r.method))]}


def full_validation_scores(task: TaskRecord, pool, evaluator: Evaluator) -> dict[str, float]:
    items = list(task.validation)
    return {a: evaluate(evaluator, a, items, task.metric) for a in _adapter_ids(pool)}


def budget_sweep(
    task: TaskRecord,
    pool,
    evaluator: Evaluator,
    budgets: Sequence[int],
    runs: int = 100,
    seed: int = 0,
    sh: ShConfig = ShConfig(),
) -> SweepTable:
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ConfigError("budgets must be ascending")
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    truth = full_validation_scores(task, pool, evaluator)
    best = max(truth.values())
    if best <= 0:
        raise ConfigError(f"task {task.id}: every adapter scores 0 on the full validation set")
    n, n_items = len(truth), len(task.validation)
    rows = []
    for budget in budgets:
        cfg = sh_config_for_budget(n, n_items, budget, sh)
        results = {m: [] for m in METHODS}
        spent = {m: [] for m in METHODS}
        for run in range(runs):
            run_seed = (seed * 1_000_003 + run * 7919 + key_int(budget)) & 0x7FFFFFFF
            u = uniform_selection(task, pool, evaluator, budget, run_seed)
            s = successive_halving(task, pool, evaluator, dataclasses.replace(cfg, seed=run_seed))
            for m, outcome in (("uniform", u), ("successive_halving", s)):
                results[m].append(100.0 * truth[outcome.winner] / best)
                spent[m].append(outcome.total_budget_spent)
        for m in METHODS:
            vals = np.asarray(results[m])
            rows.append(SweepRow(budget, m, float(vals.mean()), float(vals.std()), runs, float(np.mean(spent[m]))))
    return SweepTable(rows)


def average_tables(tables: Sequence[SweepTable]) -> SweepTable:
    """Average several per-task tables that share the same budget grid."""
    grouped: dict[tuple[int, str], list[SweepRow]] = {}
    for t in tables:
        for r in t.rows:
            grouped.setdefault((r.budget, r.method), []).append(r)
    rows = []
    for (budget, method), rs in sorted(grouped.items()):
        rows.append(
            SweepRow(
                budget,
                method,
                float(np.mean([r.mean for r in rs])),
                float(np.mean([r.std for r in rs])),
                rs[0].runs,
                float(np.mean([r.mean_spent for r in rs])),
            )
        )
    return SweepTable(rows)


def default_budgets(n_adapters: int, n_items: int, sh: ShConfig = ShConfig()) -> list[int]:
    """Grid from one sample per adapter up to the point both strategies see every item."""
    top = max(n_adapters * n_items, sh_cost(n_adapters, n_items, dataclasses.replace(sh, base_samples=n_items)))
    grid = set()
    per = 1
    while n_adapters * per <= top:
        grid.add(n_adapters * per)
        per = per + 1 if per < 16 else int(per * 1.25) + 1
    grid.add(top)
    return sorted(grid)
