"""Evaluators backed by precomputed adapter outputs.

A replay file holds one JSON object per line::

    {"adapter_id": "...", "input": "...", "prediction": "..."}

Pairing only needs single-adapter outputs, so a replay cache serves it
completely.  Fused outputs cannot be reconstructed from cached
single-adapter generations, so ``score_decision`` accepts only decisions
that put all weight on one adapter.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .catalog import ValidationItem
from .errors import ConfigError, FormatError, IoError, NotFoundError
from .metrics import MetricKind, score


class ReplayEvaluator:
    def __init__(self, outputs: dict[tuple[str, str], str]):
        self.outputs = outputs

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayEvaluator":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        outputs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                outputs[(rec["adapter_id"], rec["input"])] = str(rec["prediction"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad replay line ({exc})") from exc
        return cls(outputs)

    def prediction(self, adapter_id: str, item: ValidationItem) -> str:
        try:
            return self.outputs[(adapter_id, item.input)]
        except KeyError:
            raise NotFoundError(f"no cached output of {adapter_id!r} for input {item.input!r}") from None

    def score_samples(self, adapter_id: str, items: Sequence[ValidationItem], metric: MetricKind) -> list[float]:
        return [score(metric, self.prediction(adapter_id, it), it.target) for it in items]

    def score_decision(self, decision, pool, items: Sequence[ValidationItem], metric: MetricKind) -> list[float]:
        active = [e for e in decision.entries if e.weight > 0]
        if len(active) != 1:
            raise ConfigError("replayed outputs cannot score a fused decision; route with k=1")
        return self.score_samples(active[0].adapter_id, items, metric)
