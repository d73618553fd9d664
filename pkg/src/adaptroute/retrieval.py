"""Task representations and query-time top-K task retrieval."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, TaskRecord
from .encoders import INSTRUCTION, Encoder
from .errors import (
    ConfigError,
    DimensionError,
    EmptyCatalogError,
    EmptyTaskError,
    EncoderMismatchError,
    ValidationError,
)
from .seeding import derive_rng

DEFAULT_TEMPERATURE = 0.2
DEFAULT_K = 3
DEFAULT_SAMPLES = 32


@dataclass(frozen=True)
class RetrievedTask:
    task_id: str
    similarity: float
    probability: float


@dataclass(frozen=True)
class RetrievalResult:
    entries: tuple[RetrievedTask, ...]
    temperature: float

    @property
    def task_ids(self) -> list[str]:
        return [e.task_id for e in self.entries]


def build_task_representation(
    task: TaskRecord, encoder: Encoder, m: int = DEFAULT_SAMPLES, seed: int = 0, instruction: str = INSTRUCTION
) -> np.ndarray:
    """Mean embedding of ``min(m, |validation|)`` validation inputs sampled without replacement."""
    n = len(task.validation)
    if n == 0:
        raise EmptyTaskError(f"task {task.id} has no validation items")
    if m <= 0:
        raise ConfigError(f"m must be positive, got {m}")
    if m >= n:
        chosen = range(n)
    else:
        chosen = sorted(derive_rng(seed, task.id).choice(n, size=m, replace=False).tolist())
    embs = encoder.encode_many((task.validation[i].input for i in chosen), instruction)
    return embs.mean(axis=0)


def with_representations(catalog: Catalog, encoder: Encoder, m: int = DEFAULT_SAMPLES, seed: int = 0) -> Catalog:
    tasks = {}
    for tid, task in catalog.tasks.items():
        rep = build_task_representation(task, encoder, m, seed)
        if not np.any(rep):
            raise ValidationError(f"task {tid}: representation has zero norm")
        tasks[tid] = task.replace(representation=rep)
    return catalog.replace(
        tasks=tasks, encoder=encoder.spec, encoder_fingerprint=encoder.fingerprint
    ).validate()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    if na == 0.0:
        return 0.0
    nb = math.sqrt(float(np.dot(b, b)))
    return float(np.dot(a, b)) / (na * nb)


def softmax(scores, temperature: float) -> list[float]:
    top = max(scores)
    exps = [math.exp((s - top) / temperature) for s in scores]
    total = math.fsum(exps)
    return [e / total for e in exps]


def retrieve(
    catalog: Catalog,
    query: np.ndarray,
    k: int = DEFAULT_K,
    temperature: float = DEFAULT_TEMPERATURE,
    fingerprint: str | None = None,
) -> RetrievalResult:
    """Score every represented task by cosine similarity and keep the top ``k``.

    Ties are broken by task id.  Probabilities are a temperature softmax
    over the retained scores only, so they sum to one over the result.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    ids, reps = catalog.representation_index
    if not ids:
        raise EmptyCatalogError("catalog has no task representations to route against")
    if fingerprint is not None and fingerprint != catalog.encoder_fingerprint:
        raise EncoderMismatchError(
            f"query encoder {fingerprint!r} does not match catalog encoder {catalog.encoder_fingerprint!r}"
        )
    query = np.asarray(query, dtype=np.float64)
    sims = [cosine(query, rep) for rep in reps]
    top = heapq.nsmallest(k, range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    probs = softmax([sims[i] for i in top], temperature)
    entries = tuple(RetrievedTask(ids[i], sims[i], p) for i, p in zip(top, probs))
    return RetrievalResult(entries, float(temperature))
