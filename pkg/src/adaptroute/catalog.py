"""Task database, adapter pool and the task-to-adapter pairing map.

A ``Catalog`` is an immutable snapshot.  Every operation that changes it
returns a new instance; the router reads snapshots without locking.

On disk a catalog is a JSON document that references its adapter pool by a
path relative to the catalog file::

    {"adapter_pool_path": "...", "encoder": {...}, "encoder_fingerprint": "...",
     "pairing": {task: adapter}, "tasks": [...], "validation_cap": 200}
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoders import EncoderSpec
from .errors import FormatError, NotFoundError, ValidationError
from .linalg import LoraAdapter, dump_json, load_pool, read_json, save_pool
from .metrics import MetricKind

DEFAULT_VALIDATION_CAP = 200


class Regime(str, Enum):
    NON_OOD = "non-ood"
    SEMI_OOD = "semi-ood"
    OOD = "ood"


@dataclass(frozen=True)
class ValidationItem:
    input: str
    target: str

    def __post_init__(self):
        if not isinstance(self.input, str) or not self.input:
            raise ValidationError("validation item input must be non-empty")
        if not isinstance(self.target, str):
            raise ValidationError("validation item target must be a string")


@dataclass(frozen=True, eq=False)
class TaskRecord:
    id: str
    metric: MetricKind
    validation: tuple[ValidationItem, ...]
    representation: np.ndarray | None = None
    # adapter trained on this task, when known; used as the oracle reference
    aligned_adapter: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("task id must be a non-empty string")
        try:
            object.__setattr__(self, "metric", MetricKind(self.metric))
        except ValueError:
            raise ValidationError(f"task {self.id}: unknown metric {self.metric!r}") from None
        object.__setattr__(self, "validation", tuple(self.validation))
        if self.representation is not None:
            rep = np.array(self.representation, dtype=np.float64)
            if rep.ndim != 1 or not np.all(np.isfinite(rep)):
                raise ValidationError(f"task {self.id}: representation must be a finite vector")
            rep.flags.writeable = False
            object.__setattr__(self, "representation", rep)

    def replace(self, **changes) -> "TaskRecord":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Catalog:
    tasks: dict[str, TaskRecord] = field(default_factory=dict)
    pool: dict[str, LoraAdapter] = field(default_factory=dict)
    pairing: dict[str, str] = field(default_factory=dict)
    encoder_fingerprint: str = ""
    encoder: EncoderSpec | None = None
    validation_cap: int = DEFAULT_VALIDATION_CAP
    pool_path: str | None = None

    def replace(self, **changes) -> "Catalog":
        for key in ("tasks", "pool", "pairing"):
            if key not in changes:
                changes[key] = dict(getattr(self, key))
        return dataclasses.replace(self, **changes)

    def validate(self) -> "Catalog":
        if self.encoder is not None and self.encoder.fingerprint != self.encoder_fingerprint:
            raise ValidationError(
                f"encoder_fingerprint {self.encoder_fingerprint!r} does not match encoder spec "
                f"({self.encoder.fingerprint!r})"
            )
        dims = set()
        for tid, task in self.tasks.items():
            if task.id != tid:
                raise ValidationError(f"task {task.id!r} stored under key {tid!r}")
            if not 1 <= len(task.validation) <= self.validation_cap:
                raise ValidationError(
                    f"task {tid}: validation set has {len(task.validation)} items "
                    f"(allowed 1..{self.validation_cap})"
                )
            if task.representation is not None:
                if not self.encoder_fingerprint:
                    raise ValidationError(f"task {tid}: representation stored without an encoder fingerprint")
                if not np.any(task.representation):
                    raise ValidationError(f"task {tid}: zero-norm representation")
                dims.add(task.representation.shape[0])
        if len(dims) > 1:
            raise ValidationError(f"task representations have mixed dimensions {sorted(dims)}")
        if dims and self.encoder is not None and dims != {self.encoder.dimension}:
            raise ValidationError(f"representation dimension {dims} differs from encoder dimension {self.encoder.dimension}")
        for aid, adapter in self.pool.items():
            if adapter.id != aid:
                raise ValidationError(f"adapter {adapter.id!r} stored under key {aid!r}")
        for tid, aid in self.pairing.items():
            if tid not in self.tasks:
                raise ValidationError(f"pairing references unknown task {tid!r}")
            if aid not in self.pool:
                raise ValidationError(f"pairing for task {tid!r} references missing adapter {aid!r}")
        return self

    @property
    def unpaired(self) -> list[str]:
        return sorted(t for t in self.tasks if t not in self.pairing)

    @cached_property
    def representation_index(self) -> tuple[list[str], list[np.ndarray]]:
        ids = sorted(t for t, rec in self.tasks.items() if rec.representation is not None)
        return ids, [self.tasks[t].representation for t in ids]


def build_catalog(
    tasks: Iterable[TaskRecord],
    pool: Iterable[LoraAdapter] | dict[str, LoraAdapter] = (),
    pairing: dict[str, str] | None = None,
    encoder: EncoderSpec | None = None,
    validation_cap: int = DEFAULT_VALIDATION_CAP,
) -> Catalog:
    task_map: dict[str, TaskRecord] = {}
    for t in tasks:
        if t.id in task_map:
            raise ValidationError(f"duplicate task id {t.id!r}")
        task_map[t.id] = t
    adapters = pool.values() if isinstance(pool, dict) else pool
    pool_map: dict[str, LoraAdapter] = {}
    for a in adapters:
        if a.id in pool_map:
            raise ValidationError(f"duplicate adapter id {a.id!r}")
        pool_map[a.id] = a
    return Catalog(
        tasks=task_map,
        pool=pool_map,
        pairing=dict(pairing or {}),
        encoder_fingerprint=encoder.fingerprint if encoder else "",
        encoder=encoder,
        validation_cap=validation_cap,
    ).validate()


# -- serialization -----------------------------------------------------------


def task_to_dict(task: TaskRecord) -> dict:
    d = {
        "id": task.id,
        "metric": task.metric.value,
        "validation": [{"input": v.input, "target": v.target} for v in task.validation],
        "representation": None if task.representation is None else task.representation.tolist(),
    }
    if task.aligned_adapter is not None:
        d["aligned_adapter"] = task.aligned_adapter
    return d


def task_from_dict(d: dict) -> TaskRecord:
    try:
        return TaskRecord(
            id=d["id"],
            metric=d["metric"],
            validation=tuple(ValidationItem(v["input"], v["target"]) for v in d["validation"]),
            representation=d.get("representation"),
            aligned_adapter=d.get("aligned_adapter"),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed task record {d.get('id', '?') if isinstance(d, dict) else d!r}: {exc}") from exc


def load_tasks(path: str | Path) -> list[TaskRecord]:
    doc = read_json(path)
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise FormatError(f'{path}: expected an object with a "tasks" list')
    return [task_from_dict(t) for t in doc["tasks"]]


def catalog_to_dict(catalog: Catalog) -> dict:
    return {
        "adapter_pool_path": catalog.pool_path,
        "encoder": catalog.encoder.to_dict() if catalog.encoder else None,
        "encoder_fingerprint": catalog.encoder_fingerprint,
        "pairing": dict(sorted(catalog.pairing.items())),
        "tasks": [task_to_dict(catalog.tasks[t]) for t in sorted(catalog.tasks)],
        "validation_cap": catalog.validation_cap,
    }


def catalog_from_dict(doc: dict, pool: dict[str, LoraAdapter]) -> Catalog:
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise FormatError('catalog must be an object with a "tasks" list')
    pairing = doc.get("pairing") or {}
    if not isinstance(pairing, dict):
        raise FormatError('"pairing" must be an object')
    encoder = EncoderSpec.from_dict(doc["encoder"]) if doc.get("encoder") else None
    tasks = [task_from_dict(t) for t in doc["tasks"]]
    task_map = {}
    for t in tasks:
        if t.id in task_map:
            raise ValidationError(f"duplicate task id {t.id!r}")
        task_map[t.id] = t
    return Catalog(
        tasks=task_map,
        pool=pool,
        pairing=dict(pairing),
        encoder_fingerprint=doc.get("encoder_fingerprint") or "",
        encoder=encoder,
        validation_cap=int(doc.get("validation_cap", DEFAULT_VALIDATION_CAP)),
        pool_path=doc.get("adapter_pool_path"),
    ).validate()


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: catalog must be a JSON object")
    pool_ref = doc.get("adapter_pool_path")
    pool = load_pool(path.parent / pool_ref) if pool_ref else {}
    return catalog_from_dict(doc, pool)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    """Write the catalog and its adapter pool with canonical, byte-stable formatting."""
    catalog.validate()
    path = Path(path)
    if catalog.pool_path is None and catalog.pool:
        catalog = catalog.replace(pool_path=f"{path.stem}.adapters.json")
    if catalog.pool_path is not None:
        save_pool(catalog.pool, path.parent / catalog.pool_path)
    dump_json(catalog_to_dict(catalog), path)


def remove_for_regime(catalog: Catalog, target_task: str, regime: Regime | str) -> Catalog:
    """Return the catalog as seen when evaluating queries of ``target_task``.

    NON_OOD keeps everything.  SEMI_OOD drops the task's adapter (the
    declared aligned adapter, else the paired one) and every pairing entry
    that pointed at it, leaving those tasks unpaired until they are
    re-paired.  OOD additionally drops the task itself.
    """
    regime = Regime(regime)
    if target_task not in catalog.tasks:
        raise NotFoundError(f"unknown task {target_task!r}")
    if regime is Regime.NON_OOD:
        return catalog.replace()
    tasks = dict(catalog.tasks)
    pool = dict(catalog.pool)
    pairing = dict(catalog.pairing)
    adapter = catalog.tasks[target_task].aligned_adapter or pairing.get(target_task)
    if adapter is not None:
        pool.pop(adapter, None)
        pairing = {t: a for t, a in pairing.items() if a != adapter}
    if regime is Regime.OOD:
        tasks.pop(target_task)
        pairing.pop(target_task, None)
    return catalog.replace(tasks=tasks, pool=pool, pairing=pairing)


def snapshot(catalog: Catalog) -> dict:
    """Deep, comparable snapshot of a catalog (used to check immutability)."""
    return copy.deepcopy(catalog_to_dict(catalog)) | {"pool": sorted(catalog.pool)}
