"""Seeded synthetic worlds for desk-scale verification.

A world has ``T`` tasks and ``N >= T`` adapters over a small two-layer toy
backend.  Tasks sit on a ring and are built from ``S`` shared skills: task
``i``'s ideal update is a bump-shaped mixture of the skills nearest to it on
the ring, so neighbouring tasks share skills.  Each skill is a rank-2 LoRA
factor pair per layer; a mixture of skills is itself a LoRA adapter whose
rank is the sum of the skill ranks.

* Adapters ``0..T-1`` (after an id shuffle) are the aligned adapters: each
  implements its task's ideal mixture exactly, so it is the unique best
  adapter for that task under the noiseless scorer.
* The remaining ``N - T`` adapters are siblings: perturbed and rescaled
  copies of some task's mixture, giving every task a few near competitors.

Query embeddings are drawn around per-task anchors built from the same skill
mixture, so tasks close on the ring are also close in embedding space.
Model inputs are standard normal vectors independent of the task.

Scoring an output ``y`` on an item of task ``i`` with model input ``x``::

    exp(-|y - y*(x)|^2 / (2 * sharpness^2 * spread_i))

where ``y*`` is the backend output under the aligned adapter and
``spread_i`` is the mean squared size of task ``i``'s ideal update.  The
pairing evaluator adds a fixed per-(adapter, item) Gaussian perturbation of
standard deviation ``eval_noise`` and clips to [0, 1].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from functools import cached_property
from typing import Sequence

import numpy as np

from ..catalog import Catalog, TaskRecord, ValidationItem, build_catalog
from ..encoders import INSTRUCTION, PrecomputedEncoder, request_id
from ..errors import ConfigError, NotFoundError
from ..fusion import RoutingDecision
from ..linalg import BackendLayer, LayerDelta, LoraAdapter, ToyBackend, forward_batch
from ..metrics import MetricKind
from ..retrieval import DEFAULT_SAMPLES, with_representations
from ..seeding import derive_rng


@dataclass(frozen=True)
class WorldSpec:
    tasks: int = 12
    adapters: int = 24
    embed_dim: int = 32
    query_noise: float = 0.05
    eval_noise: float = 0.0
    seed: int = 0
    skills: int | None = None
    # bump width in units of skill spacing on the ring
    overlap: float = 1.0
    # how far sibling adapters stray from their parent mixture (min, max)
    sibling_spread: tuple[float, float] = (0.15, 0.6)
    # weight of a task-private direction in its embedding anchor
    anchor_private: float = 0.35
    sharpness: float = 0.5
    # per-item perturbation of the target output, relative to the task's update size
    label_noise: float = 0.0
    validation_size: int = 200
    test_size: int = 20
    input_dim: int = 16
    hidden_dim: int = 16
    output_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "sibling_spread", tuple(self.sibling_spread))
        if self.tasks < 2:
            raise ConfigError("a world needs at least 2 tasks")
        if self.adapters < self.tasks:
            raise ConfigError("a world needs at least as many adapters as tasks")
        if self.embed_dim < 2 or self.validation_size < 1 or self.test_size < 0:
            raise ConfigError("embed_dim, validation_size and test_size must be positive")
        if min(self.query_noise, self.eval_noise, self.label_noise) < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.skills is not None and self.skills < 1:
            raise ConfigError("skills must be >= 1")

    @property
    def n_skills(self) -> int:
        return self.skills or self.tasks

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sibling_spread"] = list(self.sibling_spread)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world spec keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


SKILL_RANK = 2


def _ring_bumps(centers: np.ndarray, n_skills: int, width: float) -> np.ndarray:
    pos = np.arange(n_skills) / n_skills
    d = np.abs(centers[:, None] - pos[None, :])
    d = np.minimum(d, 1.0 - d) * n_skills
    w = np.exp(-0.5 * (d / width) ** 2)
    return w / w.sum(axis=1, keepdims=True)


def _mixture_adapter(adapter_id: str, mix: np.ndarray, skills_A, skills_B, n_layers: int) -> LoraAdapter:
    rank = SKILL_RANK * len(mix)
    alpha = 2.0 * rank
    layers = []
    for layer in range(n_layers):
        # scale alpha/rank = 2 is undone by halving A
        A = np.vstack([0.5 * m * skills_A[c][layer] for c, m in enumerate(mix)])
        B = np.hstack([skills_B[c][layer] for c in range(len(mix))])
        layers.append(LayerDelta(layer, A, B))
    return LoraAdapter(adapter_id, tuple(layers), rank, alpha)


@dataclass(frozen=True)
class WorldItem:
    task_id: str
    split: str
    index: int
    x: np.ndarray
    embedding: np.ndarray


class SyntheticWorld:
    def __init__(self, spec: WorldSpec):
        self.spec = spec
        rng = derive_rng(spec.seed, "world")
        S, T, N = spec.n_skills, spec.tasks, spec.adapters
        dims = [spec.input_dim, spec.hidden_dim, spec.output_dim]
        self.backend = ToyBackend(
            (
                BackendLayer(rng.standard_normal((dims[1], dims[0])) / np.sqrt(dims[0]), "tanh"),
                BackendLayer(rng.standard_normal((dims[2], dims[1])) / np.sqrt(dims[1]), "identity"),
            )
        )
        skills_A = [[rng.standard_normal((SKILL_RANK, dims[l])) / np.sqrt(dims[l]) for l in range(2)] for _ in range(S)]
        skills_B = [[rng.standard_normal((dims[l + 1], SKILL_RANK)) / np.sqrt(SKILL_RANK) for l in range(2)] for _ in range(S)]

        width = spec.overlap
        task_centers = np.arange(T) / T
        self.task_mix = _ring_bumps(task_centers, S, width)
        self.task_ids = [f"task_{i:02d}" for i in range(T)]

        adapter_names = [f"adapter_{j:03d}" for j in rng.permutation(N)]
        pool = {}
        self.aligned = {}
        self.sibling_of = {}
        for i in range(T):
            aid = adapter_names[i]
            pool[aid] = _mixture_adapter(aid, self.task_mix[i], skills_A, skills_B, 2)
            self.aligned[self.task_ids[i]] = aid
        lo, hi = spec.sibling_spread
        for j in range(T, N):
            parent = (j - T) % T
            spread = rng.uniform(lo, hi)
            mix = np.abs(self.task_mix[parent] + spread * rng.standard_normal(S) / np.sqrt(S))
            mix = mix / mix.sum() * rng.uniform(0.85, 1.1)
            aid = adapter_names[j]
            pool[aid] = _mixture_adapter(aid, mix, skills_A, skills_B, 2)
            self.sibling_of[aid] = self.task_ids[parent]
        self.pool = dict(sorted(pool.items()))

        skill_dirs = rng.standard_normal((S, spec.embed_dim))
        skill_dirs /= np.linalg.norm(skill_dirs, axis=1, keepdims=True)
        private = rng.standard_normal((T, spec.embed_dim))
        private /= np.linalg.norm(private, axis=1, keepdims=True)
        anchors = self.task_mix @ skill_dirs
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        anchors = anchors + spec.anchor_private * private
        self.anchors = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)

        self.items: dict[str, WorldItem] = {}
        self.validation: dict[str, list[ValidationItem]] = {}
        self.test: dict[str, list[ValidationItem]] = {}
        for i, tid in enumerate(self.task_ids):
            task_rng = derive_rng(spec.seed, "items", tid)
            for split, count, bucket in (("v", spec.validation_size, self.validation), ("x", spec.test_size, self.test)):
                rows = []
                for n in range(count):
                    name = f"{tid}/{split}{n:03d}"
                    x = task_rng.standard_normal(spec.input_dim)
                    jitter = task_rng.standard_normal(spec.embed_dim) * (spec.query_noise / np.sqrt(spec.embed_dim))
                    self.items[name] = WorldItem(tid, split, n, x, self.anchors[i] + jitter)
                    rows.append(ValidationItem(name, tid))
                bucket[tid] = rows

        self._item_index = {name: k for k, name in enumerate(self.items)}
        self._X = np.vstack([it.x for it in self.items.values()])
        targets = np.empty((len(self.items), spec.output_dim))
        base = forward_batch(self.backend, self._X, ())
        for tid in self.task_ids:
            rows = [self._item_index[n] for n, it in self.items.items() if it.task_id == tid]
            targets[rows] = forward_batch(self.backend, self._X[rows], [(1.0, self.pool[self.aligned[tid]])])
        spread = {}
        for tid in self.task_ids:
            rows = [self._item_index[it.input] for it in self.validation[tid]]
            spread[tid] = float(np.mean(np.sum((targets[rows] - base[rows]) ** 2, axis=1)))
        self._spread = np.array([spread[self.items[n].task_id] for n in self.items])
        if spec.label_noise > 0:
            label_rng = derive_rng(spec.seed, "labels")
            scale = spec.label_noise * np.sqrt(self._spread / spec.output_dim)
            targets = targets + scale[:, None] * label_rng.standard_normal(targets.shape)
        self._targets = targets
        self._adapter_scores: dict[str, np.ndarray] = {}
        self._noise: dict[str, np.ndarray] = {}

    # -- lookups ---------------------------------------------------------

    def item(self, name: str) -> WorldItem:
        try:
            return self.items[name]
        except KeyError:
            raise NotFoundError(f"item {name!r} is not part of this world") from None

    def rows(self, items: Sequence[ValidationItem]) -> np.ndarray:
        try:
            return np.fromiter((self._item_index[it.input] for it in items), dtype=np.int64, count=len(items))
        except KeyError as exc:
            raise NotFoundError(f"item {exc.args[0]!r} is not part of this world") from None

    @cached_property
    def encoder(self) -> PrecomputedEncoder:
        table = {request_id(INSTRUCTION, name): it.embedding for name, it in self.items.items()}
        return PrecomputedEncoder(table, self.spec.embed_dim, f"world-{self.spec.fingerprint}.embeddings.jsonl")

    def tasks(self) -> list[TaskRecord]:
        return [
            TaskRecord(tid, MetricKind.EXACT_MATCH, tuple(self.validation[tid]), aligned_adapter=self.aligned[tid])
            for tid in self.task_ids
        ]

    def catalog(self, m: int = DEFAULT_SAMPLES, seed: int | None = None, pairing: dict | None = None) -> Catalog:
        """Catalog with representations built from the world's embeddings; unpaired unless ``pairing`` given."""
        cat = build_catalog(self.tasks(), self.pool, pairing=pairing)
        return with_representations(cat, self.encoder, m, self.spec.seed if seed is None else seed)

    def oracle_catalog(self, **kw) -> Catalog:
        return self.catalog(pairing=dict(self.aligned), **kw)

    # -- scoring ---------------------------------------------------------

    def _score_outputs(self, rows: np.ndarray, Y: np.ndarray) -> np.ndarray:
        err = np.sum((Y - self._targets[rows]) ** 2, axis=1)
        return np.exp(-err / (2 * self.spec.sharpness**2 * self._spread[rows]))

    def clean_adapter_scores(self, adapter_id: str) -> np.ndarray:
        """Noiseless score of ``adapter_id`` (alone, weight 1) on every world item."""
        hit = self._adapter_scores.get(adapter_id)
        if hit is None:
            try:
                adapter = self.pool[adapter_id]
            except KeyError:
                raise NotFoundError(f"adapter {adapter_id!r} is not part of this world") from None
            rows = np.arange(len(self.items))
            hit = self._score_outputs(rows, forward_batch(self.backend, self._X, [(1.0, adapter)]))
            self._adapter_scores[adapter_id] = hit
        return hit

    def noise(self, adapter_id: str) -> np.ndarray:
        hit = self._noise.get(adapter_id)
        if hit is None:
            rng = derive_rng(self.spec.seed, "eval-noise", adapter_id)
            hit = self._noise[adapter_id] = self.spec.eval_noise * rng.standard_normal(len(self.items))
        return hit

    def decision_scores(self, decision: RoutingDecision, pool: dict[str, LoraAdapter], items) -> np.ndarray:
        rows = self.rows(items)
        Y = forward_batch(self.backend, self._X[rows], decision.weighted_adapters(pool))
        return self._score_outputs(rows, Y)

    def evaluator(self) -> "WorldEvaluator":
        return WorldEvaluator(self)

    def affinity(self) -> np.ndarray:
        """Noiseless mean validation score, tasks x adapters (sorted ids)."""
        out = np.empty((len(self.task_ids), len(self.pool)))
        for i, tid in enumerate(self.task_ids):
            rows = self.rows(self.validation[tid])
            for j, aid in enumerate(self.pool):
                out[i, j] = self.clean_adapter_scores(aid)[rows].mean()
        return out


class WorldEvaluator:
    """Evaluator and decision scorer backed by a ``SyntheticWorld``.

    ``score_samples`` (used for pairing) includes the world's evaluation
    noise; ``score_decision`` (used for end-to-end evaluation) is noiseless.
    The metric argument is accepted for interface compatibility and ignored.
    """

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def score_samples(self, adapter_id: str, items, metric=None) -> np.ndarray:
        rows = self.world.rows(items)
        s = self.world.clean_adapter_scores(adapter_id)[rows]
        if self.world.spec.eval_noise > 0:
            s = np.clip(s + self.world.noise(adapter_id)[rows], 0.0, 1.0)
        return s

    def score_decision(self, decision: RoutingDecision, pool, items, metric=None) -> np.ndarray:
        return self.world.decision_scores(decision, pool, items)


def generate_world(spec: WorldSpec | dict) -> SyntheticWorld:
    if isinstance(spec, dict):
        spec = WorldSpec.from_dict(spec)
    return SyntheticWorld(spec)
