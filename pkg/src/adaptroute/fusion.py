"""Adapter composition and the query routing pipeline.

Three composition modes are provided:

* output-space fusion (the serving path): each selected adapter computes its
  own low-rank delta and the deltas are summed with the routing weights, so
  adapters of different ranks compose freely;
* parameter interpolation of two adapters, ``lam * dW_a + (1 - lam) * dW_b``;
* parameter-product fusion, which mixes the ``A`` and ``B`` factors
  separately and therefore picks up cross terms ``B_i A_j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .catalog import Catalog
from .encoders import INSTRUCTION, Encoder
from .errors import ConfigError, EmptyPoolError, IncompatibleAdaptersError, NotFoundError, UnpairedTaskError
from .linalg import LayerDelta, LoraAdapter, ToyBackend, forward, lora_delta
from .retrieval import DEFAULT_K, DEFAULT_TEMPERATURE, RetrievalResult, retrieve

WEIGHT_TOL = 1e-12


class CompositionMode(str, Enum):
    OUTPUT_SPACE = "output_space"
    PARAM_INTERP = "param_interp"
    PARAM_PRODUCT = "param_product"


@dataclass(frozen=True)
class DecisionEntry:
    task_id: str
    adapter_id: str
    weight: float


@dataclass(frozen=True)
class RoutingDecision:
    query_id: str
    entries: tuple[DecisionEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ConfigError("routing decision needs at least one entry")
        for e in self.entries:
            if not 0.0 <= e.weight <= 1.0 + WEIGHT_TOL:
                raise ConfigError(f"weight {e.weight} for adapter {e.adapter_id} outside [0, 1]")
        total = sum(e.weight for e in self.entries)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"routing weights sum to {total!r}, expected 1")

    def weighted_adapters(self, pool: dict[str, LoraAdapter]) -> list[tuple[float, LoraAdapter]]:
        out = []
        for e in self.entries:
            try:
                out.append((e.weight, pool[e.adapter_id]))
            except KeyError:
                raise NotFoundError(f"adapter {e.adapter_id!r} not in pool") from None
        return out

    def to_dict(self) -> dict:
        return {
            "entries": [{"adapter_id": e.adapter_id, "task_id": e.task_id, "weight": e.weight} for e in self.entries],
            "query_id": self.query_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RoutingDecision":
        return cls(d["query_id"], tuple(DecisionEntry(e["task_id"], e["adapter_id"], e["weight"]) for e in d["entries"]))


def compose_output_space(
    backend: ToyBackend, decision: RoutingDecision, pool: dict[str, LoraAdapter], x: np.ndarray
) -> np.ndarray:
    return forward(backend, x, decision.weighted_adapters(pool))


class InterpolatedDelta:
    """Per-layer delta operator ``lam * delta_a(x) + (1 - lam) * delta_b(x)``."""

    def __init__(self, a: LoraAdapter, b: LoraAdapter, lam: float):
        self.a, self.b, self.lam = a, b, float(lam)

    @property
    def layer_indices(self) -> frozenset[int]:
        return self.a.layer_indices

    def __call__(self, layer_index: int, x: np.ndarray) -> np.ndarray:
        return self.lam * lora_delta(self.a, layer_index, x) + (1.0 - self.lam) * lora_delta(self.b, layer_index, x)

    def dense(self, layer_index: int) -> np.ndarray:
        """The merged weight update ``lam * dW_a + (1 - lam) * dW_b`` as a matrix."""
        la, lb = self.a.layer(layer_index), self.b.layer(layer_index)
        return self.lam * self.a.scale * (la.B @ la.A) + (1.0 - self.lam) * self.b.scale * (lb.B @ lb.A)


def compose_param_interp(a: LoraAdapter, b: LoraAdapter, lam: float) -> InterpolatedDelta:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if a.layer_indices != b.layer_indices:
        raise IncompatibleAdaptersError(f"adapters {a.id} and {b.id} cover different layers")
    for i in a.layer_indices:
        la, lb = a.layer(i), b.layer(i)
        if (la.in_dim, la.out_dim) != (lb.in_dim, lb.out_dim):
            raise IncompatibleAdaptersError(f"adapters {a.id} and {b.id} differ in shape at layer {i}")
    return InterpolatedDelta(a, b, lam)


def compose_lorahub(adapters: Sequence[LoraAdapter], weights: Sequence[float]) -> LoraAdapter:
    """Synthetic adapter with ``A' = sum w_i A_i`` and ``B' = sum w_i B_i`` per layer."""
    if not adapters:
        raise IncompatibleAdaptersError("need at least one adapter")
    if len(weights) != len(adapters):
        raise IncompatibleAdaptersError(f"{len(weights)} weights for {len(adapters)} adapters")
    first = adapters[0]
    for a in adapters[1:]:
        if a.rank != first.rank:
            raise IncompatibleAdaptersError(f"rank mismatch: {first.id} has {first.rank}, {a.id} has {a.rank}")
        if a.alpha != first.alpha:
            raise IncompatibleAdaptersError(f"alpha mismatch: {first.id} has {first.alpha}, {a.id} has {a.alpha}")
        if a.layer_indices != first.layer_indices:
            raise IncompatibleAdaptersError(f"adapters {first.id} and {a.id} cover different layers")
    layers = []
    for i in sorted(first.layer_indices):
        shapes = {(a.layer(i).A.shape, a.layer(i).B.shape) for a in adapters}
        if len(shapes) != 1:
            raise IncompatibleAdaptersError(f"adapter shapes differ at layer {i}")
        A = sum(w * a.layer(i).A for w, a in zip(weights, adapters))
        B = sum(w * a.layer(i).B for w, a in zip(weights, adapters))
        layers.append(LayerDelta(i, A, B))
    name = "lorahub(" + "+".join(a.id for a in adapters) + ")"
    return LoraAdapter(name, tuple(layers), first.rank, first.alpha)


def decision_from_retrieval(catalog: Catalog, result: RetrievalResult, query_id: str = "") -> RoutingDecision:
    """Resolve retrieved tasks to adapters; tasks sharing an adapter pool their weight."""
    merged: dict[str, list] = {}
    for e in result.entries:
        adapter = catalog.pairing.get(e.task_id)
        if adapter is None:
            raise UnpairedTaskError(f"retrieved task {e.task_id!r} has no paired adapter")
        if adapter in merged:
            merged[adapter][1] += e.probability
        else:
            merged[adapter] = [e.task_id, e.probability]
    entries = tuple(DecisionEntry(task, adapter, min(w, 1.0)) for adapter, (task, w) in merged.items())
    return RoutingDecision(query_id, entries)


def route(
    catalog: Catalog,
    encoder: Encoder,
    query: str,
    k: int = DEFAULT_K,
    temperature: float = DEFAULT_TEMPERATURE,
    query_id: str = "",
    instruction: str = INSTRUCTION,
) -> RoutingDecision:
    if not catalog.pool:
        raise EmptyPoolError("catalog has an empty adapter pool; routing is disabled")
    embedding = encoder.encode(instruction, query)
    result = retrieve(catalog, embedding, k, temperature, fingerprint=encoder.fingerprint)
    return decision_from_retrieval(catalog, result, query_id)
