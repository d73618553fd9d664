"""Dense float64 arithmetic, LoRA adapters and the toy base-model backend.

Vectors and matrices are plain read-only ``numpy.ndarray`` objects of dtype
float64.  Adapters and backends validate shapes on construction so the hot
paths (``lora_delta`` and ``forward``) only check what depends on the input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, FormatError, IoError, MissingLayerError, ValidationError

ACTIVATIONS = {
    "identity": lambda h: h,
    "relu": lambda h: np.maximum(h, 0.0),
    "tanh": np.tanh,
}


def as_vector(values, name: str = "vector") -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by vector of length {x.shape}")
    return m @ x


@dataclass(frozen=True, eq=False)
class LayerDelta:
    layer_index: int
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if int(self.layer_index) != self.layer_index or self.layer_index < 0:
            raise ValidationError(f"layer_index must be a non-negative integer, got {self.layer_index}")
        object.__setattr__(self, "layer_index", int(self.layer_index))
        object.__setattr__(self, "A", as_matrix(self.A, "A"))
        object.__setattr__(self, "B", as_matrix(self.B, "B"))
        if self.A.shape[0] != self.B.shape[1]:
            raise DimensionError(
                f"layer {self.layer_index}: A has {self.A.shape[0]} rows but B has {self.B.shape[1]} cols"
            )

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    @property
    def out_dim(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    """A routable low-rank adapter: one ``(A, B)`` pair per covered layer.

    The update applied at a layer is ``(alpha / rank) * B @ A @ x``.
    """

    id: str
    layers: tuple[LayerDelta, ...]
    rank: int
    alpha: float
    _by_layer: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("adapter id must be a non-empty string")
        if int(self.rank) != self.rank or self.rank <= 0:
            raise ValidationError(f"adapter {self.id}: rank must be a positive integer")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"adapter {self.id}: alpha must be a positive real")
        layers = tuple(self.layers)
        by_layer = {}
        for ld in layers:
            if ld.A.shape[0] != self.rank:
                raise ValidationError(
                    f"adapter {self.id}: layer {ld.layer_index} has rank {ld.A.shape[0]}, expected {self.rank}"
                )
            if ld.layer_index in by_layer:
                raise ValidationError(f"adapter {self.id}: duplicate layer {ld.layer_index}")
            by_layer[ld.layer_index] = ld
        object.__setattr__(self, "rank", int(self.rank))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "_by_layer", by_layer)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def layer_indices(self) -> frozenset[int]:
        return frozenset(self._by_layer)

    def covers(self, layer_index: int) -> bool:
        return layer_index in self._by_layer

    def layer(self, layer_index: int) -> LayerDelta:
        try:
            return self._by_layer[layer_index]
        except KeyError:
            raise MissingLayerError(f"adapter {self.id} has no delta for layer {layer_index}") from None


def lora_delta(adapter: LoraAdapter, layer_index: int, x: np.ndarray) -> np.ndarray:
    ld = adapter.layer(layer_index)
    if x.ndim != 1 or x.shape[0] != ld.in_dim:
        raise DimensionError(
            f"adapter {adapter.id} layer {layer_index} expects input dim {ld.in_dim}, got {x.shape}"
        )
    return adapter.scale * (ld.B @ (ld.A @ x))


@dataclass(frozen=True, eq=False)
class BackendLayer:
    W: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "W", as_matrix(self.W, "W"))
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True, eq=False)
class ToyBackend:
    """Frozen stack of dense layers standing in for a base model."""

    layers: tuple[BackendLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("backend needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].W.shape[1] != layers[i - 1].W.shape[0]:
                raise DimensionError(
                    f"layer {i} expects input dim {layers[i].W.shape[1]}, "
                    f"previous layer outputs {layers[i - 1].W.shape[0]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def check_adapter(self, adapter: LoraAdapter) -> None:
        for ld in adapter.layers:
            if ld.layer_index >= len(self.layers):
                raise DimensionError(f"adapter {adapter.id} targets missing backend layer {ld.layer_index}")
            W = self.layers[ld.layer_index].W
            if ld.in_dim != W.shape[1] or ld.out_dim != W.shape[0]:
                raise DimensionError(
                    f"adapter {adapter.id} layer {ld.layer_index} is {ld.out_dim}x{ld.in_dim}, "
                    f"backend layer is {W.shape[0]}x{W.shape[1]}"
                )


WeightedAdapters = Sequence[tuple[float, LoraAdapter]]


def fused_delta(adapters: WeightedAdapters, layer_index: int, x: np.ndarray) -> np.ndarray | None:
    """Weighted sum of the deltas of every adapter covering ``layer_index``.

    Summation runs in adapter-id order so the floating-point result does not
    depend on how the caller ordered the set.  Returns None when no adapter
    covers the layer.
    """
    total = None
    for w, adapter in sorted(adapters, key=lambda wa: wa[1].id):
        if not adapter.covers(layer_index):
            continue
        d = w * lora_delta(adapter, layer_index, x)
        total = d if total is None else total + d
    return total


def forward(backend: ToyBackend, x: np.ndarray, adapters: WeightedAdapters = ()) -> np.ndarray:
    """Run ``x`` through the backend, adding the weighted adapter deltas per layer."""
    if x.ndim != 1 or x.shape[0] != backend.in_dim:
        raise DimensionError(f"backend expects input dim {backend.in_dim}, got {x.shape}")
    for _, adapter in adapters:
        backend.check_adapter(adapter)
    h = x
    for i, layer in enumerate(backend.layers):
        pre = layer.W @ h
        delta = fused_delta(adapters, i, h)
        if delta is not None:
            pre = pre + delta
        h = ACTIVATIONS[layer.activation](pre)
    return h


def forward_batch(backend: ToyBackend, X: np.ndarray, adapters: WeightedAdapters = ()) -> np.ndarray:
    """``forward`` applied to every row of ``X`` (equal up to float reassociation)."""
    if X.ndim != 2 or X.shape[1] != backend.in_dim:
        raise DimensionError(f"backend expects rows of dim {backend.in_dim}, got {X.shape}")
    for _, adapter in adapters:
        backend.check_adapter(adapter)
    ordered = sorted(adapters, key=lambda wa: wa[1].id)
    H = X
    for i, layer in enumerate(backend.layers):
        pre = H @ layer.W.T
        for w, adapter in ordered:
            if adapter.covers(i):
                ld = adapter.layer(i)
                pre = pre + (w * adapter.scale) * ((H @ ld.A.T) @ ld.B.T)
        H = ACTIVATIONS[layer.activation](pre)
    return H


# -- adapter pool file -------------------------------------------------------


def adapter_to_dict(adapter: LoraAdapter) -> dict:
    return {
        "id": adapter.id,
        "rank": adapter.rank,
        "alpha": adapter.alpha,
        "layers": [
            {"layer_index": ld.layer_index, "A": ld.A.tolist(), "B": ld.B.tolist()}
            for ld in sorted(adapter.layers, key=lambda ld: ld.layer_index)
        ],
    }


def adapter_from_dict(d: dict) -> LoraAdapter:
    try:
        layers = tuple(
            LayerDelta(layer_index=ld["layer_index"], A=ld["A"], B=ld["B"]) for ld in d["layers"]
        )
        return LoraAdapter(id=d["id"], layers=layers, rank=d["rank"], alpha=d["alpha"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed adapter record {d.get('id', '?') if isinstance(d, dict) else d!r}: {exc}") from exc


def pool_from_dict(doc: dict) -> dict[str, LoraAdapter]:
    if not isinstance(doc, dict) or not isinstance(doc.get("adapters"), list):
        raise FormatError('adapter pool must be an object with an "adapters" list')
    pool: dict[str, LoraAdapter] = {}
    for rec in doc["adapters"]:
        adapter = adapter_from_dict(rec)
        if adapter.id in pool:
            raise ValidationError(f"duplicate adapter id {adapter.id!r}")
        pool[adapter.id] = adapter
    return pool


def pool_to_dict(pool: dict[str, LoraAdapter] | Iterable[LoraAdapter]) -> dict:
    adapters = pool.values() if isinstance(pool, dict) else pool
    return {"adapters": [adapter_to_dict(a) for a in sorted(adapters, key=lambda a: a.id)]}


def dump_json(doc, path: str | Path) -> None:
    """Write ``doc`` with sorted keys; Python's float repr round-trips float64 exactly."""
    text = json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_json(path: str | Path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def load_pool(path: str | Path) -> dict[str, LoraAdapter]:
    return pool_from_dict(read_json(path))


def save_pool(pool, path: str | Path) -> None:
    dump_json(pool_to_dict(pool), path)
