"""K-Means over validation-query embeddings, used to build pseudo-tasks when
ground-truth task labels are not available."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import DEFAULT_VALIDATION_CAP, Catalog, TaskRecord, ValidationItem, build_catalog
from .encoders import INSTRUCTION, Encoder
from .errors import ConfigError, DimensionError, TooFewPointsError
from .metrics import MetricKind

_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    # inertia after each assignment step, in order; the last entry equals ``inertia``
    inertia_history: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, chunked over points to bound memory."""
    n, d = X.shape
    step = max(1, _CHUNK_ELEMENTS // max(1, C.shape[0] * d))
    out = np.empty((n, C.shape[0]))
    for lo in range(0, n, step):
        diff = X[lo : lo + step, None, :] - C[None, :, :]
        out[lo : lo + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point coincides with a centre; pick among the unused indices
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx : idx + 1])[:, 0])
    return X[chosen].copy()


def _assign(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels with empty clusters repaired.

    An empty cluster takes the point farthest from its own centroid among
    clusters that can spare a member; the centroid moves onto that point.
    """
    D = _sq_dists(X, C)
    labels = D.argmin(axis=1)
    own = D[np.arange(len(X)), labels]
    k = C.shape[0]
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        cand = np.where(donors, own, -1.0)
        p = int(np.argmax(cand))
        counts[labels[p]] -= 1
        labels[p] = c
        counts[c] = 1
        own[p] = 0.0
        C[c] = X[p]
    return labels, own


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> ClusterModel:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"points must form an (n, d) array, got shape {X.shape}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if X.shape[0] < k:
        raise TooFewPointsError(f"{X.shape[0]} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    history = []
    iterations = 0
    for _ in range(max_iter):
        labels, own = _assign(X, C)
        history.append(float(own.sum()))
        new = np.vstack([X[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.abs(new - C)))
        C = new
        iterations += 1
        if shift < tol:
            break
    labels, own = _assign(X, C)
    history.append(float(own.sum()))
    C.flags.writeable = False
    labels.flags.writeable = False
    return ClusterModel(C, labels, history[-1], iterations, tuple(history))


def build_pseudo_tasks(
    items: Sequence[ValidationItem],
    encoder: Encoder,
    k: int,
    seed: int = 0,
    metric: MetricKind = MetricKind.EXACT_MATCH,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> list[TaskRecord]:
    """Cluster items by embedding; each cluster becomes a task ``cluster_<index>``
    whose representation is the cluster centroid."""
    if not items:
        raise ConfigError("no items to cluster")
    X = encoder.encode_many((it.input for it in items), INSTRUCTION)
    model = kmeans(X, k, seed, max_iter, tol)
    tasks = []
    for c in range(k):
        members = tuple(items[i] for i in model.members(c))
        tasks.append(TaskRecord(f"cluster_{c}", metric, members, representation=model.centroids[c]))
    return tasks


def pseudo_task_catalog(
    items: Sequence[ValidationItem],
    encoder: Encoder,
    k: int,
    seed: int = 0,
    metric: MetricKind = MetricKind.EXACT_MATCH,
    pool=(),
) -> Catalog:
    tasks = build_pseudo_tasks(items, encoder, k, seed, metric)
    cap = max(DEFAULT_VALIDATION_CAP, max(len(t.validation) for t in tasks))
    return build_catalog(tasks, pool, encoder=encoder.spec, validation_cap=cap)
