import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptroute.catalog import TaskRecord, build_catalog
from adaptroute.encoders import HashingEncoder
from adaptroute.errors import ConfigError, EmptyPoolError, IncompatibleAdaptersError, NotFoundError, UnpairedTaskError
from adaptroute.fusion import (
    DecisionEntry,
    RoutingDecision,
    compose_lorahub,
    compose_output_space,
    compose_param_interp,
    decision_from_retrieval,
    route,
)
from adaptroute.linalg import LayerDelta, LoraAdapter, forward, lora_delta
from adaptroute.retrieval import RetrievalResult, RetrievedTask, with_representations

from .factories import items, random_adapter, random_backend


def one_hot(aid):
    return RoutingDecision("q", (DecisionEntry("t", aid, 1.0),))


def test_decision_weight_rules():
    with pytest.raises(ConfigError):
        RoutingDecision("q", ())
    with pytest.raises(ConfigError):
        RoutingDecision("q", (DecisionEntry("t", "a", 0.5),))
    with pytest.raises(ConfigError):
        RoutingDecision("q", (DecisionEntry("t", "a", 1.5), DecisionEntry("t", "b", -0.5)))


def test_decision_json_round_trip():
    d = RoutingDecision("q7", (DecisionEntry("t1", "a", 0.25), DecisionEntry("t2", "b", 0.75)))
    doc = json.loads(d.to_json())
    assert doc == {"query_id": "q7", "entries": [
        {"task_id": "t1", "adapter_id": "a", "weight": 0.25},
        {"task_id": "t2", "adapter_id": "b", "weight": 0.75},
    ]}
    assert RoutingDecision.from_dict(doc) == d


def test_output_space_examples():
    rng = np.random.default_rng(0)
    be = random_backend(rng)
    a, b = random_adapter(rng, "a", be), random_adapter(rng, "b", be)
    pool = {"a": a, "b": b}
    x = rng.standard_normal(5)
    assert np.allclose(compose_output_space(be, one_hot("a"), pool, x), forward(be, x, [(1.0, a)]), rtol=1e-12, atol=0)
    zero = LoraAdapter("z", tuple(LayerDelta(l.layer_index, np.zeros_like(l.A), l.B) for l in a.layers), a.rank, a.alpha)
    assert np.array_equal(compose_output_space(be, one_hot("z"), {"z": zero}, x), forward(be, x))
    with pytest.raises(NotFoundError):
        compose_output_space(be, one_hot("missing"), pool, x)


def test_output_space_weighted_deltas_elementwise():
    rng = np.random.default_rng(1)
    be = random_backend(rng, dims=(4, 3), activations=["identity"])
    a, b = random_adapter(rng, "a", be), random_adapter(rng, "b", be)
    x = rng.standard_normal(4)
    d = RoutingDecision("q", (DecisionEntry("t", "a", 0.6), DecisionEntry("t", "b", 0.4)))
    got = compose_output_space(be, d, {"a": a, "b": b}, x)
    W = be.layers[0].W
    want = [
        sum(W[i, j] * x[j] for j in range(4))
        + 0.6 * a.scale * sum(a.layer(0).B[i, r] * a.layer(0).A[r, j] * x[j] for r in range(a.rank) for j in range(4))
        + 0.4 * b.scale * sum(b.layer(0).B[i, r] * b.layer(0).A[r, j] * x[j] for r in range(b.rank) for j in range(4))
        for i in range(3)
    ]
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_heterogeneous_ranks_allowed_in_output_space():
    rng = np.random.default_rng(2)
    be = random_backend(rng)
    a, b = random_adapter(rng, "a", be, rank=1), random_adapter(rng, "b", be, rank=3)
    d = RoutingDecision("q", (DecisionEntry("t", "a", 0.5), DecisionEntry("t", "b", 0.5)))
    assert compose_output_space(be, d, {"a": a, "b": b}, np.ones(5)).shape == (3,)
    with pytest.raises(IncompatibleAdaptersError):
        compose_lorahub([a, b], [0.5, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_param_interp(seed, lam):
    rng = np.random.default_rng(seed)
    be = random_backend(rng)
    a, b = random_adapter(rng, "a", be, rank=2), random_adapter(rng, "b", be, rank=3)
    x = rng.standard_normal(5)
    op = compose_param_interp(a, b, lam)
    want = lam * lora_delta(a, 0, x) + (1 - lam) * lora_delta(b, 0, x)
    assert np.allclose(op(0, x), want, rtol=1e-12, atol=1e-12)
    assert np.allclose(op.dense(0) @ x, want, rtol=1e-10, atol=1e-10)


def test_param_interp_endpoints_and_errors():
    rng = np.random.default_rng(3)
    be = random_backend(rng)
    a, b = random_adapter(rng, "a", be), random_adapter(rng, "b", be)
    x = rng.standard_normal(5)
    assert np.array_equal(compose_param_interp(a, b, 1.0)(0, x), lora_delta(a, 0, x))
    assert np.array_equal(compose_param_interp(a, b, 0.0)(0, x), lora_delta(b, 0, x))
    assert np.allclose(compose_param_interp(a, a, 0.3)(1, np.ones(4)), lora_delta(a, 1, np.ones(4)), rtol=1e-14)
    with pytest.raises(IncompatibleAdaptersError):
        compose_param_interp(a, random_adapter(rng, "c", be, layers=[0]), 0.5)
    with pytest.raises(ConfigError):
        compose_param_interp(a, b, 1.5)


def test_lorahub_examples():
    rng = np.random.default_rng(4)
    be = random_backend(rng)
    a, b = random_adapter(rng, "a", be, rank=2, alpha=4.0), random_adapter(rng, "b", be, rank=2, alpha=4.0)
    single = compose_lorahub([a], [1.0])
    for l in (0, 1):
        assert np.array_equal(single.layer(l).A, a.layer(l).A) and np.array_equal(single.layer(l).B, a.layer(l).B)
    zero = compose_lorahub([a, b], [0.0, 0.0])
    assert not np.any(zero.layer(0).A) and not np.any(zero.layer(0).B)
    merged = compose_lorahub([a, b], [0.5, 0.5])
    assert merged.id == "lorahub(a+b)"
    want = 0.5 * (a.layer(0).B + b.layer(0).B) @ (0.5 * (a.layer(0).A + b.layer(0).A))
    assert np.allclose(merged.layer(0).B @ merged.layer(0).A, want)
    with pytest.raises(IncompatibleAdaptersError):
        compose_lorahub([a, random_adapter(rng, "c", be, rank=2, alpha=2.0)], [0.5, 0.5])
    with pytest.raises(IncompatibleAdaptersError):
        compose_lorahub([a, b], [1.0])
    with pytest.raises(IncompatibleAdaptersError):
        compose_lorahub([], [])


def _routing_catalog(pairing):
    rng = np.random.default_rng(5)
    be = random_backend(rng)
    enc = HashingEncoder(64)
    pool = [random_adapter(rng, a, be) for a in ("a", "b")]
    tasks = [
        TaskRecord("math", "exact_match", (items(1)[0].__class__("add two numbers", "x"),)),
        TaskRecord("poem", "exact_match", (items(1)[0].__class__("write a short poem", "x"),)),
    ]
    cat = with_representations(build_catalog(tasks, pool, pairing=pairing), enc)
    return cat, enc


def test_route_merges_duplicate_adapters():
    cat, enc = _routing_catalog({"math": "a", "poem": "a"})
    d = route(cat, enc, "add two numbers", k=2)
    assert len(d.entries) == 1 and d.entries[0].weight == 1.0 and d.entries[0].adapter_id == "a"
    res = RetrievalResult((RetrievedTask("poem", 0.9, 0.7), RetrievedTask("math", 0.1, 0.3)), 0.2)
    merged = decision_from_retrieval(cat, res)
    assert merged.entries == (DecisionEntry("poem", "a", 1.0),)


def test_route_single_task_and_determinism():
    cat, enc = _routing_catalog({"math": "a", "poem": "b"})
    solo = cat.replace(tasks={"math": cat.tasks["math"]}, pairing={"math": "a"})
    assert route(solo, enc, "anything at all").entries == (DecisionEntry("math", "a", 1.0),)
    first = route(cat, enc, "write a poem about numbers", k=2, query_id="q1")
    assert route(cat, enc, "write a poem about numbers", k=2, query_id="q1") == first
    assert first.entries[0].task_id == "poem"


def test_route_errors():
    cat, enc = _routing_catalog({"math": "a"})
    with pytest.raises(UnpairedTaskError):
        route(cat, enc, "write a short poem", k=1)
    with pytest.raises(EmptyPoolError):
        route(cat.replace(pool={}, pairing={}), enc, "x")
