import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptroute.catalog import TaskRecord, build_catalog
from adaptroute.encoders import HashingEncoder
from adaptroute.errors import ConfigError, DimensionError, EmptyCatalogError, EmptyTaskError, EncoderMismatchError
from adaptroute.retrieval import build_task_representation, cosine, retrieve, softmax, with_representations

from .factories import items, random_catalog


def test_cosine_examples():
    v = np.array([1.0, 2.0, -2.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine(np.array([1.0, 0]), np.array([0.0, 1])) == 0.0
    assert cosine(v, 2 * v) == pytest.approx(1.0, abs=1e-15)
    assert cosine(np.zeros(3), v) == 0.0
    with pytest.raises(DimensionError):
        cosine(v, np.ones(2))


def test_softmax_examples():
    assert softmax([0.3, 0.3, 0.3], 0.2) == pytest.approx([1 / 3] * 3, abs=1e-15)
    assert softmax([0.9, 0.5], 1e-3)[0] >= 0.999


@settings(max_examples=50)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=6), st.floats(0.01, 2), st.floats(0.01, 2))
def test_temperature_monotonicity(scores, t1, t2):
    top = max(scores)
    if scores.count(top) > 1:
        return
    i = scores.index(top)
    lo, hi = sorted((t1, t2))
    assert softmax(scores, lo)[i] >= softmax(scores, hi)[i] - 1e-15


def test_representation_full_set_order_independent():
    enc = HashingEncoder(32)
    t = TaskRecord("t", "bleu", items(5))
    rev = TaskRecord("t", "bleu", tuple(reversed(items(5))))
    a = build_task_representation(t, enc, m=10)
    b = build_task_representation(rev, enc, m=5)
    assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert np.allclose(a, enc.encode_many([it.input for it in t.validation]).mean(axis=0))


def test_representation_single_item_and_determinism():
    enc = HashingEncoder(32)
    one = TaskRecord("t", "bleu", items(1))
    assert np.array_equal(build_task_representation(one, enc), enc.encode_many(["q0"])[0])
    big = TaskRecord("t", "bleu", items(50))
    a = build_task_representation(big, enc, m=7, seed=4)
    assert np.array_equal(a, build_task_representation(big, enc, m=7, seed=4))
    assert not np.array_equal(a, build_task_representation(big, enc, m=7, seed=5))


def test_representation_errors():
    enc = HashingEncoder(8)
    with pytest.raises(EmptyTaskError):
        build_task_representation(TaskRecord("t", "bleu", ()), enc)
    with pytest.raises(ConfigError):
        build_task_representation(TaskRecord("t", "bleu", items(2)), enc, m=0)


def test_with_representations_records_encoder():
    enc = HashingEncoder(16)
    cat = with_representations(build_catalog([TaskRecord("t", "bleu", items(3))]), enc)
    assert cat.encoder_fingerprint == enc.fingerprint
    assert cat.tasks["t"].representation.shape == (16,)


def _oracle(cat, q, k):
    ids = sorted(cat.tasks)
    sims = [cosine(q, cat.tasks[t].representation) for t in ids]
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [ids[i] for i in order[:k]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 8))
def test_retrieve_matches_full_sort(seed, n, k):
    rng = np.random.default_rng(seed)
    cat = random_catalog(rng, n, 6)
    q = rng.standard_normal(6)
    res = retrieve(cat, q, k)
    assert res.task_ids == _oracle(cat, q, k)
    assert abs(sum(e.probability for e in res.entries) - 1.0) <= 1e-12


def test_ties_broken_by_id_and_zero_query():
    rep = np.array([1.0, 0.0])
    tasks = [TaskRecord(t, "bleu", items(1), rep) for t in ("c", "a", "b", "d")]
    cat = build_catalog(tasks, encoder=HashingEncoder(2).spec)
    assert retrieve(cat, np.array([1.0, 0.0]), 3).task_ids == ["a", "b", "c"]
    res = retrieve(cat, np.zeros(2), 3)
    assert res.task_ids == ["a", "b", "c"]
    assert [e.probability for e in res.entries] == pytest.approx([1 / 3] * 3, abs=1e-15)


def test_adding_low_task_does_not_change_probabilities():
    rng = np.random.default_rng(9)
    cat = random_catalog(rng, 10, 5)
    q = rng.standard_normal(5)
    before = retrieve(cat, q, 3)
    tasks = dict(cat.tasks)
    tasks["zzz"] = TaskRecord("zzz", "bleu", items(1), -q)
    after = retrieve(cat.replace(tasks=tasks), q, 3)
    assert after.entries == before.entries


def test_retrieve_errors():
    rng = np.random.default_rng(0)
    cat = random_catalog(rng, 3, 4)
    with pytest.raises(ConfigError):
        retrieve(cat, np.ones(4), 0)
    with pytest.raises(ConfigError):
        retrieve(cat, np.ones(4), 1, temperature=0)
    with pytest.raises(EncoderMismatchError):
        retrieve(cat, np.ones(4), 1, fingerprint="other")
    with pytest.raises(EmptyCatalogError):
        retrieve(cat.replace(tasks={}), np.ones(4))
    with pytest.raises(DimensionError):
        retrieve(cat, np.ones(3))


def test_k_larger_than_catalog():
    rng = np.random.default_rng(1)
    cat = random_catalog(rng, 2, 4)
    assert len(retrieve(cat, np.ones(4), 5).entries) == 2
