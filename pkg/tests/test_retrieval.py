from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqaprog.retrieval import (
    Example,
    ExampleStore,
    RetrievalError,
    cosine,
    random_k,
    top_k,
)

# -- independent oracle ------------------------------------------------------
# brute-force similarity sort without numpy; the tie rule (descending
# similarity, then ascending store index) is re-stated here on purpose


def oracle_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def oracle_top_k(query, store, k, kind=None):
    pool = [
        (i, ex) for i, ex in enumerate(store.examples) if kind is None or ex.kind == kind
    ]
    ranked = sorted(pool, key=lambda pair: (-oracle_cosine(query, pair[1].embedding), pair[0]))
    return [ex for _, ex in ranked[:k]]


def code_example(id, question, embedding, program='answer = query(img, "q")\n'):
    return Example(id=id, question=question, kind="code", embedding=tuple(embedding), program=program)


def qa_example(id, question, embedding):
    return Example(
        id=id,
        question=question,
        kind="qa",
        embedding=tuple(embedding),
        captions=(("a caption",),),
        answer="yes",
    )


def random_store(rng, size=50, dim=16):
    examples = []
    for i in range(size):
        vec = [rng.uniform(-1, 1) for _ in range(dim)]
        maker = code_example if i % 2 == 0 else qa_example
        examples.append(maker(f"e{i}", f"question {i}", vec))
    return ExampleStore(tuple(examples))


# -- cosine ------------------------------------------------------------------


def test_cosine_identical_unit_vectors():
    assert cosine((1.0, 0.0), (1.0, 0.0)) == 1.0


def test_cosine_orthogonal():
    assert cosine((1.0, 0.0), (0.0, 1.0)) == 0.0


def test_cosine_hand_computed():
    # (1,2,2)·(2,1,2) = 8, both norms 3 -> 8/9
    assert abs(cosine((1.0, 2.0, 2.0), (2.0, 1.0, 2.0)) - 8.0 / 9.0) < 1e-15


def test_cosine_zero_vector_convention():
    assert cosine((0.0, 0.0), (1.0, 2.0)) == 0.0


def test_cosine_dimension_mismatch():
    with pytest.raises(RetrievalError):
        cosine((1.0, 0.0), (1.0, 0.0, 0.0))


@settings(max_examples=100)
@given(
    st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8),
    st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8),
)
def test_cosine_matches_oracle(a, b):
    if len(a) != len(b):
        with pytest.raises(RetrievalError):
            cosine(a, b)
        return
    assert abs(cosine(a, b) - oracle_cosine(a, b)) < 1e-12


# -- store -------------------------------------------------------------------


def test_store_requires_examples():
    with pytest.raises(RetrievalError):
        ExampleStore(())


def test_store_requires_consistent_dimension():
    with pytest.raises(RetrievalError):
        ExampleStore((code_example("a", "q", (1.0,)), code_example("b", "q", (1.0, 2.0))))


def test_store_validates_code_programs():
    with pytest.raises(RetrievalError):
        ExampleStore((code_example("a", "q", (1.0,), program="import os\n"),))


def test_qa_example_requires_captions_and_answer():
    with pytest.raises(RetrievalError):
        Example(id="x", question="q", kind="qa", embedding=(1.0,))


def test_store_round_trip(tmp_path):
    store = random_store(random.Random(3), size=10, dim=4)
    path = tmp_path / "store.jsonl"
    store.save(path)
    loaded = ExampleStore.load(path)
    assert loaded == store
    assert loaded.dimension == 4


# -- top_k -------------------------------------------------------------------


def test_exact_match_retrieved_first():
    store = ExampleStore((code_example("e1", "a", (1.0, 0.0)), code_example("e2", "b", (0.0, 1.0))))
    assert [e.id for e in top_k((1.0, 0.0), store, 1)] == ["e1"]


def test_k_equal_to_store_size_sorts_everything():
    store = ExampleStore(
        (
            code_example("far", "a", (0.0, 1.0)),
            code_example("near", "b", (1.0, 0.1)),
            code_example("mid", "c", (1.0, 1.0)),
        )
    )
    ids = [e.id for e in top_k((1.0, 0.0), store, 3)]
    assert ids == ["near", "mid", "far"]


def test_kind_filter_restricts_pool():
    store = ExampleStore(
        (code_example("c1", "a", (1.0, 0.0)), qa_example("q1", "b", (1.0, 0.0)))
    )
    assert [e.id for e in top_k((1.0, 0.0), store, 1, kind="qa")] == ["q1"]
    assert [e.id for e in top_k((1.0, 0.0), store, 1, kind="code")] == ["c1"]


def test_ties_break_by_store_index():
    store = ExampleStore(
        (
            code_example("first", "a", (0.0, 1.0)),
            code_example("second", "b", (0.0, 1.0)),
            code_example("third", "c", (0.0, 1.0)),
        )
    )
    assert [e.id for e in top_k((1.0, 0.0), store, 2)] == ["first", "second"]


def test_insufficient_examples():
    store = ExampleStore((code_example("a", "q", (1.0,)),))
    with pytest.raises(RetrievalError):
        top_k((1.0,), store, 2)
    with pytest.raises(RetrievalError):
        top_k((1.0,), store, 1, kind="qa")
    with pytest.raises(RetrievalError):
        top_k((1.0,), store, 0)


def test_top_k_matches_bruteforce_oracle():
    rng = random.Random(11)
    for trial in range(200):
        store = random_store(rng, size=50, dim=16)
        query = tuple(rng.uniform(-1, 1) for _ in range(16))
        for k in (6, 12):
            for kind in (None, "code", "qa"):
                got = [e.id for e in top_k(query, store, k, kind=kind)]
                want = [e.id for e in oracle_top_k(query, store, k, kind=kind)]
                assert got == want, (trial, k, kind)


def test_top_k_permutation_invariant_with_distinct_similarities():
    rng = random.Random(4)
    examples = [code_example(f"e{i}", f"q{i}", (float(i + 1), 1.0)) for i in range(8)]
    store = ExampleStore(tuple(examples))
    query = (1.0, 0.0)
    baseline = [e.id for e in top_k(query, store, 4)]
    for _ in range(10):
        shuffled = examples[:]
        rng.shuffle(shuffled)
        ids = [e.id for e in top_k(query, ExampleStore(tuple(shuffled)), 4)]
        assert ids == baseline


# -- random_k ----------------------------------------------------------------


def test_random_k_full_draw_is_permutation():
    store = random_store(random.Random(0), size=10, dim=3)
    drawn = random_k(store, 10, random.Random(1))
    assert sorted(e.id for e in drawn) == sorted(e.id for e in store.examples)


def test_random_k_deterministic():
    store = random_store(random.Random(0), size=20, dim=3)
    a = [e.id for e in random_k(store, 5, random.Random(99))]
    b = [e.id for e in random_k(store, 5, random.Random(99))]
    assert a == b


def test_random_k_insufficient():
    store = random_store(random.Random(0), size=3, dim=2)
    with pytest.raises(RetrievalError):
        random_k(store, 4, random.Random(0))


def test_random_k_inclusion_frequency():
    # drawing k of n without replacement includes a fixed example with
    # probability k/n = 12/50 = 0.24
    store = random_store(random.Random(0), size=50, dim=2)
    rng = random.Random(7)
    target = store.examples[17].id
    hits = sum(
        1 for _ in range(10_000) if target in {e.id for e in random_k(store, 12, rng)}
    )
    assert abs(hits / 10_000 - 0.24) <= 0.02
