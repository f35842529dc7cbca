import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aspectqa import simulate
from aspectqa.corpus import Book
from aspectqa.gateway import EmbeddingVector, HashEmbedder
from aspectqa.qagen import DEFAULT_ASPECTS
from aspectqa.summarizers import (
    GENERIC,
    IndexMissingError,
    NaiveRAG,
    NaiveRagIndex,
    SummarizerConfig,
    aspect_clause,
    count_tokens,
    pack_batches,
    summarize,
    summarize_hier,
    summarize_inc,
    summarize_naiverag,
    token_chunks,
    truncate_tokens,
)


def words_book(n_words, book_id="b"):
    rnd = random.Random(n_words)
    vocab = "lamp sea ghost letter king storm heart clock fox crown snow map".split()
    return Book.from_text(book_id, " ".join(rnd.choice(vocab) for _ in range(n_words)))


def stage_counts(gw):
    return {k.split(":", 1)[1]: v for k, v in gw.stats.items() if k.startswith("chat:")}


def echo(req):
    return f"summary of {req.label} ."


SMALL = SummarizerConfig(token_chunk_size=50, summary_budget=20, merge_batch_budget=10_000, merge_fan_in=2)


def test_count_tokens_examples():
    assert count_tokens("") == 0
    assert count_tokens("the cat sat") == 3
    assert count_tokens("Hello, world!") == 4


@given(st.text(max_size=80), st.text(max_size=80))
def test_count_monotone_under_concat(a, b):
    assert count_tokens(a + " " + b) >= max(count_tokens(a), count_tokens(b))


@given(st.text(max_size=200), st.integers(1, 30))
def test_token_chunks_reassemble(text, size):
    pieces = token_chunks(text, size)
    if text.strip():
        assert "".join(pieces) == text
        assert all(count_tokens(p) <= size for p in pieces)


@given(st.text(max_size=200), st.integers(0, 40))
def test_truncate_respects_budget(text, n):
    out = truncate_tokens(text, n)
    assert count_tokens(out) <= n and text.startswith(out)


def test_aspect_clause_generic_empty():
    assert aspect_clause(GENERIC) == ""
    assert "Romance" in aspect_clause("Romance")


def test_hier_one_chunk(make_gateway):
    gw = make_gateway(fallback=echo)
    s = summarize_hier(words_book(30), "Romance", gw, SMALL)
    assert stage_counts(gw) == {"hier-leaf": 1}
    assert s.method == "hier" and s.token_count <= 20


def test_hier_eight_chunks_capacity_two(make_gateway):
    gw = make_gateway(fallback=echo)
    summarize_hier(words_book(400), "Romance", gw, SMALL)
    assert stage_counts(gw) == {"hier-leaf": 8, "hier-merge": 7}


def merge_tree_calls(n, fan_in):
    """Explicit level arithmetic: ceil(n / f) batches per level, and every
    batch holding more than one summary costs one call."""
    calls = 0
    while n > 1:
        full, rest = divmod(n, fan_in)
        calls += full + (1 if rest > 1 else 0)
        n = full + (1 if rest else 0)
    return calls


@pytest.mark.parametrize("n,fan_in", [(4, 2), (5, 2), (7, 3), (9, 3), (10, 4), (1, 2)])
def test_hier_merge_calls_match_arithmetic(make_gateway, n, fan_in):
    gw = make_gateway(fallback=echo)
    cfg = SummarizerConfig(token_chunk_size=50, summary_budget=20, merge_batch_budget=10_000, merge_fan_in=fan_in)
    summarize_hier(words_book(50 * n), "Mystery", gw, cfg)
    counts = stage_counts(gw)
    assert counts["hier-leaf"] == n
    assert counts.get("hier-merge", 0) == merge_tree_calls(n, fan_in)
    assert merge_tree_calls(4, 2) == 3


def test_pack_batches_budget():
    items = ["a b c", "d e", "f g h i", "j"]
    assert pack_batches(items, budget=5) == [["a b c", "d e"], ["f g h i", "j"]]
    # an oversize item still pairs up so levels shrink
    assert pack_batches(["x " * 9, "y " * 9], budget=5) == [["x " * 9, "y " * 9]]


def test_hier_checkpoint_resume(make_gateway, tmp_path):
    book = words_book(400)
    seen = []

    def flaky(req):
        seen.append(req.stage)
        if req.stage == "hier-merge" and seen.count("hier-merge") == 5:
            raise KeyboardInterrupt
        return echo(req)

    with pytest.raises(KeyboardInterrupt):
        summarize_hier(book, "Romance", make_gateway(fallback=flaky), SMALL, checkpoint_dir=tmp_path)
    gw = make_gateway(fallback=echo)
    summarize_hier(book, "Romance", gw, SMALL, checkpoint_dir=tmp_path)
    # leaves and the first merge level (4 calls) were checkpointed
    assert stage_counts(gw) == {"hier-merge": 3}
    assert list(tmp_path.iterdir()) == []


def test_inc_one_chunk(make_gateway):
    gw = make_gateway(fallback=echo)
    summarize_inc(words_book(30), "Romance", gw, SMALL)
    assert stage_counts(gw) == {"inc-update": 1}
    assert gw.chat_backend.requests[0].context["summary"] == ""


def test_inc_eight_updates(make_gateway):
    gw = make_gateway(fallback=echo)
    summarize_inc(words_book(400), "Romance", gw, SMALL)
    assert stage_counts(gw) == {"inc-update": 8}


def test_inc_compresses_over_budget(make_gateway):
    cfg = SummarizerConfig(token_chunk_size=2048, summary_budget=300)

    def reply(req):
        return "word " * 310 if req.stage == "inc-update" else "short ."

    gw = make_gateway(fallback=reply)
    s = summarize_inc(words_book(100), "Romance", gw, cfg)
    assert count_tokens("word " * 310) == 310
    assert stage_counts(gw) == {"inc-update": 1, "compress": 1}
    assert s.text == "short ." and not s.truncated


def test_budget_hard_truncation_flagged(make_gateway):
    gw = make_gateway(fallback=lambda r: "word " * 500)
    s = summarize_inc(words_book(30), "Romance", gw, SMALL)
    assert s.truncated and s.token_count == 20


def test_inc_deterministic(make_gateway):
    book = Book.from_text("x", "Ann loved Bo. " * 400)
    a = summarize_inc(book, "Romance", make_gateway(fallback=simulate.respond), SMALL)
    b = summarize_inc(book, "Romance", make_gateway(fallback=simulate.respond), SMALL)
    assert a == b


def test_rag_k_exceeds_corpus(make_gateway):
    book = Book.from_text("b", "x" * 1000 + " " + "y" * 1000 + " " + "z" * 500)
    gw = make_gateway(fallback=echo)
    idx = NaiveRagIndex.build(book, gw)
    assert len(idx.chunks) == 3
    summarize_naiverag(book, "Romance", gw, SummarizerConfig(retrieval_k=10), idx)
    assert len(gw.chat_backend.requests[0].context["passages"]) == 3


def test_rag_requires_index(make_gateway):
    with pytest.raises(IndexMissingError, match="index first"):
        summarize_naiverag(words_book(10), "Romance", make_gateway(fallback=echo))


def test_rag_index_reused_across_aspects(make_gateway):
    book = words_book(2000)
    gw = make_gateway(fallback=echo)
    rag = NaiveRAG(gw)
    idx = rag.index(book)
    n_chunks = len(idx.chunks)
    assert gw.stats["embed:rag-index"] == n_chunks
    for a in DEFAULT_ASPECTS:
        rag.summarize(book, a)
    assert gw.stats["embed:rag-index"] == n_chunks
    assert gw.stats["embed:rag-query"] == 14


def exhaustive_top_k(index, query, k):
    M = np.array([v.values for v in index.vectors])
    q = np.array(query.values)
    sims = M @ q / (np.linalg.norm(M, axis=1) * np.linalg.norm(q))
    order = sorted(range(len(sims)), key=lambda i: (-round(sims[i], 12), i))
    return [index.chunks[i].index for i in order[:k]]


def test_rag_retrieval_matches_exhaustive_scan():
    rnd = random.Random(3)
    emb = HashEmbedder(48)
    for trial in range(30):
        chunks = [f"passage {i} " + " ".join(rnd.choice("ab cd ef gh ij kl".split()) for _ in range(8)) for i in range(rnd.randint(1, 40))]
        book = Book.from_text(f"b{trial}", "")
        index = NaiveRagIndex(book.id, [], [])
        from aspectqa.corpus import Chunk

        index.chunks = [Chunk(book.id, i, 0, 1, t) for i, t in enumerate(chunks)]
        index.vectors = [EmbeddingVector(emb.vector(t)) for t in chunks]
        query = EmbeddingVector(emb.vector(rnd.choice(DEFAULT_ASPECTS)))
        k = rnd.randint(1, 12)
        got = [c.index for c, _ in index.retrieve(query, k)]
        assert got == exhaustive_top_k(index, query, k)


@pytest.mark.parametrize("method", ["hier", "inc", "naiverag"])
def test_every_method_within_budget_and_deterministic(make_gateway, fixtures_dir, method):
    text = (fixtures_dir / "books" / "clockwork_fox.txt").read_text()
    book = Book.from_text("cf", text)
    cfg = SummarizerConfig(token_chunk_size=200, summary_budget=60)
    runs = [summarize(method, book, a, make_gateway(fallback=simulate.respond), cfg) for a in ("Romance", GENERIC)]
    again = [summarize(method, book, a, make_gateway(fallback=simulate.respond), cfg) for a in ("Romance", GENERIC)]
    assert runs == again
    assert all(0 < s.token_count <= 60 for s in runs)


def test_unknown_method(make_gateway):
    with pytest.raises(ValueError):
        summarize("telepathy", words_book(10), "Romance", make_gateway(fallback=echo))
