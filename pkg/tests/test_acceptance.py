"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
(shown in the terminal summary) and then asserts, so a red line and a
failing test always go together."""

import contextlib
import csv
import functools
import json
import math
import os
import random
import socket
import time

import numpy as np
import pytest

from aspectqa.cli import run
from aspectqa.corpus import Book, Chunk, ChunkingConfig
from aspectqa.extraction import EntityRecord, RelationRecord, serialize_records
from aspectqa.gateway import EmbeddingVector, Gateway, HashEmbedder
from aspectqa.kgraph import Edge, KnowledgeGraph, build_graph, edge_key, upsert_relation
from aspectqa.metrics import HashTokenEncoder, TableTokenEncoder, meteor, rouge1_f1, semantic_score, tokenize
from aspectqa.qagen import DEFAULT_ASPECTS, EmptySelection, QAPair, assign_aspects, select_edges
from aspectqa.summarizers import NaiveRagIndex, SummarizerConfig, count_tokens, summarize_hier, summarize_inc

from test_corpus import check_chunk_invariants
from test_metrics import CASES, TABLE, f1, greedy_oracle, meteor_formula


@contextlib.contextmanager
def criterion(record, name, limit):
    """Run the body, time it, record and enforce the time limit."""
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        record(f"FAIL  {name}  ({time.perf_counter() - t0:.2f}s): {type(exc).__name__}: {str(exc)[:120]}")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < limit
    record(f"{'PASS' if ok else 'FAIL'}  {name}  ({elapsed:.2f}s, limit {limit}s)")
    assert ok, f"{name} took {elapsed:.2f}s (limit {limit}s)"


# 1 -------------------------------------------------------------------------


def test_c1_metric_oracles(acceptance):
    with criterion(acceptance, "C1 metric oracles (>=20 pairs, 1e-9)", 1.0):
        n = 0
        for cand, ref, o, c, r, m, ch in CASES:
            assert abs(rouge1_f1(cand, ref) - f1(o, c, r)) <= 1e-9, (cand, ref)
            assert abs(meteor(cand, ref) - meteor_formula(m, c, r, ch)) <= 1e-9, (cand, ref)
            n += 1
        enc = TableTokenEncoder(TABLE)
        for cand in ("a b", "c d", "a c d", "b"):
            for ref in ("a", "d c", "b b a", "c"):
                assert abs(semantic_score(cand, ref, enc) - greedy_oracle(cand, ref, TABLE)) <= 1e-9
                n += 1
        # the hash mock encoder, against a plain-loop greedy match
        hash_enc = HashTokenEncoder(32)
        for cand, ref in [("the fox ran", "a fox runs home"), ("lamp light", "light of the lamp"),
                          ("snow", "winter crown"), ("otto built rusk", "rusk was built by otto")]:
            cv = [hash_enc.encode(t)[1][0] for t in tokenize(cand)]
            rv = [hash_enc.encode(t)[1][0] for t in tokenize(ref)]
            cos = lambda u, v: sum(a * b for a, b in zip(u, v)) / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v))
            pr = min(1.0, max(0.0, sum(max(cos(x, y) for y in rv) for x in cv) / len(cv)))
            rc = min(1.0, max(0.0, sum(max(cos(x, y) for x in cv) for y in rv) / len(rv)))
            expect = 0.0 if pr + rc == 0 else 2 * pr * rc / (pr + rc)
            assert abs(semantic_score(cand, ref, hash_enc) - expect) <= 1e-9
            n += 1
        assert n >= 20


# 2 -------------------------------------------------------------------------


def test_c2_chunker_properties(acceptance):
    with criterion(acceptance, "C2 chunker property suite (500 configs)", 5.0):
        rnd = random.Random(2024)
        for _ in range(500):
            size = rnd.randint(1, 1500)
            overlap = rnd.randint(0, size - 1)
            check_chunk_invariants(rnd.randint(1, 4000), size, overlap)
        check_chunk_invariants(11_000, 1200, 100)


# 3 -------------------------------------------------------------------------

PAIRS = [("ADA", "BEN"), ("ADA", "CORA"), ("BEN", "DAX"), ("CORA", "DAX"), ("ADA", "DAX")]


def ten_chunk_script():
    rnd = random.Random(10)
    script, relations = {}, []
    for i in range(10):
        rels = []
        for a, b in rnd.sample(PAIRS, 3):
            if rnd.random() < 0.5:
                a, b = b, a
            rels.append(RelationRecord(a, b, f"{a} and {b} in part {i}", (rnd.choice(["debt", "rivalry", "love"]),),
                                       rnd.randint(1, 10)))
        ents = [EntityRecord(n, "person", f"{n.title()} as seen in part {i}") for n in ("ADA", "BEN")]
        script[f"extract::ten/chunk-{i}"] = serialize_records(ents, rels)
        relations += rels
    return script, relations


def test_c3_graph_determinism(acceptance, make_gateway, tmp_path):
    with criterion(acceptance, "C3 graph determinism (3 builds, 100 permutations)", 10.0):
        book = Book.from_text("ten", ("lorem ipsum " * 1000)[:11_000])
        cfg = ChunkingConfig(1200, 100)
        script, relations = ten_chunk_script()
        blobs = []
        for i, conc in enumerate((1, 4, 8)):
            build_graph(book, cfg, make_gateway(script, concurrency=conc), out_path=tmp_path / f"{i}.json")
            blobs.append((tmp_path / f"{i}.json").read_bytes())
        assert len(script) == 10 and blobs[0] == blobs[1] == blobs[2]

        oracle = {}
        for r in relations:
            k = edge_key(r.source, r.target)
            oracle[k] = oracle.get(k, 0) + r.importance
        rnd = random.Random(3)
        for _ in range(100):
            perm = list(relations)
            rnd.shuffle(perm)
            g = KnowledgeGraph("ten")
            for r in perm:
                upsert_relation(g, r)
            assert {k: e.importance for k, e in g.edges.items()} == oracle


# 4 -------------------------------------------------------------------------


def brute_select(edges, t, cap):
    def cmp(x, y):
        if x.importance != y.importance:
            return -1 if x.importance > y.importance else 1
        return -1 if x.key < y.key else (1 if x.key > y.key else 0)

    return sorted([e for e in edges if e.importance >= t], key=functools.cmp_to_key(cmp))[:cap]


def test_c4_selection_and_assignment_brute_force(acceptance):
    with criterion(acceptance, "C4 edge selection + aspect assignment vs brute force (100 trials)", 30.0):
        rnd = random.Random(4)
        emb = HashEmbedder(64)
        gw = Gateway(None, emb)
        vocab = "love ghost war ship clue song map fear laugh crime dragon school heart storm".split()
        A = np.array([emb.vector(a) for a in DEFAULT_ASPECTS])
        for _ in range(100):
            g = KnowledgeGraph("b")
            for i in range(rnd.randint(1, 200)):
                key = (f"E{rnd.randint(0, 30):02d}", f"F{i:03d}")
                g.edges[key] = Edge(key, "d", ("k",), rnd.randint(1, 30))
            try:
                got = [e.key for e in select_edges(g, 10, 100)]
            except EmptySelection:
                got = []
            assert got == [e.key for e in brute_select(g.edges.values(), 10, 100)]

            qas = [QAPair(f"q{i:02d}", "b", "?", "!", tuple(rnd.sample(vocab, rnd.randint(1, 3))), ("X", "Y"), 10)
                   for i in range(rnd.randint(1, 50))]
            Q = np.array([emb.vector(", ".join(q.keywords)) for q in qas])
            S = A @ Q.T  # hash vectors are unit length
            out = assign_aspects(qas, DEFAULT_ASPECTS, gw, top_k=5)
            for i, a in enumerate(out):
                ranked = sorted(range(len(qas)), key=lambda j: (-round(S[i, j], 12), qas[j].id))[:5]
                assert a.qa_ids == [qas[j].id for j in ranked]


# 5 -------------------------------------------------------------------------


@contextlib.contextmanager
def no_network():
    real_connect = socket.socket.connect

    def refuse(*a, **k):
        raise AssertionError("network access during a mock run")

    socket.socket.connect = refuse
    socket.create_connection, real_cc = refuse, socket.create_connection
    try:
        yield
    finally:
        socket.socket.connect = real_connect
        socket.create_connection = real_cc


def _pct(v):
    return f"{100 * v:.2f}"


def test_c5_run_all_mock(acceptance, corpus):
    with criterion(acceptance, "C5 run-all --mock on 3-book fixture", 60.0):
        with no_network():
            assert run(["run-all", "--config", str(corpus / "config.json"), "--mock"]) == 0
        out = corpus / "out"
        books = [r["id"] for r in json.loads((out / "corpus.json").read_text())]
        methods = ("hier", "inc", "naiverag")
        assert len(books) == 3
        for p in ("reports/aspect.csv", "reports/size.csv", "reports/overall.csv", "run.json"):
            assert (out / p).exists(), p
        records = []
        for b in books:
            bd = out / b
            for p in ("graph.json", "extraction_audit.jsonl", "qa.jsonl", "assignments.json", "reports/aspect.csv"):
                assert (bd / p).exists(), f"{b}/{p}"
            asg = json.loads((bd / "assignments.json").read_text())["assignments"]
            assert len(asg) == 14 and all(len(v) <= 5 for v in asg.values())
            for m in methods:
                sums = [json.loads(l) for l in (bd / "summaries" / f"{m}.jsonl").read_text().splitlines()]
                assert len(sums) == 14
                assert all(0 < count_tokens(s["text"]) <= 300 for s in sums)
                records += [json.loads(l) for l in (bd / "eval" / f"{m}.jsonl").read_text().splitlines()]
        assert records

        with open(out / "reports" / "overall.csv", newline="") as f:
            report = {row["Method"]: row for row in csv.DictReader(f)}
        for m in methods:
            ok = [r for r in records if r["method"] == m and not r["failed"]]
            for col, key in (("ROUGE-1", "rouge1"), ("METEOR", "meteor"), ("BERTScore", "semantic")):
                vals = [r["scores"][key] for r in ok if r["scores"][key] is not None]
                assert report[m][col] == _pct(sum(vals) / len(vals)), (m, col)
            assert int(report[m]["n"]) == len(ok)


# 6 -------------------------------------------------------------------------


def test_c6_summarizer_structure(acceptance, make_gateway):
    with criterion(acceptance, "C6 summarizer call structure + retrieval oracle", 10.0):
        book = Book.from_text("b", " ".join(f"w{i % 97}" for i in range(400)))
        cfg = SummarizerConfig(token_chunk_size=50, summary_budget=20, merge_batch_budget=10_000, merge_fan_in=2)
        reply = lambda req: f"summary {req.label} ."
        gw = make_gateway(fallback=reply)
        summarize_hier(book, "Romance", gw, cfg)
        assert (gw.stats["chat:hier-leaf"], gw.stats["chat:hier-merge"]) == (8, 7)
        gw = make_gateway(fallback=reply)
        summarize_inc(book, "Romance", gw, cfg)
        assert gw.stats["chat:inc-update"] == 8 and gw.stats.get("chat:compress", 0) == 0

        rnd = random.Random(6)
        emb = HashEmbedder(48)
        for trial in range(50):
            texts = [" ".join(rnd.choice("lamp sea crown fox snow clock heart".split()) for _ in range(6)) + f" {i}"
                     for i in range(rnd.randint(1, 40))]
            idx = NaiveRagIndex("b", [Chunk("b", i, 0, 1, t) for i, t in enumerate(texts)],
                                [EmbeddingVector(emb.vector(t)) for t in texts])
            q = EmbeddingVector(emb.vector(rnd.choice(DEFAULT_ASPECTS)))
            k = rnd.randint(1, 15)
            M = np.array([v.values for v in idx.vectors])
            sims = M @ np.array(q.values)
            oracle = sorted(range(len(texts)), key=lambda i: (-round(sims[i], 12), i))[:k]
            assert [c.index for c, _ in idx.retrieve(q, k)] == oracle


# 7 -------------------------------------------------------------------------


@pytest.mark.live
def test_c7_live_directional(acceptance, corpus):
    """Aspect-conditioned summaries should answer aspect QAs better than
    generic ones. Needs a live backend; never gates the suite."""
    name = "C7 live directional check (non-gating)"
    key_env = os.environ.get("AQA_API_KEY_ENV", "OPENAI_API_KEY")
    if not os.environ.get(key_env):
        acceptance(f"SKIP  {name}: {key_env} not set")
        pytest.skip(f"{key_env} not set")
    cfg = json.loads((corpus / "config.json").read_text())
    cfg["gateway"] = {
        "kind": "live", "api_key_env": key_env,
        "base_url": os.environ.get("AQA_BASE_URL", "https://api.openai.com/v1"),
        "chat_model": os.environ.get("AQA_CHAT_MODEL", "gpt-4o-mini"),
        "embed_model": os.environ.get("AQA_EMBED_MODEL", "text-embedding-3-small"),
    }
    cfg["qagen"] = {"min_importance": 5}  # tiny fixture books rarely reach 10
    cfg["metrics"] = {"semantic": "none"}
    (corpus / "config.json").write_text(json.dumps(cfg))
    args = ["--config", str(corpus / "config.json"), "--method", "hier", "--books", "clockwork_fox"]
    t0 = time.perf_counter()
    try:
        assert run(["run-all", *args]) == 0
        assert run(["summarize", *args, "--aspect", "GENERIC"]) == 0
        assert run(["evaluate", *args, "--generic"]) == 0
    except AssertionError:
        acceptance(f"FAIL  {name}: live pipeline did not complete")
        pytest.xfail("live pipeline did not complete")
    bd = corpus / "out" / "clockwork_fox" / "eval"

    def mean(path):
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        vals = [r["scores"]["rouge1"] for r in rows if not r["failed"] and r["scores"]["rouge1"] is not None]
        return sum(vals) / len(vals)

    aspect, generic = mean(bd / "hier.jsonl"), mean(bd / "hier-generic.jsonl")
    ok = aspect > generic
    acceptance(f"{'PASS' if ok else 'FAIL'}  {name}: ROUGE-1 aspect {_pct(aspect)} vs generic {_pct(generic)} "
               f"({time.perf_counter() - t0:.1f}s)")
    if not ok:
        pytest.xfail("aspect summaries did not beat generic ones on this run")
