"""Stage orchestration over the on-disk artifact tree.

Layout under ``output_dir``::

    corpus.json
    {book_id}/graph.json, extraction_audit.jsonl
    {book_id}/qa.jsonl, qa_audit.jsonl, assignments.json
    {book_id}/summaries/{method}.jsonl
    {book_id}/eval/{method}.jsonl
    {book_id}/reports/aspect.{txt,csv}
    reports/{aspect,size,overall,reference}.{txt,csv}

Every artifact carries the digest of the config sections that produced it.
A stage skips work whose output already carries the current digest, and
refuses inputs stamped with a different digest.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ._io import read_json, read_jsonl, write_json, write_jsonl, write_text_atomic
from .config import PipelineConfig
from .corpus import Book, ingest_book, load_manifest
from .evaluation import (
    EvalRecord,
    aggregate,
    compare_generic_to_reference,
    evaluate_method,
    render_csv,
    render_table,
)
from .gateway import Gateway, build_gateway
from .kgraph import build_graph, load_graph
from .metrics import HashTokenEncoder, Scorer, TransformerTokenEncoder, porter_stem
from .qagen import (
    QAPair,
    assign_aspects,
    assignments_from_json,
    assignments_to_json,
    generate_qas,
)
from .summarizers import GENERIC, METHODS, NaiveRAG, Summary, summarize
from . import simulate

logger = logging.getLogger(__name__)

GROUP_ALIASES = {"aspect": "aspect", "size": "size_bucket", "size_bucket": "size_bucket", "overall": "overall"}


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: Path, hint: str):
        super().__init__(f"required artifact missing: {path} ({hint})")
        self.path = path


class MixedDigestError(ValueError):
    pass


class Pipeline:
    def __init__(self, cfg: PipelineConfig, gateway: Optional[Gateway] = None, force: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.force = force
        mock = cfg.gateway.kind == "mock"
        self.gateway = gateway or build_gateway(cfg.gateway, fallback=simulate.respond if mock else None)
        if gateway is None and cfg.gateway.answer_model and not mock:
            self.answer_gateway = build_gateway(cfg.gateway, model=cfg.gateway.answer_model)
        else:
            self.answer_gateway = self.gateway
        self._books: Optional[List[Book]] = None

    # -- helpers ------------------------------------------------------------

    def _log_stage(self, stage: str, before: dict, started: float, **extra) -> None:
        after = dict(self.gateway.stats)
        delta = {k: after.get(k, 0) - before.get(k, 0) for k in after if after.get(k, 0) != before.get(k, 0)}
        logger.info(json.dumps({"stage": stage, "seconds": round(time.time() - started, 3), "calls": delta, **extra}, sort_keys=True))

    def _check(self, found: str, expected: str, path: Path) -> None:
        if found != expected:
            raise MixedDigestError(
                f"{path} was produced under config digest {found!r}, current is {expected!r}; "
                "re-run the upstream stage with --force"
            )

    def book_dir(self, book_id: str) -> Path:
        return self.out / book_id

    def scorer(self) -> Scorer:
        m = self.cfg.metrics
        kind = m.semantic
        if kind == "auto":
            kind = "hash" if self.cfg.gateway.kind == "mock" else "transformer"
        encoder = None
        if kind == "hash":
            encoder = HashTokenEncoder()
        elif kind == "transformer":
            try:
                encoder = TransformerTokenEncoder(m.semantic_model, m.semantic_layer)
            except Exception as exc:  # model download / import failure
                logger.warning("semantic scorer unavailable (%s); BERTScore column will be absent", exc)
        synonyms = None
        if m.synonyms_path:
            synonyms = {k: set(v) for k, v in read_json(m.synonyms_path).items()}
        return Scorer(encoder, porter_stem if m.stemmer == "porter" else None, synonyms)

    # -- ingest -------------------------------------------------------------

    def ingest(self, book_ids: Optional[Sequence[str]] = None) -> List[Book]:
        entries = load_manifest(self.cfg.corpus_manifest)
        if book_ids:
            unknown = set(book_ids) - {e.id for e in entries}
            if unknown:
                raise KeyError(f"books not in manifest: {sorted(unknown)}")
            entries = [e for e in entries if e.id in book_ids]
        books = [ingest_book(e.path, e.id, title=e.title) for e in entries]
        ids = [b.id for b in books]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate book ids in manifest")
        rows = [
            {"id": b.id, "title": b.title, "path": e.path, "word_count": b.word_count, "size_bucket": b.size_bucket}
            for b, e in zip(books, entries)
        ]
        write_json(self.out / "corpus.json", rows)
        self._books = books
        return books

    def books(self, book_ids: Optional[Sequence[str]] = None) -> List[Book]:
        if self._books is None:
            self.ingest()
        books = self._books
        if book_ids:
            books = [b for b in books if b.id in set(book_ids)]
        return books

    # -- graph --------------------------------------------------------------

    def build_graphs(self, book_ids=None) -> None:
        d = self.cfg.stage_digest("graph")
        for book in self.books(book_ids):
            path = self.book_dir(book.id) / "graph.json"
            if path.exists() and not self.force and read_json(path).get("build_config_digest") == d:
                logger.info("%s: graph up to date", book.id)
                continue
            before, t0 = dict(self.gateway.stats), time.time()
            g = build_graph(
                book, self.cfg.chunking, self.gateway, policy=self.cfg.merge, build_config_digest=d,
                out_path=path, checkpoint_path=self.book_dir(book.id) / "graph.checkpoint.json",
                checkpoint_every=self.cfg.checkpoint_every,
                audit_path=self.book_dir(book.id) / "extraction_audit.jsonl",
            )
            self._log_stage("build-graph", before, t0, book=book.id, nodes=len(g.nodes), edges=len(g.edges))

    # -- QA -----------------------------------------------------------------

    def gen_qa(self, book_ids=None, aspects=None) -> None:
        q = self.cfg.qagen
        d_graph, d = self.cfg.stage_digest("graph"), self.cfg.stage_digest("qa")
        aspects = list(aspects or self.cfg.aspects)
        for book in self.books(book_ids):
            bdir = self.book_dir(book.id)
            gpath = bdir / "graph.json"
            if not gpath.exists():
                raise MissingArtifactError(gpath, "run build-graph first")
            qa_path, asg_path = bdir / "qa.jsonl", bdir / "assignments.json"
            if qa_path.exists() and asg_path.exists() and not self.force:
                if read_json(asg_path).get("config_digest") == d:
                    logger.info("%s: QA set up to date", book.id)
                    continue
            g = load_graph(gpath)
            self._check(g.build_config_digest, d_graph, gpath)
            before, t0 = dict(self.gateway.stats), time.time()
            audit: List[dict] = []
            qas = generate_qas(g, self.gateway, q.min_importance, q.max_edges, audit)
            assignments = assign_aspects(qas, aspects, self.gateway, q.top_k, q.keyword_mode, audit) if qas else []
            write_jsonl(qa_path, [{**qa.to_dict(), "config_digest": d} for qa in qas])
            write_jsonl(bdir / "qa_audit.jsonl", audit)
            write_json(asg_path, {"config_digest": d, "assignments": assignments_to_json(assignments)})
            self._log_stage("gen-qa", before, t0, book=book.id, qas=len(qas))

    def load_qas(self, book_id: str) -> Tuple[Dict[str, QAPair], list]:
        bdir = self.book_dir(book_id)
        qa_path, asg_path = bdir / "qa.jsonl", bdir / "assignments.json"
        for p in (qa_path, asg_path):
            if not p.exists():
                raise MissingArtifactError(p, "run gen-qa first")
        d = self.cfg.stage_digest("qa")
        data = read_json(asg_path)
        self._check(data.get("config_digest"), d, asg_path)
        qas = {}
        for row in read_jsonl(qa_path):
            self._check(row.get("config_digest"), d, qa_path)
            qas[row["id"]] = QAPair.from_dict(row)
        return qas, assignments_from_json(data["assignments"])

    # -- summaries ----------------------------------------------------------

    def _expand_aspects(self, aspect: Optional[str]) -> List[str]:
        if aspect in (None, "ALL"):
            return list(self.cfg.aspects)
        if aspect == GENERIC:
            return [GENERIC]
        return [a.strip() for a in aspect.split(",")]

    def summarize(self, methods=None, book_ids=None, aspect: Optional[str] = None) -> None:
        d = self.cfg.stage_digest("summaries")
        aspects = self._expand_aspects(aspect)
        for method in methods or self.cfg.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}")
            rag = NaiveRAG(self.gateway, self.cfg.summarizer) if method == "naiverag" else None
            for book in self.books(book_ids):
                path = self.book_dir(book.id) / "summaries" / f"{method}.jsonl"
                existing: Dict[str, dict] = {}
                if path.exists() and not self.force:
                    existing = {r["aspect"]: r for r in read_jsonl(path) if r.get("config_digest") == d}
                todo = [a for a in aspects if a not in existing]
                if not todo:
                    logger.info("%s/%s: summaries up to date", book.id, method)
                    continue
                before, t0 = dict(self.gateway.stats), time.time()
                if rag is not None:
                    rag.index(book)
                for a in todo:
                    s = summarize(method, book, a, self.gateway, self.cfg.summarizer, rag=rag)
                    s.config_digest = d
                    existing[a] = s.to_dict()
                write_jsonl(path, [existing[a] for a in sorted(existing)])
                self._log_stage("summarize", before, t0, book=book.id, method=method, aspects=len(todo))

    def load_summaries(self, method: str, book_id: str) -> Dict[str, Summary]:
        path = self.book_dir(book_id) / "summaries" / f"{method}.jsonl"
        if not path.exists():
            raise MissingArtifactError(path, f"run summarize --method {method} first")
        d = self.cfg.stage_digest("summaries")
        out = {}
        for row in read_jsonl(path):
            self._check(row.get("config_digest"), d, path)
            out[row["aspect"]] = Summary.from_dict(row)
        return out

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, methods=None, book_ids=None, aspects=None, generic: bool = False) -> None:
        """Score every method's summaries on the aspect QAs.

        With ``generic=True`` the GENERIC summary answers every aspect's QAs;
        records are stored under the method name ``{method}-generic``.
        """
        d = self.cfg.stage_digest("eval")
        aspects = list(aspects or self.cfg.aspects)
        scorer = self.scorer()
        for method in methods or self.cfg.methods:
            label = f"{method}-generic" if generic else method
            for book in self.books(book_ids):
                path = self.book_dir(book.id) / "eval" / f"{label}.jsonl"
                if path.exists() and not self.force:
                    rows = list(read_jsonl(path))
                    if rows and all(r.get("config_digest") == d for r in rows):
                        logger.info("%s/%s: evaluation up to date", book.id, method)
                        continue
                qas, assignments = self.load_qas(book.id)
                sums = self.load_summaries(method, book.id)
                if generic:
                    if GENERIC not in sums:
                        raise MissingArtifactError(
                            self.book_dir(book.id) / "summaries" / f"{method}.jsonl",
                            f"run summarize --method {method} --aspect GENERIC first",
                        )
                    summaries = {(book.id, a): sums[GENERIC] for a in aspects}
                else:
                    summaries = {(book.id, a): s for a, s in sums.items()}
                before, t0 = dict(self.gateway.stats), time.time()
                records = evaluate_method(
                    label, [book], aspects, qas, summaries, {book.id: assignments},
                    self.answer_gateway, scorer, config_digest=d,
                )
                write_jsonl(path, [r.to_dict() for r in records])
                self._log_stage("evaluate", before, t0, book=book.id, method=method, records=len(records))

    def load_records(self, methods=None, book_ids=None) -> List[EvalRecord]:
        d = self.cfg.stage_digest("eval")
        records = []
        for method in methods or self.cfg.methods:
            for book in self.books(book_ids):
                path = self.book_dir(book.id) / "eval" / f"{method}.jsonl"
                if not path.exists():
                    raise MissingArtifactError(path, f"run evaluate --method {method} first")
                for row in read_jsonl(path):
                    self._check(row.get("config_digest"), d, path)
                    records.append(EvalRecord.from_dict(row))
        return records

    # -- reports ------------------------------------------------------------

    def report(self, group_by: str = "overall", methods=None, book_ids=None, weight_by_book: bool = False) -> str:
        group = GROUP_ALIASES[group_by]
        books = self.books(book_ids)
        records = self.load_records(methods, book_ids)
        if not records:
            raise ValueError("no evaluation records to report")
        rows = aggregate(records, group, books, weight_by_book=weight_by_book)
        name = "size" if group == "size_bucket" else group
        table = render_table(rows)
        write_text_atomic(self.out / "reports" / f"{name}.txt", table)
        write_text_atomic(self.out / "reports" / f"{name}.csv", render_csv(rows))
        for book in books:
            recs = [r for r in records if r.book_id == book.id]
            if recs:
                per = aggregate(recs, "aspect", books)
                write_text_atomic(self.book_dir(book.id) / "reports" / "aspect.txt", render_table(per))
                write_text_atomic(self.book_dir(book.id) / "reports" / "aspect.csv", render_csv(per))
        return table

    def report_reference(self, methods=None, book_ids=None) -> str:
        """Generic summaries scored against reference files ``{references_dir}/{book_id}.txt``."""
        refs = {}
        if self.cfg.references_dir:
            for book in self.books(book_ids):
                p = Path(self.cfg.references_dir) / f"{book.id}.txt"
                if p.exists():
                    refs[book.id] = p.read_text(encoding="utf-8")
                else:
                    logger.warning("no reference summary for %s", book.id)
        sums = []
        for method in methods or self.cfg.methods:
            for book in self.books(book_ids):
                try:
                    s = self.load_summaries(method, book.id).get(GENERIC)
                except MissingArtifactError:
                    s = None
                if s is not None:
                    sums.append(s)
        rows = compare_generic_to_reference(sums, refs, self.scorer())
        text = render_table(rows) if rows else "no reference summaries supplied\n"
        write_text_atomic(self.out / "reports" / "reference.txt", text)
        if rows:
            write_text_atomic(self.out / "reports" / "reference.csv", render_csv(rows))
        return text

    # -- everything ---------------------------------------------------------

    def run_all(self, methods=None, book_ids=None) -> str:
        self.ingest(book_ids)
        self.build_graphs(book_ids)
        self.gen_qa(book_ids)
        self.summarize(methods, book_ids)
        self.evaluate(methods, book_ids)
        for g in ("aspect", "size", "overall"):
            table = self.report(g, methods, book_ids)
        if self.cfg.references_dir:
            self.summarize(methods, book_ids, aspect=GENERIC)
            self.report_reference(methods, book_ids)
        write_json(self.out / "run.json", {"config_digest": self.cfg.digest(), "stats": dict(self.gateway.stats)})
        return table
