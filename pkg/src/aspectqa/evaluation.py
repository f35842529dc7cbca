"""Answer aspect QAs from summaries, score the answers, aggregate into tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .corpus import SIZE_BUCKETS, Book
from .gateway import BackendError, ChatRequest, Gateway, load_template, render
from .metrics import ScoreTriple, Scorer
from .qagen import DEFAULT_ASPECTS, AspectAssignment, QAPair
from .summarizers import Summary

logger = logging.getLogger(__name__)

LEAK_WINDOW = 50
GROUP_BYS = ("aspect", "size_bucket", "method", "overall")
METRIC_FIELDS = ("rouge1", "meteor", "semantic")


class GapError(LookupError):
    def __init__(self, missing: Sequence[Tuple[str, str]]):
        listed = ", ".join(f"{b}/{a}" for b, a in missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        super().__init__(f"missing summaries for {len(missing)} (book, aspect) pairs: {listed}{more}")
        self.missing = list(missing)


@dataclass
class EvalRecord:
    book_id: str
    method: str
    aspect: str
    qa_id: str
    model_answer: str
    scores: ScoreTriple
    prompt: str = ""
    failed: bool = False
    error: Optional[str] = None
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "book_id": self.book_id, "method": self.method, "aspect": self.aspect,
            "qa_id": self.qa_id, "model_answer": self.model_answer,
            "scores": self.scores.to_dict(), "prompt": self.prompt, "failed": self.failed,
            "error": self.error, "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        return cls(
            d["book_id"], d["method"], d["aspect"], d["qa_id"], d["model_answer"],
            ScoreTriple.from_dict(d["scores"]), d.get("prompt", ""), d.get("failed", False),
            d.get("error"), d.get("config_digest", ""),
        )


@dataclass
class AggregateRow:
    method: str
    group: str
    mean_rouge1: Optional[float]
    mean_meteor: Optional[float]
    mean_semantic: Optional[float]
    n: int
    n_by_metric: Dict[str, int] = field(default_factory=dict)
    failures: int = 0


# -- answering --------------------------------------------------------------


def answer_prompt(summary: Summary, qa: QAPair) -> Tuple[str, str]:
    tpl = load_template("qa_answering")
    return tpl.system, render(tpl, {"summary": summary.text, "question": qa.question})


def answer_qa(summary: Summary, qa: QAPair, gateway: Gateway, max_tokens: int = 200) -> str:
    """Answer ``qa`` with only ``summary`` as context."""
    if summary.token_count <= 0 or not summary.text.strip():
        raise ValueError(f"summary {summary.book_id}/{summary.aspect}/{summary.method} is empty")
    system, user = answer_prompt(summary, qa)
    req = ChatRequest(
        system, user, max_tokens=max_tokens, stage="answer",
        label=f"{summary.method}/{qa.id}/{summary.aspect}",
        context={"summary": summary.text, "question": qa.question},
    )
    return str(gateway.chat(req)).strip()


def leaked_windows(prompt: str, book_text: str, allowed: Iterable[str], window: int = LEAK_WINDOW) -> List[str]:
    """``window``-character pieces of ``prompt`` that occur in the book once the
    ``allowed`` texts (summary, question) are cut out of the prompt."""
    parts = [prompt]
    for a in allowed:
        if not a:
            continue
        parts = [p for piece in parts for p in piece.split(a)]
    hits = []
    for piece in parts:
        for i in range(0, len(piece) - window + 1):
            w = piece[i : i + window]
            if w in book_text:
                hits.append(w)
    return hits


def evaluate_method(
    method: str,
    books: Sequence[Book],
    aspects: Sequence[str],
    qa_store: Mapping[str, QAPair],
    summaries: Mapping[Tuple[str, str], Summary],
    assignments: Mapping[str, Sequence[AspectAssignment]],
    gateway: Gateway,
    scorer: Optional[Scorer] = None,
    config_digest: str = "",
) -> List[EvalRecord]:
    """Answer each (book, aspect)'s assigned QAs from that pair's summary and
    score the answers against the ground truth."""
    scorer = scorer or Scorer()
    missing = [(b.id, a) for b in books for a in aspects if (b.id, a) not in summaries]
    if missing:
        raise GapError(missing)

    jobs = []
    for b in books:
        by_aspect = {x.aspect: x for x in assignments.get(b.id, [])}
        for a in aspects:
            if a not in by_aspect:
                logger.warning("%s: no QA assignment for aspect %s", b.id, a)
                continue
            for qa_id in by_aspect[a].qa_ids:
                jobs.append((b.id, a, qa_store[qa_id]))

    def run(job) -> EvalRecord:
        book_id, aspect, qa = job
        summary = summaries[(book_id, aspect)]
        _, prompt = answer_prompt(summary, qa)
        try:
            answer = answer_qa(summary, qa, gateway)
        except (BackendError, ValueError) as exc:
            return EvalRecord(book_id, method, aspect, qa.id, "", ScoreTriple(None, None, None),
                              prompt, failed=True, error=str(exc), config_digest=config_digest)
        return EvalRecord(book_id, method, aspect, qa.id, answer, scorer.score(answer, qa.answer),
                          prompt, config_digest=config_digest)

    return gateway.map(run, jobs)


# -- aggregation ------------------------------------------------------------


def _group_value(rec: EvalRecord, group_by: str, buckets: Mapping[str, str]) -> str:
    if group_by == "aspect":
        return rec.aspect
    if group_by == "size_bucket":
        if rec.book_id not in buckets:
            raise KeyError(f"no size bucket known for book {rec.book_id!r}")
        return buckets[rec.book_id]
    return "overall"


def _group_order(group_by: str, value: str):
    if group_by == "aspect":
        return (DEFAULT_ASPECTS.index(value) if value in DEFAULT_ASPECTS else len(DEFAULT_ASPECTS), value)
    if group_by == "size_bucket":
        return (SIZE_BUCKETS.index(value) if value in SIZE_BUCKETS else len(SIZE_BUCKETS), value)
    return (0, value)


def _mean(values: List[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def aggregate(
    records: Sequence[EvalRecord],
    group_by: str = "overall",
    books: Optional[Sequence[Book]] = None,
    weight_by_book: bool = False,
) -> List[AggregateRow]:
    """Mean scores per (method, group). Failed records are excluded and
    counted; a missing metric value is excluded from that metric only."""
    if group_by not in GROUP_BYS:
        raise ValueError(f"group_by must be one of {GROUP_BYS}")
    if not records:
        raise ValueError("aggregate() needs at least one record")
    buckets = {b.id: b.size_bucket for b in books or []}
    groups: Dict[Tuple[str, str], List[EvalRecord]] = {}
    for rec in records:
        groups.setdefault((rec.method, _group_value(rec, group_by, buckets)), []).append(rec)

    method_order = list(dict.fromkeys(r.method for r in records))
    rows = []
    for (method, value) in sorted(groups, key=lambda k: (method_order.index(k[0]), _group_order(group_by, k[1]))):
        recs = groups[(method, value)]
        ok = [r for r in recs if not r.failed]
        if not ok:
            logger.warning("group %s/%s has no successful records; omitted", method, value)
            continue
        means, counts = {}, {}
        for f in METRIC_FIELDS:
            vals = [(r.book_id, getattr(r.scores, f)) for r in ok if getattr(r.scores, f) is not None]
            counts[f] = len(vals)
            if weight_by_book:
                per_book: Dict[str, List[float]] = {}
                for b, v in vals:
                    per_book.setdefault(b, []).append(v)
                means[f] = _mean([_mean(v) for v in per_book.values()])
            else:
                means[f] = _mean([v for _, v in vals])
        rows.append(AggregateRow(
            method, value, means["rouge1"], means["meteor"], means["semantic"],
            n=len(ok), n_by_metric=counts, failures=len(recs) - len(ok),
        ))
    return rows


def compare_generic_to_reference(
    summaries: Sequence[Summary],
    references: Mapping[str, str],
    scorer: Optional[Scorer] = None,
) -> List[AggregateRow]:
    """Score generic summaries directly against user-supplied reference summaries."""
    if not references:
        logger.warning("no reference summaries supplied; reference comparison is empty")
        return []
    scorer = scorer or Scorer()
    records = []
    for s in summaries:
        ref = references.get(s.book_id)
        if ref is None:
            logger.warning("no reference summary for %s; skipped", s.book_id)
            continue
        records.append(EvalRecord(s.book_id, s.method, s.aspect, "reference", s.text, scorer.score(s.text, ref)))
    if not records:
        return []
    rows = aggregate(records, "overall")
    for r in rows:
        r.group = "reference"
    return rows


# -- report formats ---------------------------------------------------------

HEADERS = ("Method", "Group", "ROUGE-1", "METEOR", "BERTScore", "n", "failed")


def _pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


def report_rows(rows: Sequence[AggregateRow]) -> List[List[str]]:
    return [
        [r.method, r.group, _pct(r.mean_rouge1), _pct(r.mean_meteor), _pct(r.mean_semantic), str(r.n), str(r.failures)]
        for r in rows
    ]


def render_table(rows: Sequence[AggregateRow]) -> str:
    body = report_rows(rows)
    table = [list(HEADERS)] + body
    widths = [max(len(row[i]) for row in table) for i in range(len(HEADERS))]

    def fmt(row):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(row[2:], widths[2:])]
        return "  ".join(cells).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(table[0]), sep] + [fmt(r) for r in body]) + "\n"


def render_csv(rows: Sequence[AggregateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADERS)
    w.writerows(report_rows(rows))
    return buf.getvalue()
