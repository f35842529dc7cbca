"""Aspect-conditioned baseline summarizers: hierarchical merging, incremental
updating, and naive retrieval-augmented generation."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

from ._io import read_json, write_json
from .corpus import Book, Chunk, ChunkingConfig, chunk_text
from .gateway import ChatRequest, EmbeddingVector, Gateway, load_template, render
from .qagen import SIMILARITY_DIGITS, cosine

logger = logging.getLogger(__name__)

GENERIC = "GENERIC"
METHODS = ("hier", "inc", "naiverag")


# -- tokenization -----------------------------------------------------------


class Tokenizer(Protocol):
    def spans(self, text: str) -> List[Tuple[int, int]]: ...


class WordTokenizer:
    """Offline default: runs of word characters, plus each punctuation mark."""

    pattern = re.compile(r"\w+|[^\w\s]", re.UNICODE)

    def spans(self, text: str) -> List[Tuple[int, int]]:
        return [m.span() for m in self.pattern.finditer(text)]


class HFTokenizer:
    """Wraps a Hugging Face tokenizer (needs ``transformers`` and the model files)."""

    def __init__(self, name: str):
        from transformers import AutoTokenizer

        self._tok = AutoTokenizer.from_pretrained(name)

    def spans(self, text: str) -> List[Tuple[int, int]]:
        enc = self._tok(text, add_special_tokens=False, return_offsets_mapping=True)
        return [tuple(s) for s in enc["offset_mapping"] if s[1] > s[0]]


DEFAULT_TOKENIZER = WordTokenizer()


def count_tokens(text: str, tokenizer: Optional[Tokenizer] = None) -> int:
    return len((tokenizer or DEFAULT_TOKENIZER).spans(text))


def truncate_tokens(text: str, n: int, tokenizer: Optional[Tokenizer] = None) -> str:
    spans = (tokenizer or DEFAULT_TOKENIZER).spans(text)
    if len(spans) <= n:
        return text
    if n <= 0:
        return ""
    return text[: spans[n - 1][1]]


def token_chunks(text: str, size: int, tokenizer: Optional[Tokenizer] = None) -> List[str]:
    """Split into consecutive pieces of ``size`` tokens; pieces concatenate
    back to ``text``."""
    spans = (tokenizer or DEFAULT_TOKENIZER).spans(text)
    if not spans:
        return [text] if text.strip() else []
    starts = [0] + [spans[i][0] for i in range(size, len(spans), size)]
    ends = starts[1:] + [len(text)]
    return [text[s:e] for s, e in zip(starts, ends)]


# -- types ------------------------------------------------------------------


@dataclass
class Summary:
    book_id: str
    aspect: str
    method: str
    text: str
    token_count: int
    truncated: bool = False
    config_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Summary":
        return cls(**{k: d[k] for k in ("book_id", "aspect", "method", "text", "token_count")},
                   truncated=d.get("truncated", False), config_digest=d.get("config_digest", ""))


@dataclass(frozen=True)
class SummarizerConfig:
    token_chunk_size: int = 2048
    summary_budget: int = 300
    retrieval_k: int = 10
    merge_batch_budget: int = 2048
    merge_fan_in: Optional[int] = None
    rag_chunk_size: int = 1200
    rag_overlap: int = 100

    def __post_init__(self) -> None:
        for name in ("token_chunk_size", "summary_budget", "retrieval_k", "merge_batch_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.summary_budget >= self.token_chunk_size:
            raise ValueError("summary_budget must be smaller than token_chunk_size")
        if self.merge_fan_in is not None and self.merge_fan_in < 2:
            raise ValueError("merge_fan_in must be >= 2")


def aspect_clause(aspect: str) -> str:
    if aspect == GENERIC:
        return ""
    return (
        f" Focus only on content relevant to the {aspect} genre: the characters, events,"
        f" relationships and themes a reader interested in {aspect} would look for."
    )


class _Calls:
    """Shared plumbing: prompt rendering, chat call, budget enforcement."""

    def __init__(self, gateway: Gateway, cfg: SummarizerConfig, tokenizer: Optional[Tokenizer]):
        self.gateway = gateway
        self.cfg = cfg
        self.tok = tokenizer or DEFAULT_TOKENIZER

    def count(self, text: str) -> int:
        return count_tokens(text, self.tok)

    def call(self, template: str, stage: str, label: str, bindings: dict, context: dict) -> str:
        tpl = load_template(template)
        req = ChatRequest(
            tpl.system, render(tpl, bindings), max_tokens=2 * self.cfg.summary_budget + 64,
            stage=stage, label=label, context={**context, "budget": self.cfg.summary_budget},
        )
        return str(self.gateway.chat(req)).strip()

    def compress(self, text: str, aspect: str, label: str) -> str:
        return self.call(
            "compress", "compress", label,
            {"text": text, "aspect_clause": aspect_clause(aspect), "budget": self.cfg.summary_budget},
            {"text": text, "aspect": aspect},
        )

    def enforce_budget(self, text: str, aspect: str, label: str) -> Tuple[str, bool]:
        budget = self.cfg.summary_budget
        if self.count(text) <= budget:
            return text, False
        text = self.compress(text, aspect, label + "/final")
        if self.count(text) <= budget:
            return text, False
        logger.warning("%s: still over %d tokens after compression; truncating", label, budget)
        return truncate_tokens(text, budget, self.tok), True

    def finish(self, book: Book, aspect: str, method: str, text: str, label: str) -> "Summary":
        text, truncated = self.enforce_budget(text, aspect, label)
        if not text.strip():
            raise ValueError(f"{label}: empty summary")
        return Summary(book.id, aspect, method, text, self.count(text), truncated)


# -- hierarchical merging ---------------------------------------------------


def pack_batches(
    items: Sequence[str], budget: int, fan_in: Optional[int] = None,
    count: Callable[[str], int] = count_tokens,
) -> List[List[str]]:
    """Greedy in-order packing of summaries into merge batches.

    A batch is closed when the next item would push it over ``budget`` tokens
    or past ``fan_in`` items, except that a batch always takes a second item
    when one is available, so every level shrinks.
    """
    batches: List[List[str]] = []
    cur: List[str] = []
    cur_tokens = 0
    for item in items:
        n = count(item)
        full = cur and (cur_tokens + n > budget or (fan_in is not None and len(cur) >= fan_in))
        if full and len(cur) >= 2:
            batches.append(cur)
            cur, cur_tokens = [], 0
        cur.append(item)
        cur_tokens += n
    if cur:
        batches.append(cur)
    return batches


def summarize_hier(
    book: Book, aspect: str, gateway: Gateway, cfg: SummarizerConfig = SummarizerConfig(),
    tokenizer: Optional[Tokenizer] = None, checkpoint_dir: Optional[str | os.PathLike] = None,
) -> Summary:
    calls = _Calls(gateway, cfg, tokenizer)
    base = f"{book.id}/{aspect}/hier"
    clause = aspect_clause(aspect)
    ckpt = Path(checkpoint_dir) / f"{book.id}__{aspect}__hier.json" if checkpoint_dir else None

    level_no = 0
    level: Optional[List[str]] = None
    if ckpt and ckpt.exists():
        state = read_json(ckpt)
        if state.get("cfg") == asdict(cfg):
            level_no, level = state["level"], state["summaries"]
            logger.info("%s: resuming at merge level %d", base, level_no)

    def save_level() -> None:
        if ckpt:
            write_json(ckpt, {"cfg": asdict(cfg), "level": level_no, "summaries": level})

    if level is None:
        pieces = token_chunks(book.text, cfg.token_chunk_size, calls.tok)

        def leaf(ip):
            i, text = ip
            return calls.call(
                "hier_leaf", "hier-leaf", f"{base}/leaf-{i}",
                {"part": i + 1, "parts": len(pieces), "text": text, "aspect_clause": clause,
                 "budget": cfg.summary_budget},
                {"text": text, "aspect": aspect},
            )

        level = gateway.map(leaf, list(enumerate(pieces)))
        save_level()

    while len(level) > 1:
        level_no += 1
        batches = pack_batches(level, cfg.merge_batch_budget, cfg.merge_fan_in, calls.count)

        def merge(ib, lvl=level_no):
            i, batch = ib
            if len(batch) == 1:
                return batch[0]
            text = "\n\n".join(f"Summary {j + 1}:\n{s}" for j, s in enumerate(batch))
            return calls.call(
                "hier_merge", "hier-merge", f"{base}/merge-{lvl}-{i}",
                {"text": text, "aspect_clause": clause, "budget": cfg.summary_budget},
                {"summaries": list(batch), "aspect": aspect},
            )

        level = gateway.map(merge, list(enumerate(batches)))
        save_level()

    summary = calls.finish(book, aspect, "hier", level[0], base)
    if ckpt and ckpt.exists():
        ckpt.unlink()
    return summary


# -- incremental updating ---------------------------------------------------


def summarize_inc(
    book: Book, aspect: str, gateway: Gateway, cfg: SummarizerConfig = SummarizerConfig(),
    tokenizer: Optional[Tokenizer] = None,
) -> Summary:
    calls = _Calls(gateway, cfg, tokenizer)
    base = f"{book.id}/{aspect}/inc"
    clause = aspect_clause(aspect)
    pieces = token_chunks(book.text, cfg.token_chunk_size, calls.tok)
    running = ""
    for i, text in enumerate(pieces):
        running = calls.call(
            "inc_update", "inc-update", f"{base}/update-{i}",
            {"summary": running or "(nothing yet)", "text": text, "part": i + 1,
             "parts": len(pieces), "aspect_clause": clause, "budget": cfg.summary_budget},
            {"summary": running, "text": text, "aspect": aspect},
        )
        if calls.count(running) > cfg.summary_budget:
            running = calls.compress(running, aspect, f"{base}/compress-{i}")
    return calls.finish(book, aspect, "inc", running, base)


# -- naive RAG --------------------------------------------------------------


class IndexMissingError(LookupError):
    pass


@dataclass
class NaiveRagIndex:
    book_id: str
    chunks: List[Chunk]
    vectors: List[EmbeddingVector] = field(repr=False)

    @classmethod
    def build(
        cls, book: Book, gateway: Gateway, chunking: ChunkingConfig = ChunkingConfig(),
        batch_size: int = 64,
    ) -> "NaiveRagIndex":
        chunks = [c for c in chunk_text(book, chunking) if c.text.strip()]
        vectors: List[EmbeddingVector] = []
        for lo in range(0, len(chunks), batch_size):
            vectors += gateway.embed([c.text for c in chunks[lo : lo + batch_size]], stage="rag-index")
        return cls(book.id, chunks, vectors)

    def retrieve(self, query: EmbeddingVector, k: int) -> List[Tuple[Chunk, float]]:
        scored = [(c, round(cosine(query, v), SIMILARITY_DIGITS)) for c, v in zip(self.chunks, self.vectors)]
        scored.sort(key=lambda t: (-t[1], t[0].index))
        return scored[:k]


def rag_query(aspect: str) -> str:
    if aspect == GENERIC:
        return render(load_template("rag_query_generic"), {})
    return render(load_template("rag_query"), {"aspect": aspect})


def summarize_naiverag(
    book: Book, aspect: str, gateway: Gateway, cfg: SummarizerConfig = SummarizerConfig(),
    index: Optional[NaiveRagIndex] = None, tokenizer: Optional[Tokenizer] = None,
) -> Summary:
    if index is None or index.book_id != book.id:
        raise IndexMissingError(f"no NaiveRAG index for book {book.id!r}; index first")
    calls = _Calls(gateway, cfg, tokenizer)
    base = f"{book.id}/{aspect}/naiverag"
    query = rag_query(aspect)
    qvec = gateway.embed([query], stage="rag-query")[0]
    hits = index.retrieve(qvec, cfg.retrieval_k)
    passages = "\n\n".join(f"[Passage {i + 1}]\n{c.text}" for i, (c, _) in enumerate(hits))
    text = calls.call(
        "rag_generate", "rag-generate", base,
        {"query": query, "text": passages, "budget": cfg.summary_budget},
        {"query": query, "passages": [c.text for c, _ in hits], "aspect": aspect},
    )
    return calls.finish(book, aspect, "naiverag", text, base)


class NaiveRAG:
    """Keeps one index per book so every aspect reuses the same embeddings."""

    def __init__(self, gateway: Gateway, cfg: SummarizerConfig = SummarizerConfig(),
                 tokenizer: Optional[Tokenizer] = None):
        self.gateway = gateway
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.indices: dict = {}

    def index(self, book: Book) -> NaiveRagIndex:
        if book.id not in self.indices:
            chunking = ChunkingConfig(self.cfg.rag_chunk_size, self.cfg.rag_overlap)
            self.indices[book.id] = NaiveRagIndex.build(book, self.gateway, chunking)
        return self.indices[book.id]

    def summarize(self, book: Book, aspect: str) -> Summary:
        return summarize_naiverag(
            book, aspect, self.gateway, self.cfg, self.indices.get(book.id), self.tokenizer
        )


def summarize(
    method: str, book: Book, aspect: str, gateway: Gateway,
    cfg: SummarizerConfig = SummarizerConfig(), rag: Optional[NaiveRAG] = None,
    tokenizer: Optional[Tokenizer] = None,
) -> Summary:
    if method == "hier":
        return summarize_hier(book, aspect, gateway, cfg, tokenizer)
    if method == "inc":
        return summarize_inc(book, aspect, gateway, cfg, tokenizer)
    if method == "naiverag":
        rag = rag or NaiveRAG(gateway, cfg, tokenizer)
        rag.index(book)
        return rag.summarize(book, aspect)
    raise ValueError(f"unknown summarization method {method!r} (expected one of {METHODS})")
