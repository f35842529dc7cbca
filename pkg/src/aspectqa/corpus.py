"""Book ingestion, size buckets and overlapping character chunking."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

from ._io import read_json, write_json

SMALL_MAX_WORDS = 20_000  # exclusive
MIDDLE_RANGE = (90_000, 110_000)  # inclusive
LARGE_MIN_WORDS = 200_000  # exclusive

SIZE_BUCKETS = ("small", "middle", "large", "unclassified")


class IngestionError(Exception):
    pass


class ChunkingError(ValueError):
    pass


def size_bucket(word_count: int) -> str:
    if word_count < SMALL_MAX_WORDS:
        return "small"
    if MIDDLE_RANGE[0] <= word_count <= MIDDLE_RANGE[1]:
        return "middle"
    if word_count > LARGE_MIN_WORDS:
        return "large"
    return "unclassified"


def normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


@dataclass(frozen=True)
class Book:
    id: str
    title: str
    text: str = field(repr=False)
    word_count: int = 0
    size_bucket: str = "small"

    @classmethod
    def from_text(cls, id: str, text: str, title: str | None = None) -> "Book":
        text = normalize_newlines(text)
        wc = len(text.split())
        return cls(id=id, title=title or id, text=text, word_count=wc, size_bucket=size_bucket(wc))


@dataclass(frozen=True)
class Chunk:
    book_id: str
    index: int
    start: int
    end: int
    text: str = field(repr=False)


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 1200
    overlap: int = 100

    def __post_init__(self) -> None:
        if self.chunk_size <= 0 or not (0 <= self.overlap < self.chunk_size):
            raise ChunkingError(
                f"invalid chunking config: chunk_size={self.chunk_size}, overlap={self.overlap}"
            )

    @property
    def step(self) -> int:
        return self.chunk_size - self.overlap


_TITLE_RE = re.compile(r"^\s*title:\s*(.+)$", re.IGNORECASE | re.MULTILINE)


def ingest_book(path: str | os.PathLike, id: str, title: str | None = None) -> Book:
    """Read a UTF-8 text file into a :class:`Book`.

    Line endings are normalized to ``\\n`` before counting words, so chunk
    offsets always refer to the normalized text.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(
            f"{path}: invalid UTF-8 at byte offset {exc.start}"
        ) from exc
    if title is None:
        m = _TITLE_RE.search(text[:2000])
        title = m.group(1).strip() if m else id
    return Book.from_text(id, text, title=title)


def expected_chunk_count(length: int, cfg: ChunkingConfig) -> int:
    if length <= cfg.chunk_size:
        return 1
    return math.ceil((length - cfg.chunk_size) / cfg.step) + 1


def chunk_text(book: Book, cfg: ChunkingConfig = ChunkingConfig()) -> List[Chunk]:
    text = book.text
    if not text:
        raise ChunkingError(f"book {book.id!r} has empty text")
    n = len(text)
    chunks: List[Chunk] = []
    start = 0
    while start < n:
        end = min(start + cfg.chunk_size, n)
        chunks.append(Chunk(book.id, len(chunks), start, end, text[start:end]))
        if end == n:
            break
        start += cfg.step
    return chunks


# -- manifest ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    title: str
    path: str
    word_count: int
    size_bucket: str


def save_manifest(path: str | os.PathLike, entries: Iterable[ManifestEntry]) -> None:
    rows = [e.__dict__ for e in sorted(entries, key=lambda e: e.id)]
    write_json(path, rows)


def load_manifest(path: str | os.PathLike) -> List[ManifestEntry]:
    base = Path(path).parent
    entries = []
    for row in read_json(path):
        p = Path(row["path"])
        if not p.is_absolute():
            p = base / p
        entries.append(
            ManifestEntry(
                id=row["id"],
                title=row.get("title", row["id"]),
                path=str(p),
                word_count=int(row.get("word_count", 0)),
                size_bucket=row.get("size_bucket", "unclassified"),
            )
        )
    return entries


def build_manifest(paths: Sequence[str | os.PathLike]) -> List[ManifestEntry]:
    """Ingest each file (id = file stem) and describe it as a manifest entry."""
    out = []
    for p in paths:
        book = ingest_book(p, Path(p).stem)
        out.append(ManifestEntry(book.id, book.title, str(p), book.word_count, book.size_bucket))
    return out


def load_books(entries: Iterable[ManifestEntry]) -> List[Book]:
    return [ingest_book(e.path, e.id, title=e.title) for e in entries]
