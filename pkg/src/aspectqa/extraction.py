"""Per-chunk entity/relation extraction and the delimited record format.

Model output is a stream of records separated by ``##``, each a ``<|>``
separated tuple whose first field is the record kind, terminated by
``<|COMPLETE|>``::

    ("entity"<|>"EMMA"<|>"character"<|>"Protagonist")##
    ("relationship"<|>"EMMA"<|>"KNIGHTLEY"<|>"Old friends"<|>"friendship"<|>8)
    <|COMPLETE|>
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .corpus import Chunk
from .gateway import ChatRequest, Gateway, PromptTemplate, load_template, render

logger = logging.getLogger(__name__)

RECORD_DELIM = "##"
FIELD_DELIM = "<|>"
COMPLETE = "<|COMPLETE|>"

ENTITY_ARITY = 4
RELATION_ARITY = 6
MIN_IMPORTANCE, MAX_IMPORTANCE = 1, 10

SourceRef = Tuple[str, int]


class ExtractionError(Exception):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


def canonicalize(name: str) -> str:
    return " ".join(name.strip().strip("\"'").split()).upper()


def parse_keywords(text: str) -> Tuple[str, ...]:
    seen: List[str] = []
    for kw in re.split(r"[,;]", text):
        kw = " ".join(kw.strip().strip("\"'").split()).lower()
        if kw and kw not in seen:
            seen.append(kw)
    return tuple(seen)


@dataclass(frozen=True)
class EntityRecord:
    name: str
    entity_type: str
    description: str
    source_chunk: Optional[SourceRef] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", canonicalize(self.name))
        if not self.name:
            raise ValueError("entity name is empty after canonicalization")
        if not self.description.strip():
            raise ValueError(f"entity {self.name!r} has an empty description")


@dataclass(frozen=True)
class RelationRecord:
    source: str
    target: str
    description: str
    keywords: Tuple[str, ...]
    importance: int
    source_chunk: Optional[SourceRef] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", canonicalize(self.source))
        object.__setattr__(self, "target", canonicalize(self.target))
        object.__setattr__(self, "keywords", parse_keywords(", ".join(self.keywords)))
        if not self.source or not self.target:
            raise ValueError("relation endpoint is empty")
        if self.source == self.target:
            raise ValueError(f"self-relation on {self.source!r}")
        if not self.description.strip():
            raise ValueError("relation has an empty description")
        if not self.keywords:
            raise ValueError("relation has no keywords")
        if isinstance(self.importance, bool) or not isinstance(self.importance, int):
            raise ValueError(f"importance must be an int, got {self.importance!r}")
        if not MIN_IMPORTANCE <= self.importance <= MAX_IMPORTANCE:
            raise ValueError(f"importance {self.importance} outside [1, 10]")


_PAREN = re.compile(r"\((.*)\)", re.DOTALL)
_INT = re.compile(r"^[+]?\d+$")


def _fields(segment: str) -> List[str]:
    m = _PAREN.search(segment)
    inner = m.group(1) if m else segment
    parts = [p.strip().strip("\"'").strip() for p in inner.split(FIELD_DELIM)]
    while parts and not parts[-1]:
        parts.pop()
    return parts


def _parse_one(segment: str, source_chunk: Optional[SourceRef]):
    parts = _fields(segment)
    if not parts:
        raise ValueError("empty record")
    kind = parts[0].lower()
    if kind == "entity":
        if len(parts) != ENTITY_ARITY:
            raise ValueError(f"entity record has {len(parts)} fields, expected {ENTITY_ARITY}")
        _, name, etype, desc = parts
        return EntityRecord(name, etype.lower() or "unknown", desc.strip(), source_chunk)
    if kind in ("relationship", "relation"):
        if len(parts) != RELATION_ARITY:
            raise ValueError(f"relation record has {len(parts)} fields, expected {RELATION_ARITY}")
        _, src, tgt, desc, kws, imp = parts
        if not _INT.match(imp):
            raise ValueError(f"importance {imp!r} is not an integer")
        return RelationRecord(src, tgt, desc.strip(), parse_keywords(kws), int(imp), source_chunk)
    raise ValueError(f"unknown record kind {parts[0]!r}")


def parse_records(
    raw: str, source_chunk: Optional[SourceRef] = None
) -> Tuple[List[EntityRecord], List[RelationRecord], int]:
    """Parse a delimited record stream. Never raises; malformed records are
    counted in the returned ``skipped`` total instead."""
    entities: List[EntityRecord] = []
    relations: List[RelationRecord] = []
    skipped = 0
    body = raw.split(COMPLETE, 1)[0] if isinstance(raw, str) else ""
    for segment in body.split(RECORD_DELIM):
        if not segment.strip():
            continue
        try:
            rec = _parse_one(segment, source_chunk)
        except ValueError as exc:
            logger.debug("skipping record %r: %s", segment[:80], exc)
            skipped += 1
            continue
        (entities if isinstance(rec, EntityRecord) else relations).append(rec)
    return entities, relations, skipped


def _quote(s: str) -> str:
    return f'"{s}"'


def serialize_records(entities: Sequence[EntityRecord], relations: Sequence[RelationRecord]) -> str:
    records = [
        "(" + FIELD_DELIM.join([_quote("entity"), _quote(e.name), _quote(e.entity_type), _quote(e.description)]) + ")"
        for e in entities
    ]
    records += [
        "("
        + FIELD_DELIM.join(
            [
                _quote("relationship"), _quote(r.source), _quote(r.target), _quote(r.description),
                _quote(", ".join(r.keywords)), str(r.importance),
            ]
        )
        + ")"
        for r in relations
    ]
    return (RECORD_DELIM + "\n").join(records) + "\n" + COMPLETE


@dataclass
class ExtractionResult:
    chunk_index: int
    entities: List[EntityRecord] = field(default_factory=list)
    relations: List[RelationRecord] = field(default_factory=list)
    skipped: int = 0
    raw: str = ""

    def audit_row(self) -> dict:
        return {"chunk_index": self.chunk_index, "raw": self.raw, "skipped_count": self.skipped}


def extract_chunk(
    chunk: Chunk,
    gateway: Gateway,
    template: Optional[PromptTemplate] = None,
    max_tokens: int = 2048,
) -> ExtractionResult:
    template = template or load_template("extraction")
    req = ChatRequest(
        system=template.system,
        user=render(template, {"input_text": chunk.text}),
        max_tokens=max_tokens,
        stage="extract",
        label=f"{chunk.book_id}/chunk-{chunk.index}",
        context={"chunk_text": chunk.text, "book_id": chunk.book_id, "chunk_index": chunk.index},
    )
    raw = gateway.chat(req)
    src = (chunk.book_id, chunk.index)
    entities, relations, skipped = parse_records(raw, src)
    content = raw.split(COMPLETE, 1)[0].strip()
    if content and not entities and not relations and skipped:
        raise ExtractionError(
            f"chunk {chunk.book_id}/{chunk.index}: no parseable records in model output", str(raw)
        )
    return ExtractionResult(chunk.index, entities, relations, skipped, str(raw))
