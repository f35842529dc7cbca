"""High-importance edge selection, per-edge QA synthesis, aspect ranking."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .extraction import parse_keywords
from .gateway import ChatRequest, EmbeddingVector, Gateway, load_template, render
from .kgraph import Edge, EdgeKey, KnowledgeGraph

logger = logging.getLogger(__name__)

DEFAULT_ASPECTS: Tuple[str, ...] = (
    "Fantasy", "Romance", "Comedy",
    "Paranormal", "Young Adult", "Horror",
    "History", "Action", "Science Fiction",
    "Mystery", "Adventure", "Crime",
    "Thriller", "Poetry",
)


SIMILARITY_DIGITS = 12


class EmptySelection(Exception):
    """No edge reaches the importance threshold."""


class ZeroVectorError(ValueError):
    pass


@dataclass
class Aspect:
    name: str
    embedding: Optional[EmbeddingVector] = None


@dataclass(frozen=True)
class QAPair:
    id: str
    book_id: str
    question: str
    answer: str
    keywords: Tuple[str, ...]
    edge_key: EdgeKey
    edge_importance: int

    def to_dict(self) -> dict:
        return {
            "id": self.id, "book_id": self.book_id, "question": self.question,
            "answer": self.answer, "keywords": list(self.keywords),
            "edge_key": list(self.edge_key), "edge_importance": self.edge_importance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAPair":
        return cls(
            d["id"], d["book_id"], d["question"], d["answer"], tuple(d["keywords"]),
            tuple(d["edge_key"]), int(d["edge_importance"]),
        )


@dataclass
class AspectAssignment:
    aspect: str
    ranked: List[Tuple[str, float]] = field(default_factory=list)

    @property
    def qa_ids(self) -> List[str]:
        return [q for q, _ in self.ranked]


def cosine(a, b) -> float:
    """Cosine similarity of two vectors (EmbeddingVector or plain sequences)."""
    va = a.values if isinstance(a, EmbeddingVector) else tuple(a)
    vb = b.values if isinstance(b, EmbeddingVector) else tuple(b)
    if len(va) != len(vb):
        raise ValueError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(x * x for x in vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    c = sum(x * y for x, y in zip(va, vb)) / (na * nb)
    return max(-1.0, min(1.0, c))


def select_edges(g: KnowledgeGraph, min_importance: int = 10, max_edges: int = 100) -> List[Edge]:
    """Edges with accumulated importance >= ``min_importance``, best first,
    truncated to ``max_edges``. Raises :class:`EmptySelection` if none qualify."""
    keep = [e for e in g.edges.values() if e.importance >= min_importance]
    if not keep:
        raise EmptySelection(
            f"{g.book_id}: no edge has importance >= {min_importance} "
            f"({len(g.edges)} edges in graph)"
        )
    keep.sort(key=lambda e: (-e.importance, e.key))
    return keep[:max_edges]


# -- QA generation ----------------------------------------------------------


def _parse_qa_output(text: str) -> Tuple[str, str, Tuple[str, ...]]:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in QA output")
    data = json.loads(text[start : end + 1])
    q = str(data.get("question", "")).strip()
    a = str(data.get("answer", "")).strip()
    if not q or not a:
        raise ValueError("QA output is missing question or answer")
    kws = data.get("keywords", [])
    if isinstance(kws, str):
        kws = [kws]
    return q, a, parse_keywords(", ".join(str(k) for k in kws))


def generate_qa(
    edge: Edge,
    gateway: Gateway,
    book_id: str,
    qa_id: str,
    audit: Optional[List[dict]] = None,
    max_tokens: int = 512,
) -> Optional[QAPair]:
    """One QA pair from one edge, or ``None`` if the model output could not be
    parsed twice in a row (an audit entry is appended in that case)."""
    if not edge.description.strip():
        raise ValueError(f"edge {edge.key} has an empty description")
    tpl = load_template("qa_generation")
    user = render(tpl, {
        "source": edge.key[0], "target": edge.key[1],
        "keywords": ", ".join(edge.keywords), "description": edge.description,
    })
    ctx = {"source": edge.key[0], "target": edge.key[1], "description": edge.description,
           "keywords": list(edge.keywords)}
    label = f"{book_id}/{edge.key[0]}|{edge.key[1]}"
    errors = []
    for attempt in range(2):
        prompt = user if attempt == 0 else user + "\nReturn only the JSON object, with non-empty question and answer."
        req = ChatRequest(
            tpl.system, prompt, max_tokens=max_tokens, stage="qa",
            label=label if attempt == 0 else label + "#retry", context=ctx,
        )
        raw = gateway.chat(req)
        try:
            q, a, kws = _parse_qa_output(raw)
        except ValueError as exc:
            errors.append({"attempt": attempt, "raw": str(raw), "error": str(exc)})
            continue
        keywords = kws + tuple(k for k in edge.keywords if k not in kws)
        return QAPair(qa_id, book_id, q, a, keywords, edge.key, edge.importance)
    logger.warning("%s: skipping edge %s after unparseable QA output", book_id, edge.key)
    if audit is not None:
        audit.append({"book_id": book_id, "edge_key": list(edge.key), "attempts": errors})
    return None


def generate_qas(
    g: KnowledgeGraph,
    gateway: Gateway,
    min_importance: int = 10,
    max_edges: int = 100,
    audit: Optional[List[dict]] = None,
) -> List[QAPair]:
    try:
        edges = select_edges(g, min_importance, max_edges)
    except EmptySelection as exc:
        logger.warning("%s; no QA pairs generated", exc)
        if audit is not None:
            audit.append({"book_id": g.book_id, "empty_selection": str(exc)})
        return []
    ids = [f"{g.book_id}-q{i:03d}" for i in range(len(edges))]
    out = gateway.map(lambda pair: generate_qa(pair[1], gateway, g.book_id, pair[0], audit), list(zip(ids, edges)))
    return [qa for qa in out if qa is not None]


# -- aspect assignment ------------------------------------------------------


def keyword_text(qa: QAPair) -> str:
    return ", ".join(k for k in qa.keywords if k.strip())


def _as_aspects(aspects: Iterable) -> List[Aspect]:
    out = [a if isinstance(a, Aspect) else Aspect(str(a)) for a in aspects]
    names = [a.name for a in out]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate aspect names in {names}")
    return out


def assign_aspects(
    qas: Sequence[QAPair],
    aspects: Sequence,
    gateway: Gateway,
    top_k: int = 5,
    keyword_mode: str = "joined",
    audit: Optional[List[dict]] = None,
) -> List[AspectAssignment]:
    """Rank QA pairs for each aspect by cosine similarity between the aspect
    name's embedding and the QA keywords' embedding, keeping ``top_k``.

    ``keyword_mode="joined"`` embeds the comma-joined keyword list as one
    string; ``"max"`` embeds each keyword and takes the best similarity.
    """
    if keyword_mode not in ("joined", "max"):
        raise ValueError(f"unknown keyword_mode {keyword_mode!r}")
    aspect_objs = _as_aspects(aspects)
    missing = [a for a in aspect_objs if a.embedding is None]
    if missing:
        for a, v in zip(missing, gateway.embed([a.name for a in missing], stage="aspects")):
            a.embedding = v

    usable = []
    for qa in sorted(qas, key=lambda q: q.id):
        if keyword_text(qa):
            usable.append(qa)
        else:
            logger.warning("QA %s has no keywords; excluded from aspect ranking", qa.id)
            if audit is not None:
                audit.append({"qa_id": qa.id, "excluded": "empty keyword string"})

    if not usable:
        return [AspectAssignment(a.name, []) for a in aspect_objs]

    if keyword_mode == "joined":
        vecs = gateway.embed([keyword_text(q) for q in usable], stage="qa-keywords")
        qa_vecs: List[List[EmbeddingVector]] = [[v] for v in vecs]
    else:
        flat = [(i, k) for i, q in enumerate(usable) for k in q.keywords if k.strip()]
        vecs = gateway.embed([k for _, k in flat], stage="qa-keywords")
        qa_vecs = [[] for _ in usable]
        for (i, _), v in zip(flat, vecs):
            qa_vecs[i].append(v)

    result = []
    for a in aspect_objs:
        # rounded so that mathematically equal scores tie exactly, whatever
        # the floating-point summation order
        scored = [
            (qa.id, round(max(cosine(a.embedding, v) for v in qv), SIMILARITY_DIGITS))
            for qa, qv in zip(usable, qa_vecs)
        ]
        scored.sort(key=lambda t: (-t[1], t[0]))
        result.append(AspectAssignment(a.name, scored[:top_k]))
    return result


def assignments_to_json(assignments: Sequence[AspectAssignment]) -> Dict[str, list]:
    return {
        a.aspect: [{"qa_id": q, "similarity": s} for q, s in a.ranked] for a in assignments
    }


def assignments_from_json(data: Dict[str, list]) -> List[AspectAssignment]:
    return [
        AspectAssignment(name, [(r["qa_id"], float(r["similarity"])) for r in rows])
        for name, rows in data.items()
    ]
