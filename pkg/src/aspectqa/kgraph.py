"""Incremental narrative knowledge graph.

Edges are undirected; an edge's importance is the sum of the importances of
every relation observation merged into it, so a pair seen in several chunks
outranks a pair seen once with the same local score.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ._io import append_jsonl, canonical_json, read_json, write_json
from .corpus import Book, ChunkingConfig, chunk_text
from .extraction import (
    EntityRecord,
    ExtractionError,
    ExtractionResult,
    RelationRecord,
    extract_chunk,
    parse_keywords,
)
from .gateway import BackendError, ChatRequest, Gateway, load_template, render

logger = logging.getLogger(__name__)

GRAPH_VERSION = 1
SEP = "<SEP>"

EdgeKey = Tuple[str, str]


class GraphVersionError(Exception):
    def __init__(self, found, expected=GRAPH_VERSION):
        super().__init__(
            f"graph file version {found!r} is not supported (expected {expected}); "
            "rebuild the graph or migrate the file"
        )
        self.found = found
        self.expected = expected


def edge_key(a: str, b: str) -> EdgeKey:
    return (a, b) if a < b else (b, a)


@dataclass
class Node:
    name: str
    entity_type: str
    description: str
    observation_count: int = 1
    placeholder: bool = False


@dataclass
class Edge:
    key: EdgeKey
    description: str
    keywords: Tuple[str, ...]
    importance: int
    observation_count: int = 1


@dataclass
class KnowledgeGraph:
    book_id: str
    nodes: Dict[str, Node] = field(default_factory=dict)
    edges: Dict[EdgeKey, Edge] = field(default_factory=dict)
    build_config_digest: str = ""
    warnings: List[str] = field(default_factory=list, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "version": GRAPH_VERSION,
            "book_id": self.book_id,
            "build_config_digest": self.build_config_digest,
            "nodes": [
                {
                    "name": n.name,
                    "entity_type": n.entity_type,
                    "description": n.description,
                    "observation_count": n.observation_count,
                    "placeholder": n.placeholder,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.name)
            ],
            "edges": [
                {
                    "source": e.key[0],
                    "target": e.key[1],
                    "description": e.description,
                    "keywords": list(e.keywords),
                    "importance": e.importance,
                    "observation_count": e.observation_count,
                }
                for e in sorted(self.edges.values(), key=lambda e: e.key)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        version = data.get("version")
        if version != GRAPH_VERSION:
            raise GraphVersionError(version)
        g = cls(data["book_id"], build_config_digest=data.get("build_config_digest", ""))
        for n in data["nodes"]:
            g.nodes[n["name"]] = Node(
                n["name"], n["entity_type"], n["description"], n["observation_count"], n.get("placeholder", False)
            )
        for e in data["edges"]:
            key = edge_key(e["source"], e["target"])
            g.edges[key] = Edge(key, e["description"], tuple(e["keywords"]), e["importance"], e["observation_count"])
        return g

    def dangling_edges(self) -> List[EdgeKey]:
        return [k for k in self.edges if k[0] not in self.nodes or k[1] not in self.nodes]


def save_graph(g: KnowledgeGraph, path: str | os.PathLike) -> None:
    write_json(path, g.to_dict())


def dumps_graph(g: KnowledgeGraph) -> str:
    return canonical_json(g.to_dict())


def load_graph(path: str | os.PathLike) -> KnowledgeGraph:
    return KnowledgeGraph.from_dict(read_json(path))


# -- upserts ----------------------------------------------------------------


@dataclass(frozen=True)
class MergePolicy:
    summarize_threshold: int = 2000
    max_keywords: int = 10
    max_tokens: int = 600


def _merge_text(old: str, new: str) -> str:
    fragments = old.split(SEP)
    if new in fragments:
        return old
    return old + SEP + new


def _warn(g: KnowledgeGraph, msg: str) -> None:
    logger.warning(msg)
    g.warnings.append(msg)


def _condense_entity(g, node: Node, gateway: Optional[Gateway], policy: MergePolicy) -> None:
    if gateway is None:
        _warn(g, f"node {node.name!r}: no gateway, condensation deferred")
        return
    tpl = load_template("condense_entity")
    req = ChatRequest(
        system=tpl.system,
        user=render(tpl, {
            "name": node.name, "entity_type": node.entity_type,
            "description": node.description, "max_chars": policy.summarize_threshold,
        }),
        max_tokens=policy.max_tokens,
        stage="condense-entity",
        context={"description": node.description, "max_chars": policy.summarize_threshold},
    )
    try:
        text = gateway.chat(req).strip()
    except BackendError as exc:
        _warn(g, f"node {node.name!r}: condensation failed ({exc}); keeping merged description")
        return
    if text:
        node.description = text
    else:
        _warn(g, f"node {node.name!r}: empty condensation; keeping merged description")


def _parse_condensed_relation(text: str, max_keywords: int):
    start, end = text.find("{"), text.rfind("}")
    data = json.loads(text[start : end + 1]) if start >= 0 and end > start else {}
    desc = str(data.get("description", "")).strip()
    kws = data.get("keywords", [])
    if isinstance(kws, str):
        kws = [kws]
    keywords = parse_keywords(", ".join(str(k) for k in kws))[:max_keywords]
    if not desc or not keywords:
        raise ValueError("condensed relation needs a description and keywords")
    return desc, keywords


def _condense_edge(g, edge: Edge, gateway: Optional[Gateway], policy: MergePolicy) -> None:
    if gateway is None:
        _warn(g, f"edge {edge.key}: no gateway, condensation deferred")
        return
    tpl = load_template("condense_relation")
    req = ChatRequest(
        system=tpl.system,
        user=render(tpl, {
            "source": edge.key[0], "target": edge.key[1], "description": edge.description,
            "keywords": ", ".join(edge.keywords), "max_chars": policy.summarize_threshold,
            "max_keywords": policy.max_keywords,
        }),
        max_tokens=policy.max_tokens,
        stage="condense-relation",
        context={
            "description": edge.description, "keywords": list(edge.keywords),
            "max_chars": policy.summarize_threshold, "max_keywords": policy.max_keywords,
        },
    )
    try:
        desc, keywords = _parse_condensed_relation(gateway.chat(req), policy.max_keywords)
    except BackendError as exc:
        _warn(g, f"edge {edge.key}: condensation failed ({exc}); keeping merged description")
        return
    except ValueError as exc:
        _warn(g, f"edge {edge.key}: unusable condensation ({exc}); keeping merged description")
        return
    edge.description = desc
    edge.keywords = keywords


def upsert_entity(
    g: KnowledgeGraph,
    rec: EntityRecord,
    gateway: Optional[Gateway] = None,
    policy: MergePolicy = MergePolicy(),
) -> str:
    node = g.nodes.get(rec.name)
    if node is None:
        g.nodes[rec.name] = Node(rec.name, rec.entity_type, rec.description)
        return rec.name
    node.observation_count += 1
    if node.placeholder:
        # a real record supersedes the description borrowed from a relation
        node.placeholder = False
        node.entity_type = rec.entity_type
        node.description = rec.description
        return rec.name
    if node.entity_type == "unknown":
        node.entity_type = rec.entity_type
    node.description = _merge_text(node.description, rec.description)
    if len(node.description) > policy.summarize_threshold:
        _condense_entity(g, node, gateway, policy)
    return rec.name


def _ensure_node(g: KnowledgeGraph, name: str, description: str) -> None:
    if name not in g.nodes:
        g.nodes[name] = Node(name, "unknown", description, 1, placeholder=True)


def upsert_relation(
    g: KnowledgeGraph,
    rec: RelationRecord,
    gateway: Optional[Gateway] = None,
    policy: MergePolicy = MergePolicy(),
) -> EdgeKey:
    _ensure_node(g, rec.source, rec.description)
    _ensure_node(g, rec.target, rec.description)
    key = edge_key(rec.source, rec.target)
    edge = g.edges.get(key)
    if edge is None:
        g.edges[key] = Edge(key, rec.description, tuple(rec.keywords), rec.importance)
        return key
    edge.importance += rec.importance
    edge.observation_count += 1
    edge.keywords = edge.keywords + tuple(k for k in rec.keywords if k not in edge.keywords)
    edge.description = _merge_text(edge.description, rec.description)
    if len(edge.description) > policy.summarize_threshold:
        _condense_edge(g, edge, gateway, policy)
    return key


def apply_extraction(
    g: KnowledgeGraph, result: ExtractionResult, gateway: Optional[Gateway] = None,
    policy: MergePolicy = MergePolicy(),
) -> None:
    for e in result.entities:
        upsert_entity(g, e, gateway, policy)
    for r in result.relations:
        upsert_relation(g, r, gateway, policy)


# -- build ------------------------------------------------------------------


def build_graph(
    book: Book,
    cfg: ChunkingConfig,
    gateway: Gateway,
    *,
    policy: MergePolicy = MergePolicy(),
    build_config_digest: str = "",
    out_path: Optional[str | os.PathLike] = None,
    checkpoint_path: Optional[str | os.PathLike] = None,
    checkpoint_every: int = 50,
    audit_path: Optional[str | os.PathLike] = None,
) -> KnowledgeGraph:
    """Extract every chunk of ``book`` and fold the records into a graph.

    Extraction runs concurrently through the gateway, but records are applied
    by this single writer in ascending chunk order, so the result does not
    depend on scheduling. A checkpoint (partial graph + next chunk index) is
    written after every ``checkpoint_every`` chunks and picked up on the next
    call with the same digest.
    """
    chunks = chunk_text(book, cfg)
    g = KnowledgeGraph(book.id, build_config_digest=build_config_digest)
    next_index = 0
    if checkpoint_path and Path(checkpoint_path).exists():
        state = read_json(checkpoint_path)
        if state.get("build_config_digest") == build_config_digest:
            g = KnowledgeGraph.from_dict(state["graph"])
            next_index = int(state["next_chunk"])
            logger.info("%s: resuming graph build at chunk %d", book.id, next_index)
        else:
            logger.info("%s: ignoring checkpoint from a different config", book.id)
    if audit_path and next_index == 0 and Path(audit_path).exists():
        Path(audit_path).unlink()

    def work(chunk):
        try:
            return extract_chunk(chunk, gateway)
        except ExtractionError as exc:
            return exc

    step = max(1, checkpoint_every)
    for lo in range(next_index, len(chunks), step):
        window = chunks[lo : lo + step]
        for chunk, res in zip(window, gateway.map(work, window)):
            if isinstance(res, ExtractionError):
                _warn(g, str(res))
                if audit_path:
                    append_jsonl(audit_path, {"chunk_index": chunk.index, "raw": res.raw, "skipped_count": None, "error": str(res)})
                continue
            if audit_path:
                append_jsonl(audit_path, res.audit_row())
            apply_extraction(g, res, gateway, policy)
        if checkpoint_path and lo + step < len(chunks):
            write_json(checkpoint_path, {
                "build_config_digest": build_config_digest,
                "next_chunk": lo + step,
                "graph": g.to_dict(),
            })
    if out_path:
        save_graph(g, out_path)
    if checkpoint_path and Path(checkpoint_path).exists():
        Path(checkpoint_path).unlink()
    return g
