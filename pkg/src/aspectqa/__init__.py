"""Reference-free, QA-based evaluation of aspect-based book summaries.

A narrative knowledge graph is extracted from each book, high-importance
edges become QA pairs, QA pairs are ranked per aspect by embedding
similarity, and a summary is scored by how well its QAs can be answered
from it alone.
"""

from .corpus import Book, Chunk, ChunkingConfig, chunk_text, ingest_book
from .gateway import ChatRequest, Gateway, GatewayConfig, build_gateway
from .kgraph import KnowledgeGraph, build_graph, load_graph, save_graph
from .metrics import Scorer, ScoreTriple, meteor, rouge1_f1, semantic_score
from .qagen import DEFAULT_ASPECTS, QAPair, assign_aspects, cosine, select_edges

__version__ = "0.1.0"

__all__ = [
    "Book", "Chunk", "ChunkingConfig", "chunk_text", "ingest_book",
    "ChatRequest", "Gateway", "GatewayConfig", "build_gateway",
    "KnowledgeGraph", "build_graph", "load_graph", "save_graph",
    "Scorer", "ScoreTriple", "meteor", "rouge1_f1", "semantic_score",
    "DEFAULT_ASPECTS", "QAPair", "assign_aspects", "cosine", "select_edges",
]
