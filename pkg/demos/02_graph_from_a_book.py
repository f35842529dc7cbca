# Building a narrative knowledge graph from one book
#
# The mock gateway answers extraction prompts with a rule-based stand-in,
# so this runs offline. Swap in a live gateway for real extraction.
from pathlib import Path

from aspectqa import simulate
from aspectqa.corpus import ChunkingConfig, chunk_text, ingest_book
from aspectqa.gateway import GatewayConfig, build_gateway
from aspectqa.kgraph import build_graph
from aspectqa.qagen import select_edges, EmptySelection

books = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "books"
book = ingest_book(books / "lantern_keeper.txt", "lantern_keeper")
print(book.title, book.word_count, "words,", book.size_bucket)

# %% Character chunks: 1200 wide, 100 shared with the next
cfg = ChunkingConfig(1200, 100)
for c in chunk_text(book, cfg):
    print(c.index, c.start, c.end, repr(c.text[:40]))

# %% Extract and merge
gw = build_gateway(GatewayConfig(kind="mock"), fallback=simulate.respond)
g = build_graph(book, cfg, gw)
print(len(g.nodes), "nodes,", len(g.edges), "edges")

# %% Strongest relations; importance adds up across chunks
for e in sorted(g.edges.values(), key=lambda e: -e.importance)[:5]:
    print(e.importance, e.observation_count, e.key, e.keywords)

# %% Only edges at importance >= 10 become questions
try:
    print([e.key for e in select_edges(g, 10, 100)])
except EmptySelection as exc:
    print(exc)
