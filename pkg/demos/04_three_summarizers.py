# The three baseline summarizers on one book, one aspect
from pathlib import Path

from aspectqa import simulate
from aspectqa.corpus import ingest_book
from aspectqa.gateway import GatewayConfig, build_gateway
from aspectqa.summarizers import GENERIC, NaiveRAG, SummarizerConfig, summarize

books = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "books"
book = ingest_book(books / "clockwork_fox.txt", "clockwork_fox")
gw = build_gateway(GatewayConfig(kind="mock"), fallback=simulate.respond)

# small token chunks so the short fixture still has a merge tree
cfg = SummarizerConfig(token_chunk_size=150, summary_budget=80)
rag = NaiveRAG(gw, cfg)

# %% Aspect-conditioned versus generic
for method in ("hier", "inc", "naiverag"):
    for aspect in ("Science Fiction", GENERIC):
        s = summarize(method, book, aspect, gw, cfg, rag=rag)
        print(f"[{method} / {aspect}] {s.token_count} tokens")
        print("   ", s.text[:160], "...")

# %% Call counts per stage
print({k: v for k, v in gw.stats.items() if k.startswith("chat:") or k.startswith("embed:")})
