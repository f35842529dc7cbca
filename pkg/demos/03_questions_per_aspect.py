# Turning graph edges into QA pairs and ranking them per genre aspect
import json

from aspectqa.extraction import RelationRecord
from aspectqa.gateway import Gateway, HashEmbedder, MockChatBackend
from aspectqa.kgraph import KnowledgeGraph, upsert_relation
from aspectqa.qagen import DEFAULT_ASPECTS, assign_aspects, generate_qas

# %% A hand-made graph; the same pair observed twice crosses the threshold
g = KnowledgeGraph("demo")
for a, b, kws, imp in [
    ("Ada", "Corin", ("love", "longing"), 6),
    ("Corin", "Ada", ("love", "letters"), 5),
    ("Ada", "Harbour Master", ("duty", "storm"), 10),
    ("Ghost", "Ada", ("haunted", "lamp"), 7),
    ("Ada", "Ghost", ("haunted",), 5),
]:
    upsert_relation(g, RelationRecord(a, b, f"{a} and {b} ({', '.join(kws)})", kws, imp))

# %% Scripted model replies, keyed by stage and edge
script = {
    "qa::demo/ADA|CORIN": json.dumps({"question": "How does Ada feel about Corin?",
                                      "answer": "She longs for him and keeps his letters.",
                                      "keywords": ["romance", "longing"]}),
    "qa::demo/ADA|HARBOUR MASTER": json.dumps({"question": "What duty binds Ada to the harbour master?",
                                               "answer": "She keeps the light lit through storms.",
                                               "keywords": ["duty"]}),
    "qa::demo/ADA|GHOST": json.dumps({"question": "What haunts the lamp room?",
                                      "answer": "A ghost who tends the lamp at night.",
                                      "keywords": ["ghost", "apparition"]}),
}
gw = Gateway(MockChatBackend(script), HashEmbedder(128))
qas = generate_qas(g, gw)
for q in qas:
    print(q.id, q.edge_importance, q.question, q.keywords)

# %% Rank by cosine between aspect name and joined keywords
for a in assign_aspects(qas, DEFAULT_ASPECTS, gw, top_k=2)[:5]:
    print(f"{a.aspect:16s}", [(q, round(s, 3)) for q, s in a.ranked])
