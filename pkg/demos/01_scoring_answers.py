# Scoring a model answer against a ground-truth answer
#
# Three lexical/semantic scores: clipped unigram F1, METEOR with stemming,
# and a greedy token-embedding match. Runs offline with the hash encoder;
# pass TransformerTokenEncoder() instead for contextual embeddings.
from aspectqa.metrics import HashTokenEncoder, Scorer, align, meteor, rouge1_f1, tokenize

truth = "Ada rows out alone to meet the ship with the green lamp."
answers = [
    "Ada rows out alone to meet the ship with the green lamp.",
    "She rowed out by herself to the vessel showing a green light.",
    "The keeper stays ashore and writes in her ledger.",
]

# %% Unigram F1 and METEOR, side by side
for a in answers:
    print(f"{rouge1_f1(a, truth):6.3f}  {meteor(a, truth):6.3f}  {a}")

# %% What METEOR actually matched: exact tokens first, then Porter stems
al = align(tokenize(answers[1]), tokenize(truth))
print(al.matches, "matches in", al.chunk_count, "chunks")

# %% The bundled scorer, as used by the evaluation stage
scorer = Scorer(HashTokenEncoder())
for a in answers:
    s = scorer.score(a, truth)
    print(f"R1={s.rouge1:.3f} METEOR={s.meteor:.3f} semantic={s.semantic:.3f}")
