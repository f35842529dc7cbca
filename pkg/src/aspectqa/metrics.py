"""Answer-vs-ground-truth scoring: ROUGE-1 F1, METEOR, and a greedy
token-embedding matcher in the style of BERTScore.

All scores live in [0, 1]; reports multiply by 100.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

METEOR_ALPHA = 0.9  # recall weight: Fmean = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


# -- ROUGE-1 ----------------------------------------------------------------


def _counts(tokens: Iterable[str]) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for t in tokens:
        out[t] = out.get(t, 0) + 1
    return out


def rouge1_prf(candidate: str, reference: str) -> Tuple[float, float, float]:
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        logger.debug("rouge1: empty input after tokenization")
        return 0.0, 0.0, 0.0
    cc, rc = _counts(c), _counts(r)
    overlap = sum(min(n, rc.get(t, 0)) for t, n in cc.items())
    if overlap == 0:
        return 0.0, 0.0, 0.0
    p, rec = overlap / len(c), overlap / len(r)
    return p, rec, 2 * p * rec / (p + rec)


def rouge1_f1(candidate: str, reference: str) -> float:
    return rouge1_prf(candidate, reference)[2]


# -- METEOR -----------------------------------------------------------------


_local = threading.local()


def _porter():
    # stemmer objects hold per-call state, so one per thread
    st = getattr(_local, "porter", None)
    if st is None:
        import snowballstemmer

        st = _local.porter = snowballstemmer.stemmer("porter")
    return st


@lru_cache(maxsize=65536)
def porter_stem(word: str) -> str:
    return _porter().stemWord(word)


@dataclass(frozen=True)
class MatchAlignment:
    pairs: Tuple[Tuple[int, int], ...]
    chunk_count: int

    @property
    def matches(self) -> int:
        return len(self.pairs)


def count_chunks(pairs: Sequence[Tuple[int, int]]) -> int:
    """Number of maximal runs adjacent in both candidate and reference."""
    chunks = 0
    prev = None
    for c, r in sorted(pairs):
        if prev is None or c != prev[0] + 1 or r != prev[1] + 1:
            chunks += 1
        prev = (c, r)
    return chunks


def align(
    cand: Sequence[str],
    ref: Sequence[str],
    stemmer: Optional[Callable[[str], str]] = porter_stem,
    synonyms: Optional[Mapping[str, Set[str]]] = None,
) -> MatchAlignment:
    """Staged one-to-one unigram alignment (exact, then stem, then synonym).

    Within a stage, candidate tokens are visited left to right and each takes
    the unmatched reference position that best continues the previous token's
    match: the next position if possible, else the first one after it, else
    the first one overall. This keeps contiguous runs together.
    """
    stages: List[Callable[[str, str], bool]] = [lambda a, b: a == b]
    if stemmer is not None:
        stages.append(lambda a, b: stemmer(a) == stemmer(b))
    if synonyms:
        stages.append(lambda a, b: b in synonyms.get(a, ()) or a in synonyms.get(b, ()))

    c2r: Dict[int, int] = {}
    used: Set[int] = set()
    for same in stages:
        for i, tok in enumerate(cand):
            if i in c2r:
                continue
            options = [j for j, rt in enumerate(ref) if j not in used and same(tok, rt)]
            if not options:
                continue
            prev = c2r.get(i - 1)
            if prev is not None and prev + 1 in options:
                j = prev + 1
            elif prev is not None and any(o > prev for o in options):
                j = min(o for o in options if o > prev)
            else:
                j = options[0]
            c2r[i] = j
            used.add(j)
    pairs = tuple(sorted(c2r.items()))
    return MatchAlignment(pairs, count_chunks(pairs))


def meteor_from_counts(matches: int, cand_len: int, ref_len: int, chunks: int) -> float:
    if matches == 0 or cand_len == 0 or ref_len == 0:
        return 0.0
    p, r = matches / cand_len, matches / ref_len
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1 - penalty)


def meteor(
    candidate: str,
    reference: str,
    stemmer: Optional[Callable[[str], str]] = porter_stem,
    synonyms: Optional[Mapping[str, Set[str]]] = None,
) -> float:
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return 0.0
    a = align(c, r, stemmer, synonyms)
    return meteor_from_counts(a.matches, len(c), len(r), a.chunk_count)


# -- semantic (greedy token matching) ---------------------------------------


class TokenEncoder(Protocol):
    def encode(self, text: str) -> Tuple[List[str], np.ndarray]:
        """Tokens of ``text`` and one row vector per token."""


class HashTokenEncoder:
    """Deterministic offline encoder: each token maps to a hashed vector."""

    def __init__(self, dim: int = 64):
        from .gateway.mock import HashEmbedder

        self._emb = HashEmbedder(dim)

    def encode(self, text: str) -> Tuple[List[str], np.ndarray]:
        toks = tokenize(text)
        if not toks:
            return [], np.zeros((0, self._emb.dim))
        return toks, np.array([self._emb.vector(t) for t in toks])


class TableTokenEncoder:
    """Looks tokens up in a fixed table; handy for hand-built test cases."""

    def __init__(self, table: Mapping[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def encode(self, text: str) -> Tuple[List[str], np.ndarray]:
        toks = tokenize(text)
        if not toks:
            return [], np.zeros((0, 0))
        return toks, np.stack([self.table[t] for t in toks])


class TransformerTokenEncoder:
    """Contextual token vectors from a Hugging Face encoder (BERTScore style).

    Downloads the model on first use; not exercised by the offline tests.
    """

    def __init__(self, model_name: str = "roberta-large", layer: Optional[int] = 17, device: str = "cpu"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).to(device).eval()
        self.layer = layer
        self.device = device

    def encode(self, text: str) -> Tuple[List[str], np.ndarray]:
        enc = self.tokenizer(text, return_tensors="pt", truncation=True).to(self.device)
        with self._torch.no_grad():
            out = self.model(**enc, output_hidden_states=True)
        states = out.hidden_states[self.layer] if self.layer is not None else out.last_hidden_state
        vecs = states[0, 1:-1].cpu().numpy()  # drop special tokens
        toks = self.tokenizer.convert_ids_to_tokens(enc["input_ids"][0, 1:-1])
        return list(toks), vecs


class SemanticUnavailable(RuntimeError):
    pass


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero token vector")
    return m / norms


def semantic_prf(candidate: str, reference: str, encoder: Optional[TokenEncoder]) -> Tuple[float, float, float]:
    if encoder is None:
        raise SemanticUnavailable("no token encoder configured")
    _, cv = encoder.encode(candidate)
    _, rv = encoder.encode(reference)
    if len(cv) == 0 or len(rv) == 0:
        return 0.0, 0.0, 0.0
    sim = _unit_rows(np.asarray(cv, float)) @ _unit_rows(np.asarray(rv, float)).T
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    p, r = max(0.0, min(1.0, p)), max(0.0, min(1.0, r))
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def semantic_score(candidate: str, reference: str, encoder: Optional[TokenEncoder]) -> float:
    return semantic_prf(candidate, reference, encoder)[2]


# -- bundle -----------------------------------------------------------------


@dataclass
class ScoreTriple:
    rouge1: Optional[float]
    meteor: Optional[float]
    semantic: Optional[float]
    audit: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rouge1": self.rouge1, "meteor": self.meteor, "semantic": self.semantic, "audit": list(self.audit)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreTriple":
        return cls(d.get("rouge1"), d.get("meteor"), d.get("semantic"), list(d.get("audit", [])))


class Scorer:
    """Bundles the three metrics with their configuration."""

    def __init__(
        self,
        encoder: Optional[TokenEncoder] = None,
        stemmer: Optional[Callable[[str], str]] = porter_stem,
        synonyms: Optional[Mapping[str, Set[str]]] = None,
    ):
        self.encoder = encoder
        self.stemmer = stemmer
        self.synonyms = synonyms

    def score(self, candidate: str, reference: str) -> ScoreTriple:
        audit: List[str] = []
        if not tokenize(candidate) or not tokenize(reference):
            audit.append("empty input after tokenization")

        def safe(name, fn):
            try:
                return fn()
            except SemanticUnavailable as exc:
                audit.append(f"{name} absent: {exc}")
            except Exception as exc:  # a broken metric must not sink the others
                logger.warning("%s failed: %s", name, exc)
                audit.append(f"{name} failed: {exc}")
            return None

        return ScoreTriple(
            safe("rouge1", lambda: rouge1_f1(candidate, reference)),
            safe("meteor", lambda: meteor(candidate, reference, self.stemmer, self.synonyms)),
            safe("semantic", lambda: semantic_score(candidate, reference, self.encoder)),
            audit,
        )


def score(candidate: str, reference: str, encoder: Optional[TokenEncoder] = None) -> ScoreTriple:
    return Scorer(encoder).score(candidate, reference)
