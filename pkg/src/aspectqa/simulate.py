"""Rule-based stand-in for the chat model, used by ``--mock`` runs.

Every stage gets a cheap extractive answer computed from the structured
``ChatRequest.context`` the caller attaches, so a mock run exercises the full
pipeline offline and deterministically. Output quality is beside the point.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Dict, List, Sequence

from .extraction import EntityRecord, RelationRecord, serialize_records
from .gateway import ChatRequest
from .kgraph import SEP
from .metrics import tokenize
from .summarizers import GENERIC, count_tokens, truncate_tokens

_SENT = re.compile(r"(?<=[.!?])[\"']?\s+")
_NAME = re.compile(r"\b([A-Z][a-z]+(?:\s+[A-Z][a-z]+)?)\b")

STOP = set(
    """a an and are as at be been but by for from had has have he her hers him his i if in
    into is it its me my no not of on or our she so than that the their them then there
    these they this those to was we were what when where which while who whom why will
    with would you your all any could did do does down each few more most now once only
    other out over own same should some such too under until up very after again against
    before being below between both during further here how just off through above about
    because can one two three said says upon like also""".split()
)
CAPITAL_STOP = {w.capitalize() for w in STOP} | {
    "Mr", "Mrs", "Miss", "Sir", "Lady", "Lord", "Chapter", "Yes", "Oh", "Well", "Dear",
    "Title", "Every", "Together", "Years", "Inside", "Without", "From", "Only", "Later",
}

GENRE_LEXICON: Dict[str, Sequence[str]] = {
    "Fantasy": ("magic", "spell", "dragon", "enchanted", "kingdom", "wizard", "fairy", "sword"),
    "Romance": ("love", "heart", "marry", "kiss", "affection", "longing", "beloved", "married"),
    "Comedy": ("laugh", "joke", "absurd", "foolish", "comic", "prank", "giggle", "silly"),
    "Paranormal": ("ghost", "spirit", "haunted", "vision", "apparition", "seance", "omen", "dead"),
    "Young Adult": ("school", "young", "friend", "first", "sister", "brother", "growing", "secret"),
    "Horror": ("fear", "dread", "scream", "blood", "dark", "terror", "corpse", "shadow"),
    "History": ("war", "king", "year", "century", "empire", "battle", "revolution", "old"),
    "Action": ("fight", "ran", "chase", "struck", "fire", "escape", "attack", "leapt"),
    "Science Fiction": ("machine", "star", "engine", "future", "planet", "invention", "signal", "ship"),
    "Mystery": ("clue", "secret", "hidden", "letter", "mystery", "puzzle", "missing", "key"),
    "Adventure": ("journey", "sea", "island", "voyage", "map", "mountain", "storm", "travel"),
    "Crime": ("theft", "stolen", "murder", "police", "thief", "guilty", "crime", "money"),
    "Thriller": ("danger", "threat", "pursued", "trap", "deadline", "plot", "warning", "hunted"),
    "Poetry": ("song", "verse", "rhyme", "sang", "poem", "music", "moon", "sweet"),
}


def _h(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def sentences(text: str) -> List[str]:
    flat = " ".join(text.split())
    return [s.strip() for s in _SENT.split(flat) if s.strip()]


def _names(sentence: str) -> List[str]:
    out = []
    for m in _NAME.finditer(sentence):
        words = [w for w in m.group(1).split() if w not in CAPITAL_STOP]
        name = " ".join(words)
        if len(name) > 2 and name not in out:
            out.append(name)
    return out


def content_words(text: str, exclude=()) -> List[str]:
    ex = {w.lower() for w in exclude}
    seen: List[str] = []
    for w in tokenize(text):
        if len(w) >= 4 and w not in STOP and w not in ex and w not in seen and not w.isdigit():
            seen.append(w)
    return seen


def _clean(s: str, limit: int = 320) -> str:
    s = s.replace('"', "").replace("#", "").replace("<|", "").replace("|>", "")
    return s[:limit].strip()


def synth_extract(chunk_text: str) -> str:
    sents = sentences(chunk_text)
    entity_desc: Dict[str, str] = {}
    relations: List[RelationRecord] = []
    for s in sents:
        names = _names(s)
        for n in names:
            entity_desc.setdefault(n, _clean(s))
        if len(names) >= 2:
            a, b = names[0], names[1]
            if a.upper() == b.upper():
                continue
            kws = content_words(s, exclude=" ".join(names).split())[:4] or ["connection"]
            relations.append(
                RelationRecord(a, b, _clean(f"{a} and {b}: {s}"), tuple(kws), 4 + _h(s) % 6)
            )
    entities = [EntityRecord(n, "character", d) for n, d in list(entity_desc.items())[:8]]
    return serialize_records(entities, relations)


def _pick(sents: Sequence[str], aspect: str, budget: int) -> str:
    if not sents:
        return ""
    lex = set(GENRE_LEXICON.get(aspect, ()))

    def relevance(s: str) -> float:
        words = set(tokenize(s))
        return len(words & lex) + 0.1 * len(_names(s))

    order = list(range(len(sents)))
    if aspect != GENERIC and lex:
        order.sort(key=lambda i: (-relevance(sents[i]), i))
    chosen, used = [], 0
    for i in order:
        n = count_tokens(sents[i])
        if used + n > budget:
            if not chosen:
                return truncate_tokens(sents[i], budget)
            continue
        chosen.append(i)
        used += n
    return " ".join(sents[i] for i in sorted(chosen))


def synth_answer(summary: str, question: str) -> str:
    q = set(content_words(question))
    best, best_score = "", -1.0
    for i, s in enumerate(sentences(summary)):
        score = len(q & set(tokenize(s))) - i * 1e-6
        if score > best_score:
            best, best_score = s, score
    return best or summary[:200]


def respond(req: ChatRequest) -> str:
    ctx = req.context
    stage = req.stage
    if stage == "extract":
        return synth_extract(ctx.get("chunk_text", ""))
    if stage == "condense-entity":
        frags = ctx["description"].split(SEP)
        out = ""
        for f in frags:
            if len(out) + len(f) + 1 > ctx["max_chars"] // 2:
                break
            out = (out + " " + f).strip()
        return out or frags[0][: ctx["max_chars"] // 2]
    if stage == "condense-relation":
        frags = ctx["description"].split(SEP)
        desc = " ".join(frags[:3])[: ctx["max_chars"] // 2]
        return json.dumps({"description": desc, "keywords": ctx["keywords"][: ctx["max_keywords"]]})
    if stage == "qa":
        src, tgt = ctx["source"].title(), ctx["target"].title()
        frags = [f.split(": ", 1)[-1] for f in ctx["description"].split(SEP)]
        return json.dumps({
            "question": f"What happens between {src} and {tgt}?",
            "answer": " ".join(frags[:2]),
            "keywords": list(ctx["keywords"])[:5],
        })
    if stage == "answer":
        return synth_answer(ctx["summary"], ctx["question"])
    budget = int(ctx.get("budget", 300))
    aspect = ctx.get("aspect", GENERIC)
    if stage == "hier-leaf":
        return _pick(sentences(ctx["text"]), aspect, int(budget * 0.8))
    if stage == "hier-merge":
        return _pick([s for t in ctx["summaries"] for s in sentences(t)], aspect, int(budget * 0.8))
    if stage == "inc-update":
        return _pick(sentences(ctx["summary"]) + sentences(ctx["text"]), aspect, int(budget * 0.9))
    if stage == "compress":
        return _pick(sentences(ctx["text"]), aspect, int(budget * 0.6))
    if stage == "rag-generate":
        return _pick([s for t in ctx["passages"] for s in sentences(t)], aspect, int(budget * 0.8))
    return "OK"
