"""Tagged code-switched transcripts, monolingual text, splits and vocabulary."""

from __future__ import annotations

import hashlib
import logging
import random
import re
import string
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .altgen import EvalSet, GoldSentence, TaggedToken
from .lexicon import L1, L2, PUNCT

log = logging.getLogger(__name__)

MAX_SENTENCE_TOKENS = 100
TAGS = {"l1": L1, "l2": L2, "punct": PUNCT}
BOS, EOS, PLACEHOLDER = "<s>", "</s>", "<drop>"
RESERVED = (BOS, EOS, PLACEHOLDER)


class CorpusError(ValueError):
    pass


@dataclass
class TaggedCorpus:
    sentences: List[GoldSentence]
    source: str = ""
    split: Optional[str] = None
    # line numbers (0-based, counting kept lines of the source) for split manifests
    indices: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def subset(self, fraction: float, seed: int) -> "TaggedCorpus":
        """A seeded random ``fraction`` of the sentences, original order kept."""
        k = int(round(len(self) * fraction))
        chosen = sorted(random.Random(f"subset:{seed}:{fraction}").sample(range(len(self)), k))
        return TaggedCorpus(
            [self.sentences[i] for i in chosen],
            self.source,
            self.split,
            [self.indices[i] for i in chosen] if self.indices else [],
        )


def _lines(source: Union[str, TextIO, Iterable[str]]) -> Iterable[str]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fp:
            yield from fp
    else:
        yield from source


def parse_tagged_line(line: str, lineno: Optional[int] = None) -> GoldSentence:
    toks = []
    for pos, item in enumerate(line.split(), 1):
        word, sep, lang = item.rpartition("/")
        if not sep or not word or lang.lower() not in TAGS:
            where = f"line {lineno}, token {pos}" if lineno is not None else f"token {pos}"
            raise CorpusError(f"{where}: expected surface/lang with lang in l1|l2|punct, got {item!r}")
        toks.append(TaggedToken(word.lower(), TAGS[lang.lower()]))
    return GoldSentence(tuple(toks))


def load_tagged(source, name: str = "") -> TaggedCorpus:
    """Whitespace-separated ``surface/lang`` tokens, one sentence per line."""
    sents, idx = [], []
    kept = 0
    for lineno, raw in enumerate(_lines(source), 1):
        if not raw.strip():
            continue
        sent = parse_tagged_line(raw, lineno)
        if len(sent.tokens) > MAX_SENTENCE_TOKENS:
            log.warning("line %d: %d tokens, skipped", lineno, len(sent.tokens))
            continue
        sents.append(sent)
        idx.append(lineno - 1)
        kept += 1
    return TaggedCorpus(sents, name, indices=idx)


def write_tagged(corpus: Iterable[GoldSentence], fp) -> None:
    for s in corpus:
        fp.write(" ".join(f"{t.surface}/{t.language}" for t in s.tokens))
        fp.write("\n")


def _drop_parenthesized(text: str) -> str:
    out = []
    depth = 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            if depth:
                depth -= 1
        elif depth == 0:
            out.append(ch)
    return "".join(out)


_PUNCT_CHARS = set(string.punctuation) | set("¡¿«»…")


def is_punct(token: str) -> bool:
    return all(ch in _PUNCT_CHARS for ch in token)


def _split_token(tok: str) -> List[str]:
    lead, trail = [], []
    while tok and tok[0] in _PUNCT_CHARS and not is_punct(tok):
        lead.append(tok[0])
        tok = tok[1:]
    while tok and tok[-1] in _PUNCT_CHARS and not is_punct(tok):
        trail.append(tok[-1])
        tok = tok[:-1]
    return lead + [tok] + trail[::-1]


def clean_line(line: str) -> str:
    """Lower-case, drop parenthesised spans, strip leading hyphens, split edge punctuation."""
    text = _drop_parenthesized(line.lower())
    text = re.sub(r"^[\s\-–—]+", "", text)
    toks = []
    for raw in text.split():
        toks.extend(t for t in _split_token(raw) if t)
    return " ".join(toks)


def load_monolingual(source, language: str, name: str = "") -> TaggedCorpus:
    if language not in (L1, L2):
        raise CorpusError(f"unknown language {language!r}")
    sents, idx = [], []
    for lineno, raw in enumerate(_lines(source), 1):
        text = clean_line(raw)
        if not text:
            continue
        toks = tuple(TaggedToken(t, PUNCT if is_punct(t) else language) for t in text.split())
        if len(toks) > MAX_SENTENCE_TOKENS:
            log.warning("line %d: %d tokens, skipped", lineno, len(toks))
            continue
        if not any(t.is_word for t in toks):
            continue
        sents.append(GoldSentence(toks))
        idx.append(lineno - 1)
    return TaggedCorpus(sents, name, indices=idx)


def split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment: each size is within one of ``n * ratio``."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError("split ratios must sum to 1")
    exact = [n * r for r in ratios]
    sizes = [int(x) for x in exact]
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(corpus: TaggedCorpus, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Tuple[TaggedCorpus, TaggedCorpus, TaggedCorpus]:
    n = len(corpus)
    perm = list(range(n))
    random.Random(f"split:{seed}").shuffle(perm)
    sizes = split_sizes(n, ratios)
    parts = []
    start = 0
    for name, size in zip(("train", "dev", "test"), sizes):
        chosen = sorted(perm[start : start + size])
        start += size
        parts.append(
            TaggedCorpus(
                [corpus.sentences[i] for i in chosen],
                corpus.source,
                name,
                [corpus.indices[i] for i in chosen] if corpus.indices else chosen,
            )
        )
    return tuple(parts)


def split_manifest(parts: Sequence[TaggedCorpus]) -> dict:
    return {p.split: p.indices for p in parts}


# -- vocabulary ---------------------------------------------------------------


class Vocabulary:
    """Shared token <-> id map without an unknown token.

    Ids 0, 1, 2 are BOS, EOS and the word-dropout placeholder; the remaining
    tokens follow in sorted order. ``trainable[i]`` says whether embedding
    row ``i`` may be updated.
    """

    def __init__(self, tokens: Iterable[str], trainable_tokens: Iterable[str] = ()):
        words = sorted(set(tokens) - set(RESERVED))
        self.itos: List[str] = list(RESERVED) + words
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        train = set(trainable_tokens) | set(RESERVED)
        self.trainable = np.array([t in train for t in self.itos], dtype=bool)

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def placeholder(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def encode(self, tokens: Sequence[str]) -> List[int]:
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as e:
            raise KeyError(f"token {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": self.itos, "frozen": [t for t, ok in zip(self.itos, self.trainable) if not ok]}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        frozen = set(d.get("frozen", ()))
        v = cls(d["tokens"], [t for t in d["tokens"] if t not in frozen])
        if v.itos != list(d["tokens"]):
            raise ValueError("vocabulary tokens are not in canonical order")
        return v

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


def sentence_tokens(s: Union[GoldSentence, Sequence[TaggedToken]]) -> List[str]:
    """Surface tokens the models see (punctuation included)."""
    toks = s.tokens if isinstance(s, GoldSentence) else s
    return [t.surface for t in toks]


def _tokens_of(items) -> Iterable[str]:
    for item in items:
        if isinstance(item, EvalSet):
            for sent in item.sentences():
                yield from sentence_tokens(sent)
        elif isinstance(item, TaggedCorpus):
            for s in item:
                yield from sentence_tokens(s)
        elif isinstance(item, GoldSentence):
            yield from sentence_tokens(item)
        else:
            yield from item


def build_vocab(train, dev=(), test=(), monolingual=(), extra=()) -> Vocabulary:
    """Union of all tokens; only tokens of the training data are trainable.

    ``train`` and ``monolingual`` are whatever the protocol trains on (both
    count as training data); ``dev``, ``test`` and ``extra`` (e.g. evaluation
    sets with their alternatives) only contribute frozen entries.
    """
    train_items = list(_as_list(train)) + list(_as_list(monolingual))
    trainable = set(_tokens_of(train_items))
    everything = set(trainable)
    everything.update(_tokens_of(_as_list(dev)))
    everything.update(_tokens_of(_as_list(test)))
    everything.update(_tokens_of(_as_list(extra)))
    return Vocabulary(everything, trainable)


def _as_list(x):
    if isinstance(x, (TaggedCorpus, EvalSet, GoldSentence)):
        return [x]
    return list(x)


def corpus_hash(corpus: TaggedCorpus) -> str:
    h = hashlib.sha256()
    for s in corpus:
        h.update(" ".join(f"{t.surface}/{t.language}" for t in s.tokens).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]
