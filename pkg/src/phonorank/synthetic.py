"""A small synthetic bilingual world for smoke tests and demos.

Two languages share a 10-phoneme inventory but spell with disjoint letter
sets, so every surface form belongs to exactly one language. Each language
has a sparse bigram grammar; code-switched sentences splice segments of the
two grammars together, which gives a ranker something to learn.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Sequence

from .altgen import GoldSentence, TaggedToken
from .lexicon import L1, L2, PUNCT, Lexicon, SimilarPhonemes

PHONEMES = ("B", "P", "T", "D", "S", "Z", "M", "N", "AA", "IY")
SIMILAR = (("B", "P"), ("T", "D"), ("S", "Z"), ("M", "N"), ("AA", "IY"))
SPELLING = {
    L1: dict(zip(PHONEMES, ("b", "p", "t", "d", "s", "z", "m", "n", "a", "i"))),
    L2: dict(zip(PHONEMES, ("v", "f", "c", "g", "x", "j", "w", "h", "o", "e"))),
}


@dataclass
class ToyWorld:
    lexicon: Lexicon
    similar: SimilarPhonemes
    successors: Dict[str, Dict[str, List[str]]]
    starts: Dict[str, List[str]]
    seed: int
    follow_prob: float = 0.9
    switch_prob: float = 0.3
    min_len: int = 4
    max_len: int = 9
    period_prob: float = 0.5

    def words(self, language: str) -> List[str]:
        return self.lexicon.words(language)

    def _segment_word(self, lang: str, prev: str, rng: random.Random) -> str:
        if prev is not None and rng.random() < self.follow_prob:
            return rng.choice(self.successors[lang][prev])
        return rng.choice(self.starts[lang])

    def sentence(self, rng: random.Random, kind: str) -> GoldSentence:
        """Sample one sentence; ``kind`` is ``l1``, ``l2`` or ``cs``."""
        n = rng.randint(self.min_len, self.max_len)
        while True:
            lang = kind if kind in (L1, L2) else rng.choice((L1, L2))
            toks: List[TaggedToken] = []
            prev = None
            for _ in range(n):
                if kind == "cs" and toks and rng.random() < self.switch_prob:
                    lang = L2 if lang == L1 else L1
                    prev = None
                w = self._segment_word(lang, prev, rng)
                toks.append(TaggedToken(w, lang))
                prev = w
            if kind != "cs" or {t.language for t in toks} == {L1, L2}:
                break
        if rng.random() < self.period_prob:
            toks.append(TaggedToken(".", PUNCT))
        return GoldSentence(tuple(toks))

    def corpus(self, n: int, kind: str, seed: int) -> List[GoldSentence]:
        rng = random.Random(f"toy-corpus:{self.seed}:{kind}:{seed}")
        return [self.sentence(rng, kind) for _ in range(n)]


def spell(pron: Sequence[str], language: str) -> str:
    return "".join(SPELLING[language][p] for p in pron)


def make_world(
    seed: int = 0,
    words_per_language: int = 50,
    branching: int = 3,
    sub_cost: float = 3.0,
    del_cost: float = 4.0,
) -> ToyWorld:
    rng = random.Random(f"toy-world:{seed}")
    lex = Lexicon()
    all_prons = [(a, b, c) for a in PHONEMES for b in PHONEMES for c in PHONEMES]
    successors: Dict[str, Dict[str, List[str]]] = {}
    starts: Dict[str, List[str]] = {}
    for lang in (L1, L2):
        prons = rng.sample(all_prons, words_per_language)
        words = []
        for p in prons:
            w = spell(p, lang)
            lex.add(w, lang, p)
            words.append(w)
        # Zipf-like unigram table over a random rank order
        ranked = words[:]
        rng.shuffle(ranked)
        z = sum(1.0 / (r + 1) for r in range(len(ranked)))
        lex.unigrams[lang] = {w: (1.0 / (r + 1)) / z for r, w in enumerate(ranked)}
        successors[lang] = {w: rng.sample(words, branching) for w in words}
        starts[lang] = rng.sample(words, max(branching, len(words) // 5))
    sim = SimilarPhonemes(SIMILAR, sub_cost, del_cost)
    return ToyWorld(lex, sim, successors, starts, seed)


def tagged_line(sent: GoldSentence) -> str:
    return " ".join(f"{t.surface}/{t.language}" for t in sent.tokens)


def plain_line(sent: GoldSentence) -> str:
    return " ".join(t.surface for t in sent.tokens)
