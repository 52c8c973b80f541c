"""Phonetically confusable alternatives for language-tagged gold sentences.

A gold sentence (or a sampled span of it) is turned into phonemes, pushed
through the phoneme editor and decoded back into words; the n-best decodings
are rescored with a small heuristic and the top ones kept. Each gold
sentence gets code-switched, L1-only and L2-only alternatives.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .lexicon import (
    L1,
    L2,
    LANGUAGES,
    PUNCT,
    Lexicon,
    SimilarPhonemes,
    build_edit_fst,
    build_phone2word,
    phoneme_table,
    untag,
    word_table,
)
from .wfst import WFST, compose, linear_acceptor, nbest

log = logging.getLogger(__name__)

CS = "cs"
ALT_TYPES = (CS, L1, L2)
GOLD_CS = "cs"
GOLD_MONO_L1 = "mono-l1"
GOLD_MONO_L2 = "mono-l2"


class GenerationError(Exception):
    pass


class OOVError(GenerationError):
    def __init__(self, word: str, language: str):
        self.word, self.language = word, language
        super().__init__(f"{word!r} is not in the {language} lexicon")


class InsufficientPool(ValueError):
    def __init__(self, have_cs: int, have_mono: int, need_cs: int, need_mono: int):
        self.counts = (have_cs, have_mono, need_cs, need_mono)
        super().__init__(
            f"pool has {have_cs} CS-gold and {have_mono} mono-gold sets; "
            f"need {need_cs} and {need_mono}"
        )


@dataclass(frozen=True)
class TaggedToken:
    surface: str
    language: str

    def __post_init__(self):
        if not self.surface:
            raise ValueError("empty token")
        if self.language not in (L1, L2, PUNCT):
            raise ValueError(f"unknown language tag {self.language!r}")

    @property
    def is_word(self) -> bool:
        return self.language != PUNCT


def words_of(tokens: Sequence[TaggedToken]) -> List[TaggedToken]:
    return [t for t in tokens if t.is_word]


def surfaces(tokens: Sequence[TaggedToken]) -> Tuple[str, ...]:
    return tuple(t.surface for t in tokens)


@dataclass(frozen=True)
class GoldSentence:
    tokens: Tuple[TaggedToken, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def kind(self) -> str:
        langs = {t.language for t in self.tokens if t.is_word}
        if langs == {L1, L2}:
            return GOLD_CS
        return GOLD_MONO_L2 if langs == {L2} else GOLD_MONO_L1

    @property
    def is_cs(self) -> bool:
        return self.kind == GOLD_CS

    @property
    def num_words(self) -> int:
        return sum(1 for t in self.tokens if t.is_word)

    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)


@dataclass
class Alternative:
    tokens: Tuple[TaggedToken, ...]
    alt_type: str
    gen_cost: float
    heur_score: float = 0.0


@dataclass
class EvalSet:
    id: str
    gold: GoldSentence
    alternatives: Dict[str, List[Alternative]]

    @property
    def gold_kind(self) -> str:
        return self.gold.kind

    def sentences(self) -> List[Tuple[TaggedToken, ...]]:
        """Gold first, then every alternative in type order."""
        out = [self.gold.tokens]
        for t in ALT_TYPES:
            out.extend(a.tokens for a in self.alternatives.get(t, []))
        return out

    def num_alternatives(self) -> int:
        return sum(len(v) for v in self.alternatives.values())


@dataclass(frozen=True)
class Rejection:
    id: str
    reason: str


@dataclass
class GenerationConfig:
    nbest: int = 1000
    keep: int = 10
    min_alternatives: int = 5
    min_gold_words: int = 3
    unigram_scale: float = 0.1
    sub_cost: float = 3.0
    del_cost: float = 4.0
    w_cost: float = 1.0
    w_minority: float = 2.0
    w_length: float = 0.5
    span_min: float = 0.3
    span_max: float = 0.7
    max_expansions: int = 1_000_000


# -- pieces -------------------------------------------------------------------


def phonemize(tokens: Sequence[TaggedToken], lex: Lexicon) -> List[str]:
    """Concatenate first pronunciations; punctuation contributes nothing."""
    phones: List[str] = []
    for t in tokens:
        if not t.is_word:
            continue
        entry = lex.lookup(t.surface, t.language)
        if entry is None:
            raise OOVError(t.surface, t.language)
        phones.extend(entry.pronunciations[0])
    return phones


def span_bounds(num_words: int, lo: float = 0.3, hi: float = 0.7) -> Tuple[int, int]:
    """Allowed converted-span lengths: ceil(lo*n) .. floor(hi*n), at least one word."""
    shortest = max(1, math.ceil(lo * num_words - 1e-9))
    longest = max(shortest, math.floor(hi * num_words + 1e-9))
    return shortest, min(longest, num_words)


def sample_span(gold: GoldSentence, rng: random.Random, lo: float = 0.3, hi: float = 0.7) -> Tuple[int, int]:
    """A contiguous token range ``[start, stop)`` covering a sampled run of words.

    The run length is uniform over :func:`span_bounds`, then the start word
    is uniform over the feasible positions. Punctuation between the chosen
    words falls inside the range.
    """
    positions = [i for i, t in enumerate(gold.tokens) if t.is_word]
    n = len(positions)
    if n == 0:
        raise GenerationError("sentence has no words")
    shortest, longest = span_bounds(n, lo, hi)
    length = rng.randint(shortest, longest)
    first = rng.randint(0, n - length)
    return positions[first], positions[first + length - 1] + 1


def full_span(gold: GoldSentence) -> Tuple[int, int]:
    positions = [i for i, t in enumerate(gold.tokens) if t.is_word]
    return positions[0], positions[-1] + 1


def minority_language(gold: GoldSentence) -> str:
    n1 = sum(1 for t in gold.tokens if t.language == L1)
    n2 = sum(1 for t in gold.tokens if t.language == L2)
    return L1 if n1 < n2 else L2


def heuristic_score(cand: Alternative, gold: GoldSentence, cfg: GenerationConfig) -> float:
    """-w_cost*cost + w_minority*minority_fraction + w_length*mean word length.

    The minority term only applies to code-switched alternatives.
    """
    words = words_of(cand.tokens)
    minority = 0.0
    if cand.alt_type == CS and words:
        m = minority_language(gold)
        minority = sum(1 for t in words if t.language == m) / len(words)
    mean_len = sum(len(t.surface) for t in words) / len(words) if words else 0.0
    return -cfg.w_cost * cand.gen_cost + cfg.w_minority * minority + cfg.w_length * mean_len


# -- generator ----------------------------------------------------------------


class Generator:
    """Compiled decoding machinery for one lexicon and configuration."""

    def __init__(self, lex: Lexicon, sim: SimilarPhonemes, cfg: Optional[GenerationConfig] = None):
        self.lex = lex
        self.cfg = cfg or GenerationConfig()
        self.sim = SimilarPhonemes(sim.pairs, self.cfg.sub_cost, self.cfg.del_cost)
        extra = {p for pair in self.sim.pairs for p in pair}
        self.phones = phoneme_table(lex, extra)
        self.words = word_table(lex, LANGUAGES)
        self.edit = build_edit_fst(self.sim, self.phones)
        self._tokens = [None] + [TaggedToken(*untag(sym)) for i, sym in self.words if i]
        self.decoders: Dict[str, WFST] = {}
        for alt_type, langs in ((CS, LANGUAGES), (L1, (L1,)), (L2, (L2,))):
            self.decoders[alt_type] = build_phone2word(
                lex, langs, self.cfg.unigram_scale, phones=self.phones, words=self.words
            )

    def lattice(self, phones: Sequence[str], alt_type: str) -> WFST:
        acceptor = linear_acceptor([self.phones.id(p) for p in phones], self.phones)
        return compose(compose(acceptor, self.edit), self.decoders[alt_type])

    def decode(self, phones: Sequence[str], alt_type: str, n: Optional[int] = None) -> List[Tuple[Tuple[TaggedToken, ...], float]]:
        """Distinct decodings of ``phones`` (ignoring language tags), cheapest first."""
        n = self.cfg.nbest if n is None else n
        paths = nbest(self.lattice(phones, alt_type), n, self.cfg.max_expansions)
        out = []
        seen = set()
        for p in paths:
            toks = tuple(self._tokens[i] for i in p.output)
            key = surfaces(toks)
            if key in seen:
                continue
            seen.add(key)
            out.append((toks, p.weight))
        return out

    def generate(self, gold: GoldSentence, alt_type: str, rng: random.Random) -> List[Alternative]:
        cfg = self.cfg
        if alt_type == CS:
            start, stop = sample_span(gold, rng, cfg.span_min, cfg.span_max)
        else:
            start, stop = full_span(gold)
        head, body, tail = gold.tokens[:start], gold.tokens[start:stop], gold.tokens[stop:]
        phones = phonemize(body, self.lex)
        gold_key = surfaces(gold.tokens)
        cands: List[Alternative] = []
        seen = set()
        for toks, cost in self.decode(phones, alt_type):
            if not toks:
                continue
            full = head + toks + tail
            key = surfaces(full)
            if key == gold_key or key in seen:
                continue
            seen.add(key)
            alt = Alternative(full, alt_type, cost)
            alt.heur_score = heuristic_score(alt, gold, cfg)
            cands.append(alt)
        # stable: equal heuristic scores keep decoding order
        cands.sort(key=lambda a: -a.heur_score)
        return cands[: cfg.keep]


def sentence_rng(seed: int, sentence_id: str) -> random.Random:
    return random.Random(f"{seed}:{sentence_id}")


def build_set(
    set_id: str, gold: GoldSentence, gen: Generator, rng: random.Random
) -> Union[EvalSet, Rejection]:
    cfg = gen.cfg
    if gold.num_words < cfg.min_gold_words:
        return Rejection(set_id, "too-short")
    alts: Dict[str, List[Alternative]] = {}
    try:
        for alt_type in ALT_TYPES:
            found = gen.generate(gold, alt_type, rng)
            if len(found) < cfg.min_alternatives:
                return Rejection(set_id, f"few-{alt_type}")
            alts[alt_type] = found
    except OOVError as e:
        log.debug("skipping %s: %s", set_id, e)
        return Rejection(set_id, "oov")
    return EvalSet(set_id, gold, alts)


_WORKER_GEN: Optional[Generator] = None


def _init_worker(gen: Generator) -> None:
    global _WORKER_GEN
    _WORKER_GEN = gen


def _build_in_worker(args):
    set_id, gold, seed = args
    return build_set(set_id, gold, _WORKER_GEN, sentence_rng(seed, set_id))


def build_pool(
    golds: Sequence[Tuple[str, GoldSentence]],
    gen: Generator,
    seed: int,
    workers: int = 1,
    progress=None,
) -> Tuple[List[EvalSet], List[Rejection]]:
    """Build sets for every gold sentence; output order follows the input."""
    sets: List[EvalSet] = []
    rejected: List[Rejection] = []
    if workers <= 1:
        results: Iterable = (build_set(i, g, gen, sentence_rng(seed, i)) for i, g in golds)
        pool = None
    else:
        import multiprocessing as mp

        pool = mp.get_context("fork").Pool(workers, initializer=_init_worker, initargs=(gen,))
        results = pool.imap(_build_in_worker, [(i, g, seed) for i, g in golds], chunksize=4)
    try:
        for k, r in enumerate(results, 1):
            (sets if isinstance(r, EvalSet) else rejected).append(r)
            if progress is not None:
                progress(k, len(golds))
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return sets, rejected


def assemble_dataset(pool: Sequence[EvalSet], n_cs: int, n_mono: int, rng: random.Random) -> List[EvalSet]:
    """Sample ``n_cs`` CS-gold and ``n_mono`` mono-gold sets without replacement."""
    cs = sorted((s for s in pool if s.gold.is_cs), key=lambda s: s.id)
    mono = sorted((s for s in pool if not s.gold.is_cs), key=lambda s: s.id)
    if len(cs) < n_cs or len(mono) < n_mono:
        raise InsufficientPool(len(cs), len(mono), n_cs, n_mono)
    chosen = rng.sample(cs, n_cs) + rng.sample(mono, n_mono)
    return sorted(chosen, key=lambda s: s.id)


def split_counts(n_sets: int, cs_fraction: float) -> Tuple[int, int]:
    n_cs = int(round(n_sets * cs_fraction))
    return n_cs, n_sets - n_cs


# -- serialisation ------------------------------------------------------------


def tokens_to_json(tokens: Sequence[TaggedToken]) -> List[dict]:
    return [{"w": t.surface, "lang": t.language} for t in tokens]


def tokens_from_json(items: Sequence[dict]) -> Tuple[TaggedToken, ...]:
    return tuple(TaggedToken(d["w"], d["lang"]) for d in items)


def set_to_json(s: EvalSet) -> dict:
    return {
        "id": s.id,
        "gold": {"tokens": tokens_to_json(s.gold.tokens)},
        "gold_kind": s.gold_kind,
        "alts": {
            t: [
                {"tokens": tokens_to_json(a.tokens), "cost": a.gen_cost, "score": a.heur_score}
                for a in s.alternatives.get(t, [])
            ]
            for t in ALT_TYPES
        },
    }


def set_from_json(d: dict) -> EvalSet:
    gold = GoldSentence(tokens_from_json(d["gold"]["tokens"]))
    alts = {
        t: [
            Alternative(tokens_from_json(a["tokens"]), t, float(a.get("cost", 0.0)), float(a.get("score", 0.0)))
            for a in d["alts"].get(t, [])
        ]
        for t in ALT_TYPES
    }
    return EvalSet(d["id"], gold, alts)


def write_dataset(sets: Sequence[EvalSet], fp) -> None:
    for s in sets:
        fp.write(json.dumps(set_to_json(s), ensure_ascii=False, sort_keys=True))
        fp.write("\n")


def read_dataset(fp) -> List[EvalSet]:
    out = []
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(set_from_json(json.loads(line)))
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"line {lineno}: bad dataset record ({e})") from None
    return out


def dataset_stats(sets: Sequence[EvalSet]) -> dict:
    per_type = {t: sum(len(s.alternatives.get(t, [])) for s in sets) for t in ALT_TYPES}
    n_cs = sum(1 for s in sets if s.gold.is_cs)
    return {
        "sets": len(sets),
        "sentences": len(sets) + sum(per_type.values()),
        "cs_alternatives": per_type[CS],
        "l1_alternatives": per_type[L1],
        "l2_alternatives": per_type[L2],
        "cs_gold": n_cs,
        "cs_gold_fraction": n_cs / len(sets) if sets else 0.0,
    }


def check_set(s: EvalSet, cfg: GenerationConfig) -> List[str]:
    """Invariant violations of one emitted set (empty when it is valid)."""
    problems = []
    if s.gold.num_words < cfg.min_gold_words:
        problems.append("gold too short")
    gold_key = surfaces(s.gold.tokens)
    for t in ALT_TYPES:
        alts = s.alternatives.get(t, [])
        if not cfg.min_alternatives <= len(alts) <= cfg.keep:
            problems.append(f"{len(alts)} {t} alternatives")
        for a in alts:
            if surfaces(a.tokens) == gold_key:
                problems.append(f"{t} alternative equals gold")
            if t in (L1, L2) and any(x.language not in (t, PUNCT) for x in a.tokens):
                problems.append(f"{t} alternative has foreign words")
    return problems
