"""Pronunciation dictionaries, unigram tables and the decoding transducers.

Words on the transducer side are tagged with their language, ``word|l1``,
so a surface form that exists in both languages keeps one pronunciation
set per language.
"""

from __future__ import annotations

import io
import itertools
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, TextIO, Tuple, Union

from .wfst import EPSILON, SymbolTable, WFST, WFSTBuilder, invert

log = logging.getLogger(__name__)

L1 = "l1"
L2 = "l2"
PUNCT = "punct"
LANGUAGES = (L1, L2)

UNIGRAM_FLOOR = 1e-9
DEFAULT_KEEP_SINGLE = frozenset("aiyoeu")

Pron = Tuple[str, ...]


class LexiconError(ValueError):
    pass


class ParseError(LexiconError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


def tag(word: str, language: str) -> str:
    return f"{word}|{language}"


def untag(symbol: str) -> Tuple[str, str]:
    word, _, language = symbol.rpartition("|")
    return word, language


@dataclass
class PronEntry:
    word: str
    language: str
    pronunciations: List[Pron]


@dataclass
class Lexicon:
    """Entries keyed by ``(word, language)`` plus unigram probabilities."""

    entries: Dict[Tuple[str, str], PronEntry] = field(default_factory=dict)
    unigrams: Dict[str, Dict[str, float]] = field(default_factory=dict)
    stoplist: Set[str] = field(default_factory=set)

    def add(self, word: str, language: str, pron: Sequence[str]) -> None:
        key = (word, language)
        pron = tuple(pron)
        if not pron:
            raise LexiconError(f"empty pronunciation for {word!r}")
        entry = self.entries.get(key)
        if entry is None:
            self.entries[key] = PronEntry(word, language, [pron])
        elif pron not in entry.pronunciations:
            entry.pronunciations.append(pron)

    def merge(self, other: "Lexicon") -> "Lexicon":
        out = Lexicon(stoplist=self.stoplist | other.stoplist)
        for lex in (self, other):
            for e in lex.entries.values():
                for p in e.pronunciations:
                    out.add(e.word, e.language, p)
            for lang, table in lex.unigrams.items():
                out.unigrams.setdefault(lang, {}).update(table)
        return out

    def lookup(self, word: str, language: str) -> Optional[PronEntry]:
        return self.entries.get((word, language))

    def words(self, language: str) -> List[str]:
        return sorted(w for (w, lang) in self.entries if lang == language)

    def phonemes(self) -> List[str]:
        inv = {ph for e in self.entries.values() for p in e.pronunciations for ph in p}
        return sorted(inv)

    def unigram(self, word: str, language: str) -> float:
        return self.unigrams.get(language, {}).get(word, UNIGRAM_FLOOR)

    def is_filtered(self, word: str) -> bool:
        return word in self.stoplist

    def __len__(self) -> int:
        return len(self.entries)


def default_stoplist(words: Iterable[str], keep: Iterable[str] = DEFAULT_KEEP_SINGLE) -> Set[str]:
    """Single-character words except a few genuine ones."""
    keep = set(keep)
    return {w for w in words if len(w) == 1 and w not in keep}


# -- CMU format ---------------------------------------------------------------

_VARIANT = re.compile(r"^(.+?)\((\d+)\)$")
_STRESS = re.compile(r"(?<=[A-Za-z])[0-2]$")


def strip_stress(phone: str) -> str:
    return _STRESS.sub("", phone)


def load_pron_dict(source: Union[TextIO, Iterable[str]], language: str) -> Lexicon:
    """Read a CMU-format dictionary.

    ``WORD  PH1 PH2 ...`` per line; ``WORD(2)`` marks a variant; lines
    starting with ``;;;`` are comments. Words are lower-cased and stress
    digits are dropped from phonemes.
    """
    lex = Lexicon()
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"expected a word and at least one phoneme, got {line!r}", lineno)
        word = parts[0]
        m = _VARIANT.match(word)
        if m:
            word = m.group(1)
        phones = [strip_stress(p) for p in parts[1:]]
        if any(not p or not re.fullmatch(r"[A-Za-z]+", p) for p in phones):
            raise ParseError(f"bad phoneme in {line!r}", lineno)
        lex.add(word.lower(), language, phones)
    return lex


def dump_pron_dict(lex: Lexicon, language: str) -> str:
    """Serialise one language's entries back to CMU format."""
    lines = []
    for word in lex.words(language):
        for k, pron in enumerate(lex.entries[(word, language)].pronunciations):
            head = word.upper() if k == 0 else f"{word.upper()}({k + 1})"
            lines.append(f"{head}  {' '.join(pron)}")
    return "\n".join(lines) + ("\n" if lines else "")


# -- phoneme maps and similar-phoneme lists -----------------------------------


PhonemeMap = Dict[str, List[Pron]]


def parse_pair_lines(source: Union[TextIO, Iterable[str]]) -> List[Tuple[str, Pron]]:
    """``SRC<TAB>TGT1 TGT2`` lines; blank lines and ``#`` comments skipped."""
    pairs = []
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            src, tgt = line.split("\t", 1)
        else:
            src, _, tgt = line.partition(" ")
        tgt_phones = tuple(tgt.split())
        if not src.strip() or not tgt_phones:
            raise ParseError(f"expected SRC<TAB>TARGET, got {line!r}", lineno)
        pairs.append((src.strip(), tgt_phones))
    return pairs


def load_phoneme_map(source: Union[TextIO, Iterable[str]]) -> PhonemeMap:
    mapping: PhonemeMap = {}
    for src, tgt in parse_pair_lines(source):
        alts = mapping.setdefault(src, [])
        if tgt not in alts:
            alts.append(tgt)
    return mapping


def apply_phoneme_map(lex: Lexicon, mapping: Mapping[str, Sequence[Pron]]) -> Lexicon:
    """Rewrite every pronunciation through ``mapping``.

    A source phoneme with several targets multiplies the pronunciations of
    the words that contain it (cross product).
    """
    out = Lexicon(unigrams={k: dict(v) for k, v in lex.unigrams.items()}, stoplist=set(lex.stoplist))
    for (word, lang), entry in lex.entries.items():
        for pron in entry.pronunciations:
            options = []
            for ph in pron:
                if ph not in mapping:
                    raise LexiconError(f"no mapping for phoneme {ph!r} (word {word!r})")
                options.append(mapping[ph])
            for combo in itertools.product(*options):
                out.add(word, lang, tuple(itertools.chain.from_iterable(combo)))
        if (word, lang) not in out.entries:
            raise LexiconError(f"mapping removed every pronunciation of {word!r}")
    return out


@dataclass(frozen=True)
class SimilarPhonemes:
    pairs: Tuple[Tuple[str, str], ...] = ()
    sub_cost: float = 3.0
    del_cost: float = 4.0

    def __post_init__(self):
        if not self.sub_cost > 0 or not self.del_cost > 0:
            raise LexiconError("edit costs must be positive")

    def substitutions(self) -> List[Tuple[str, str]]:
        """Ordered (from, to) pairs, closed under symmetry."""
        subs = set()
        for x, y in self.pairs:
            if x != y:
                subs.add((x, y))
                subs.add((y, x))
        return sorted(subs)


def load_similar_phonemes(source, sub_cost: float = 3.0, del_cost: float = 4.0) -> SimilarPhonemes:
    pairs = []
    for src, tgt in parse_pair_lines(source):
        for t in tgt:
            if t != "-":
                pairs.append((src, t))
    return SimilarPhonemes(tuple(pairs), sub_cost, del_cost)


# -- unigram tables -----------------------------------------------------------


def load_unigrams(source: Union[TextIO, Iterable[str]]) -> Dict[str, float]:
    """``word<TAB>count`` or ``word<TAB>prob``.

    Values summing to 1 (within 1e-3) are read as probabilities; otherwise
    they are counts and get normalised.
    """
    values: Dict[str, float] = {}
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected word and value, got {line!r}", lineno)
        try:
            v = float(parts[1])
        except ValueError:
            raise ParseError(f"bad value {parts[1]!r}", lineno) from None
        if v <= 0:
            raise ParseError(f"non-positive value for {parts[0]!r}", lineno)
        word = parts[0].lower()
        values[word] = values.get(word, 0.0) + v
    total = sum(values.values())
    if total == 0:
        return {}
    if abs(total - 1.0) < 1e-3:
        return values
    return {w: v / total for w, v in values.items()}


# -- transducers --------------------------------------------------------------


def phoneme_table(lex: Lexicon, extra: Iterable[str] = ()) -> SymbolTable:
    return SymbolTable(sorted(set(lex.phonemes()) | set(extra)))


def word_table(lex: Lexicon, languages: Iterable[str] = LANGUAGES) -> SymbolTable:
    languages = set(languages)
    return SymbolTable(sorted(tag(w, lang) for (w, lang) in lex.entries if lang in languages))


def _word_loop(
    lex: Lexicon,
    languages: Iterable[str],
    phones: SymbolTable,
    words: SymbolTable,
    cost_of,
    skip_filtered: bool,
) -> WFST:
    b = WFSTBuilder(words, phones)
    home = b.add_state()
    b.set_final(home)
    languages = set(languages)
    for key in sorted(lex.entries):
        word, lang = key
        if lang not in languages:
            continue
        if skip_filtered and lex.is_filtered(word):
            continue
        wid = words.get(tag(word, lang))
        if wid is None:
            continue
        cost = cost_of(word, lang)
        for pron in lex.entries[key].pronunciations:
            q = home
            for k, ph in enumerate(pron):
                pid = phones.id(ph)
                last = k == len(pron) - 1
                dst = home if last else b.add_state()
                b.add_arc(q, wid if k == 0 else EPSILON, pid, cost if k == 0 else 0.0, dst)
                q = dst
    return b.build()


def build_word2phone(
    lex: Lexicon,
    languages: Iterable[str] = LANGUAGES,
    phones: Optional[SymbolTable] = None,
    words: Optional[SymbolTable] = None,
) -> WFST:
    """Map tagged-word sequences to phoneme sequences at zero cost.

    One loop per pronunciation through a single start/final state; the word
    label sits on the first arc and the rest of the word emits with
    epsilon input.
    """
    phones = phoneme_table(lex) if phones is None else phones
    words = word_table(lex, languages) if words is None else words
    return _word_loop(lex, languages, phones, words, lambda w, l: 0.0, skip_filtered=False)


def build_phone2word(
    lex: Lexicon,
    languages: Iterable[str] = LANGUAGES,
    unigram_scale: float = 0.1,
    phones: Optional[SymbolTable] = None,
    words: Optional[SymbolTable] = None,
) -> WFST:
    """Decode phonemes into tagged words.

    The inverse of :func:`build_word2phone` restricted to unfiltered words of
    ``languages``, with ``unigram_scale * -ln p(word)`` charged once per word.
    """
    if unigram_scale < 0:
        raise LexiconError("unigram_scale must be >= 0")
    languages = set(languages)
    phones = phoneme_table(lex) if phones is None else phones
    words = word_table(lex, languages) if words is None else words

    def cost(word, lang):
        if unigram_scale == 0:
            return 0.0
        return unigram_scale * -math.log(lex.unigram(word, lang))

    return invert(_word_loop(lex, languages, phones, words, cost, skip_filtered=True))


def build_edit_fst(sim: SimilarPhonemes, phones: SymbolTable, allow_deletion: bool = True) -> WFST:
    """Single-state phoneme editor: identity at 0, substitutions, deletions."""
    b = WFSTBuilder(phones)
    q = b.add_state()
    b.set_final(q)
    for pid, sym in phones:
        if pid == EPSILON:
            continue
        b.add_arc(q, pid, pid, 0.0, q)
    for x, y in sim.substitutions():
        if x not in phones or y not in phones:
            raise LexiconError(f"similar pair ({x}, {y}) uses a phoneme outside the inventory")
        b.add_arc(q, phones.id(x), phones.id(y), sim.sub_cost, q)
    if allow_deletion and math.isfinite(sim.del_cost):
        for pid, sym in phones:
            if pid != EPSILON:
                b.add_arc(q, pid, EPSILON, sim.del_cost, q)
    return b.build()


# -- reference resources ------------------------------------------------------

# Spanish (CMUSphinx) to CMU inventory, as published with the evaluation set.
SPANISH_TO_CMU = """\
ch\tCH
rr\tR
gn\tNG
a\tAA
b\tB
b\tV
e\tEY
d\tD
d\tDH
g\tG
f\tF
i\tIY
k\tK
j\tH
m\tM
n\tN
l\tL
o\tOW
p\tP
s\tS
r\tR
u\tUW
t\tT
y\tY
x\tS
x\tSH
x\tK S
x\tH
z\tTH
z\tS
ll\tL Y
ll\tSH
"""

SIMILAR_PHONEMES = """\
OW\tUW
AA\tEY
L\tM
N\tM
M\tL
B\tP
B\tV
V\tF
T\tD
K\tG
S\tZ
S\tTH
Z\tTH
SH\tZH
"""


def spanish_to_cmu_map() -> PhonemeMap:
    return load_phoneme_map(io.StringIO(SPANISH_TO_CMU))


def default_similar_phonemes(sub_cost: float = 3.0, del_cost: float = 4.0) -> SimilarPhonemes:
    return load_similar_phonemes(io.StringIO(SIMILAR_PHONEMES), sub_cost, del_cost)
