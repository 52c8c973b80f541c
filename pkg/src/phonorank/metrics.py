"""Word error rate, ranking accuracy and perplexity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence


@dataclass(frozen=True)
class WERBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.edits / self.ref_len


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> int:
    return wer(ref, hyp).edits if ref else len(hyp)


def wer(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> WERBreakdown:
    """Minimal unit-cost alignment of ``hyp`` against ``ref``.

    Among equally cheap alignments the backtrace prefers a substitution (or
    match), then a deletion, then an insertion.
    """
    n, m = len(ref), len(hyp)
    if n == 0:
        raise ValueError("reference is empty")
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ri != hyp[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WERBreakdown(s, dl, ins, n)


def gold_is_top(scores: Sequence[float], gold: int = 0) -> bool:
    """Strictly best; a tie with any other sentence counts as a miss."""
    g = scores[gold]
    return all(g > s for k, s in enumerate(scores) if k != gold)


def accuracy(rankings: Sequence[Sequence[float]], gold: int = 0) -> float:
    """Percentage of sets whose gold entry scores strictly highest."""
    if not rankings:
        return 0.0
    return 100.0 * sum(gold_is_top(r, gold) for r in rankings) / len(rankings)


def top_index(scores: Sequence[float], gold: int = 0) -> int:
    """Index of the chosen sentence; ties are resolved against the gold entry."""
    best = max(scores)
    tied = [k for k, s in enumerate(scores) if s == best]
    if len(tied) == 1:
        return tied[0]
    others = [k for k in tied if k != gold]
    return others[0]


def corpus_wer(results: Sequence[WERBreakdown], macro: bool = False) -> float:
    """Micro average (total edits / total reference words) x 100, or macro on request."""
    if not results:
        return 0.0
    if macro:
        return 100.0 * sum(r.wer for r in results) / len(results)
    return 100.0 * sum(r.edits for r in results) / sum(r.ref_len for r in results)


class PerplexityAccumulator:
    """Streaming sum of base-2 log probabilities."""

    def __init__(self, sum_log2: float = 0.0, n_tokens: int = 0):
        self.sum_log2 = sum_log2
        self.n_tokens = n_tokens

    def add(self, prob: float) -> None:
        if not prob > 0:
            raise ValueError("zero probability token")
        self.sum_log2 += math.log2(prob)
        self.n_tokens += 1

    def add_log(self, logprob: float) -> None:
        """Add a natural-log probability."""
        if logprob == -math.inf or math.isnan(logprob):
            raise ValueError("zero probability token")
        self.sum_log2 += logprob / math.log(2)
        self.n_tokens += 1

    def merge(self, other: "PerplexityAccumulator") -> "PerplexityAccumulator":
        return PerplexityAccumulator(self.sum_log2 + other.sum_log2, self.n_tokens + other.n_tokens)

    def perplexity(self) -> float:
        return perplexity(self)


def perplexity(acc: PerplexityAccumulator) -> float:
    if acc.n_tokens <= 0:
        raise ValueError("no tokens")
    return 2.0 ** (-acc.sum_log2 / acc.n_tokens)


# -- reports ------------------------------------------------------------------


REPORT_FIELDS = ("perplexity", "accuracy", "wer", "wer_macro", "accuracy_cs_gold", "accuracy_mono_gold")


@dataclass
class RankingReport:
    accuracy: float
    wer: float
    wer_macro: float
    accuracy_cs_gold: Optional[float]
    accuracy_mono_gold: Optional[float]
    n_sets: int
    perplexity: Optional[float] = None

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in REPORT_FIELDS}
        d["n_sets"] = self.n_sets
        if self.perplexity is None:
            del d["perplexity"]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RankingReport":
        return cls(
            accuracy=d["accuracy"],
            wer=d["wer"],
            wer_macro=d.get("wer_macro", d["wer"]),
            accuracy_cs_gold=d.get("accuracy_cs_gold"),
            accuracy_mono_gold=d.get("accuracy_mono_gold"),
            n_sets=d.get("n_sets", 0),
            perplexity=d.get("perplexity"),
        )

    def render(self) -> str:
        rows = []
        if self.perplexity is not None:
            rows.append(("perplexity", f"{self.perplexity:.2f}"))
        rows += [
            ("accuracy", f"{self.accuracy:.1f}"),
            ("wer", f"{self.wer:.2f}"),
            ("wer (macro)", f"{self.wer_macro:.2f}"),
            ("accuracy, CS gold", _opt(self.accuracy_cs_gold)),
            ("accuracy, mono gold", _opt(self.accuracy_mono_gold)),
            ("sets", str(self.n_sets)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def _opt(v: Optional[float]) -> str:
    return "--" if v is None else f"{v:.2f}"


def ranking_report(
    set_scores: Sequence[Sequence[float]],
    set_sentences: Sequence[Sequence[Sequence[str]]],
    gold_is_cs: Sequence[bool],
    perplexity: Optional[float] = None,
) -> RankingReport:
    """Summarise per-set scores; index 0 of every set is the gold sentence.

    ``set_sentences`` holds word sequences (punctuation already removed) used
    for the WER of each set's top choice against its gold.
    """
    wers = []
    for scores, sents in zip(set_scores, set_sentences):
        wers.append(wer(sents[0], sents[top_index(scores)]))
    cs = [s for s, c in zip(set_scores, gold_is_cs) if c]
    mono = [s for s, c in zip(set_scores, gold_is_cs) if not c]
    return RankingReport(
        accuracy=accuracy(set_scores),
        wer=corpus_wer(wers),
        wer_macro=corpus_wer(wers, macro=True),
        accuracy_cs_gold=accuracy(cs) if cs else None,
        accuracy_mono_gold=accuracy(mono) if mono else None,
        n_sets=len(set_scores),
        perplexity=perplexity,
    )
