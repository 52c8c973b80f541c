"""Training protocols for the generative LM and the discriminative ranker.

Every protocol is a sequence of phases; a phase trains for up to
``max_epochs`` with SGD, evaluates a dev metric after each epoch, divides
the learning rate by ``lr_decay`` whenever the metric fails to improve and
keeps the parameters of the best epoch. Fine-tuned protocols run a
monolingual phase and then a code-switched phase with a fresh schedule.
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .altgen import ALT_TYPES, EvalSet, words_of
from .corpus import TaggedCorpus, Vocabulary, build_vocab, sentence_tokens
from .metrics import PerplexityAccumulator, RankingReport, ranking_report, wer
from .neural import (
    LMModel,
    Module,
    RankerModel,
    batch_scores,
    hinge_rank_loss,
    scale,
    sentence_logprobs,
    sgd_step,
    uniform,
)

log = logging.getLogger(__name__)

LM_PROTOCOLS = (
    "l1_only_lm",
    "l2_only_lm",
    "all_shuffled_lm",
    "all_cs_last_lm",
    "cs_only_lm",
    "cs_only_vocab_lm",
    "fine_tuned_lm",
)
DISC_PROTOCOLS = ("cs_only_disc", "fine_tuned_disc")
PROTOCOLS = LM_PROTOCOLS + DISC_PROTOCOLS


class ProtocolError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 10.0
    lr_decay: float = 2.5
    min_lr: float = 0.0
    clip: float = 1.0
    clip_mode: str = "norm"
    weight_decay: float = 1e-5
    batch: int = 20
    max_epochs: int = 40
    word_dropout: float = 0.2
    dropout: float = 0.35
    emb_dim: int = 300
    hidden: int = 650
    layers: int = 2
    representation: str = "bilstm"
    # alternative types kept for monolingual-gold pretraining sets
    pretrain_alt_types: Tuple[str, ...] = ALT_TYPES
    seed: int = 0

    @classmethod
    def for_lm(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def for_disc(cls, **kw) -> "TrainConfig":
        base = dict(lr=1.0, weight_decay=0.0)
        base.update(kw)
        return cls(**base)


def disc_loss(gold_score: float, alts: Sequence[Tuple[float, float]]) -> float:
    """``sum_i max(0, wer_i - (gold - score_i))`` over the alternatives."""
    return sum(max(0.0, w - (gold_score - s)) for s, w in alts)


class DataAudit(Counter):
    """Counts sentences (or sets) drawn from each named partition."""


# -- epoch schedule -----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    metric: float
    improved: bool
    extra: Dict[str, float] = field(default_factory=dict)


class Schedule:
    """Learning-rate decay on non-improvement plus best-epoch bookkeeping."""

    def __init__(self, lr: float, decay: float, mode: str):
        if mode not in ("min", "max"):
            raise ValueError("mode must be 'min' or 'max'")
        self.lr = lr
        self.decay = decay
        self.mode = mode
        self.best: Optional[float] = None
        self.best_epoch: Optional[int] = None

    def improves(self, metric: float) -> bool:
        if self.best is None:
            return not math.isnan(metric)
        return metric < self.best if self.mode == "min" else metric > self.best

    def step(self, epoch: int, metric: float) -> bool:
        """Record ``metric`` for ``epoch``; returns whether it is a new best."""
        if self.improves(metric):
            self.best, self.best_epoch = metric, epoch
            return True
        self.lr /= self.decay
        return False


def fit(
    model: Module,
    run_epoch: Callable[[Module, float, int], float],
    evaluate: Callable[[Module], float],
    cfg: TrainConfig,
    mode: str,
    extra_metrics: Optional[Callable[[Module], Dict[str, float]]] = None,
) -> Tuple[List[EpochRecord], Schedule, Dict[str, dict]]:
    """Train epoch by epoch and leave ``model`` at its best dev epoch.

    ``extra_metrics`` values (higher is better) are tracked too; the state
    of their best epoch is returned under their names.
    """
    sched = Schedule(cfg.lr, cfg.lr_decay, mode)
    history: List[EpochRecord] = []
    best_state = model.state()
    extra_best: Dict[str, dict] = {}
    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        loss = run_epoch(model, lr, epoch)
        metric = evaluate(model)
        extras = extra_metrics(model) if extra_metrics else {}
        improved = sched.step(epoch, metric)
        if improved:
            best_state = model.state()
        for k, v in extras.items():
            cur = extra_best.get(k)
            if cur is None or v > cur["value"]:
                extra_best[k] = {"value": v, "epoch": epoch, "state": model.state()}
        history.append(EpochRecord(epoch, lr, loss, metric, improved, extras))
        log.info("epoch %d lr %.4g loss %.4f dev %.4f%s", epoch, lr, loss, metric, " *" if improved else "")
        if cfg.min_lr and sched.lr < cfg.min_lr:
            log.info("learning rate below %.3g, stopping", cfg.min_lr)
            break
    model.load_state(best_state)
    return history, sched, extra_best


# -- language model -----------------------------------------------------------


def encode_corpus(corpus: Sequence, vocab: Vocabulary) -> List[List[int]]:
    return [vocab.encode(sentence_tokens(s)) for s in corpus]


def _batches(items: Sequence, size: int) -> List[Sequence]:
    return [items[k : k + size] for k in range(0, len(items), size)]


def lm_arrangement(
    protocol: str, parts: Dict[str, List[List[int]]], batch: int, rng: np.random.Generator
) -> List[Tuple[str, List[List[int]]]]:
    """Batches for one epoch, each tagged with the partition it came from.

    ``parts`` maps partition names (``cs``, ``mono_l1``, ``mono_l2``) to
    encoded sentences. A batch never mixes partitions except under the
    shuffled protocol, where it is tagged ``mixed`` and the audit counts
    each sentence by origin.
    """

    def shuffled(names):
        pool = [(n, s) for n in names for s in parts.get(n, [])]
        order = rng.permutation(len(pool))
        return [pool[i] for i in order]

    def chunk(pool):
        return [b for b in _batches(pool, batch)]

    if protocol in ("l1_only_lm",):
        seq = chunk(shuffled(["mono_l1"]))
    elif protocol in ("l2_only_lm",):
        seq = chunk(shuffled(["mono_l2"]))
    elif protocol in ("cs_only_lm", "cs_only_vocab_lm", "finetune"):
        seq = chunk(shuffled(["cs"]))
    elif protocol == "pretrain":
        seq = chunk(shuffled(["mono_l1", "mono_l2"]))
    elif protocol == "all_shuffled_lm":
        seq = chunk(shuffled(["mono_l1", "mono_l2", "cs"]))
    elif protocol == "all_cs_last_lm":
        seq = chunk(shuffled(["mono_l1", "mono_l2"])) + chunk(shuffled(["cs"]))
    else:
        raise ProtocolError(f"no LM arrangement for {protocol!r}")
    return [("+".join(sorted({n for n, _ in b})), b) for b in seq]


def lm_perplexity(model: LMModel, sentences: Sequence[Sequence[int]], batch: int = 64) -> float:
    acc = PerplexityAccumulator()
    for k in range(0, len(sentences), batch):
        chunk = sentences[k : k + batch]
        lp, mask = model.forward(chunk)
        vals = lp.value[mask > 0]
        acc.sum_log2 += float(vals.sum()) / math.log(2)
        acc.n_tokens += int(mask.sum())
    return acc.perplexity()


def lm_epoch(
    model: LMModel,
    protocol: str,
    parts: Dict[str, List[List[int]]],
    cfg: TrainConfig,
    lr: float,
    epoch: int,
    audit: Optional[DataAudit] = None,
) -> float:
    """One pass of cross-entropy SGD over the protocol's arrangement; mean batch loss."""
    if not any(parts.get(n) for n in parts):
        raise ProtocolError("empty training corpus")
    rng = np.random.default_rng([cfg.seed, epoch])
    batches = lm_arrangement(protocol, parts, cfg.batch, rng)
    if not batches:
        raise ProtocolError("empty training corpus")
    losses = []
    for _, batch in batches:
        if audit is not None:
            audit.update(n for n, _ in batch)
        model.zero_grad()
        loss, _ = model.loss([s for _, s in batch], train=True, rng=rng)
        loss.backward()
        sgd_step(model, lr, cfg.clip, cfg.weight_decay, cfg.clip_mode)
        losses.append(loss.item())
    return float(np.mean(losses))


# -- discriminative ranker ----------------------------------------------------


@dataclass
class EncodedSet:
    id: str
    sentences: List[List[int]]  # gold first
    words: List[List[str]]  # punctuation-free, for WER
    wers: List[float]  # per alternative
    gold_is_cs: bool


def encode_sets(sets: Sequence[EvalSet], vocab: Vocabulary, alt_types: Sequence[str] = ALT_TYPES) -> List[EncodedSet]:
    out = []
    for s in sets:
        sents = [s.gold.tokens] + [a.tokens for t in alt_types for a in s.alternatives.get(t, [])]
        try:
            ids = [vocab.encode(sentence_tokens(x)) for x in sents]
        except KeyError as e:
            log.warning("set %s skipped: %s", s.id, e)
            continue
        words = [[t.surface for t in words_of(x)] for x in sents]
        wers = [wer(words[0], w).wer for w in words[1:]]
        out.append(EncodedSet(s.id, ids, words, wers, s.gold.is_cs))
    return out


def disc_epoch(
    model: RankerModel,
    sets: Sequence[EncodedSet],
    cfg: TrainConfig,
    lr: float,
    epoch: int,
    audit: Optional[DataAudit] = None,
    partition: str = "cs_sets",
) -> float:
    """One pass of hinge-loss SGD, ``cfg.batch`` sets per step; mean per-set loss."""
    if not sets:
        raise ProtocolError("no training sets")
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(sets))
    total_loss = 0.0
    for chunk in _batches(order, cfg.batch):
        flat: List[List[int]] = []
        groups = []
        for k in chunk:
            s = sets[k]
            g = len(flat)
            flat.extend(s.sentences)
            groups.append((g, list(range(g + 1, g + len(s.sentences))), s.wers))
        if audit is not None:
            audit[partition] += len(chunk)
        model.zero_grad()
        scores = model.scores(flat, train=True, rng=rng)
        loss = hinge_rank_loss(scores, groups)
        total_loss += loss.item()
        if loss.item() > 0:
            scale(loss, 1.0 / len(chunk)).backward()
            sgd_step(model, lr, cfg.clip, cfg.weight_decay, cfg.clip_mode)
    return total_loss / len(sets)


def score_sets(model: Module, sets: Sequence[EncodedSet]) -> List[np.ndarray]:
    """Per-set score vectors (gold first) under either model kind."""
    flat = [s for es in sets for s in es.sentences]
    if isinstance(model, LMModel):
        allscores = sentence_logprobs(model, flat)
    else:
        allscores = batch_scores(model, flat)
    out = []
    k = 0
    for es in sets:
        n = len(es.sentences)
        out.append(allscores[k : k + n])
        k += n
    return out


def evaluate_sets(model: Module, sets: Sequence[EncodedSet], perplexity: Optional[float] = None) -> RankingReport:
    scores = score_sets(model, sets)
    return ranking_report(scores, [es.words for es in sets], [es.gold_is_cs for es in sets], perplexity)


def dev_accuracy(model: Module, sets: Sequence[EncodedSet]) -> float:
    return evaluate_sets(model, sets).accuracy


# -- protocols ----------------------------------------------------------------


@dataclass
class ProtocolData:
    """Everything a protocol might consume; unused fields stay empty."""

    cs_train: Optional[TaggedCorpus] = None
    cs_dev: Optional[TaggedCorpus] = None
    cs_test: Optional[TaggedCorpus] = None
    mono_l1_train: Optional[TaggedCorpus] = None
    mono_l2_train: Optional[TaggedCorpus] = None
    mono_dev: Optional[TaggedCorpus] = None
    cs_train_sets: Sequence[EvalSet] = ()
    mono_train_sets: Sequence[EvalSet] = ()
    dev_sets: Sequence[EvalSet] = ()
    test_sets: Sequence[EvalSet] = ()


@dataclass
class RunResult:
    protocol: str
    model: Module
    vocab: Vocabulary
    phases: List[dict]
    audit: DataAudit
    best_by_metric: Dict[str, dict] = field(default_factory=dict)


def _history_json(history: List[EpochRecord]) -> List[dict]:
    return [asdict(r) for r in history]


def _require(cond, msg):
    if not cond:
        raise ProtocolError(msg)


def _corpora(*cs) -> List[TaggedCorpus]:
    return [c for c in cs if c is not None and len(c)]


def make_lm(vocab: Vocabulary, cfg: TrainConfig) -> LMModel:
    m = LMModel(
        len(vocab), cfg.emb_dim, cfg.hidden, cfg.layers,
        bos=vocab.bos, eos=vocab.eos, placeholder=vocab.placeholder,
        dropout=cfg.dropout, word_dropout=cfg.word_dropout, seed=cfg.seed,
    )
    m.trainable_rows["emb"] = vocab.trainable.copy()
    return m


def make_ranker(vocab: Vocabulary, cfg: TrainConfig) -> RankerModel:
    m = RankerModel(
        len(vocab), cfg.emb_dim, cfg.hidden, cfg.representation,
        dropout=cfg.dropout, word_dropout=cfg.word_dropout,
        placeholder=vocab.placeholder, seed=cfg.seed,
    )
    m.trainable_rows["emb"] = vocab.trainable.copy()
    return m


def extend_vocabulary(model: Module, old: Vocabulary, new: Vocabulary, seed: int = 0) -> Module:
    """Copy ``model`` onto a larger vocabulary without training the additions.

    Rows of known tokens are carried over; rows for the added tokens get a
    fresh initialisation and stay frozen.
    """
    missing = [t for t in old.itos if t not in new]
    if missing:
        raise ProtocolError(f"new vocabulary drops {len(missing)} tokens, e.g. {missing[0]!r}")
    rows = np.array([new.stoi[t] for t in old.itos])
    cfg = {**model.config(), "vocab_size": len(new)}
    fresh = type(model)(**cfg)
    rng = np.random.default_rng([seed, len(new)])
    state = model.state()
    for name, p in fresh.params.items():
        v = state[name]
        axis = 1 if name == "out.w" else 0 if name in ("emb", "out.b") else None
        if axis is None:
            p.value = v.copy()
            continue
        grown = uniform(rng, p.value.shape)
        if axis == 0:
            grown[rows] = v
        else:
            grown[:, rows] = v
        p.value = grown
    old_mask = model.trainable_rows.get("emb", old.trainable)
    mask = np.zeros(len(new), dtype=bool)
    mask[rows] = old_mask
    fresh.trainable_rows["emb"] = mask
    return fresh


def run_lm_protocol(protocol: str, data: ProtocolData, cfg: TrainConfig) -> RunResult:
    _require(protocol in LM_PROTOCOLS, f"unknown LM protocol {protocol!r}")
    uses = {
        "l1_only_lm": ["mono_l1"],
        "l2_only_lm": ["mono_l2"],
        "all_shuffled_lm": ["mono_l1", "mono_l2", "cs"],
        "all_cs_last_lm": ["mono_l1", "mono_l2", "cs"],
        "cs_only_lm": ["cs"],
        "cs_only_vocab_lm": ["cs"],
        "fine_tuned_lm": ["mono_l1", "mono_l2", "cs"],
    }[protocol]
    corpora = {"cs": data.cs_train, "mono_l1": data.mono_l1_train, "mono_l2": data.mono_l2_train}
    for name in uses:
        _require(corpora[name] is not None and len(corpora[name]) > 0, f"{protocol} needs the {name} training corpus")
    _require(data.cs_dev is not None and len(data.cs_dev) > 0, f"{protocol} needs the CS dev corpus")
    train_corpora = [corpora[n] for n in uses]
    extra = list(data.dev_sets) + list(data.test_sets)
    frozen_mono = []
    if protocol == "cs_only_vocab_lm":
        frozen_mono = _corpora(data.mono_l1_train, data.mono_l2_train)
        _require(frozen_mono, "cs_only_vocab_lm needs monolingual corpora for its vocabulary")
    vocab = build_vocab(
        train_corpora,
        dev=_corpora(data.cs_dev, data.mono_dev),
        test=_corpora(data.cs_test),
        extra=extra + frozen_mono,
    )
    parts = {n: encode_corpus(corpora[n], vocab) for n in uses}
    dev = encode_corpus(data.cs_dev, vocab)
    dev_sets = encode_sets(data.dev_sets, vocab) if data.dev_sets else []
    model = make_lm(vocab, cfg)
    audit = DataAudit()
    phases = []
    extras_fn = (lambda m: {"accuracy": dev_accuracy(m, dev_sets)}) if dev_sets else None

    def phase(name: str, arrangement: str, phase_parts, dev_sents):
        history, sched, best = fit(
            model,
            lambda m, lr, ep: lm_epoch(m, arrangement, phase_parts, cfg, lr, ep, audit),
            lambda m: lm_perplexity(m, dev_sents),
            cfg,
            "min",
            extras_fn,
        )
        phases.append({"phase": name, "metric": "perplexity", "best_epoch": sched.best_epoch,
                       "best": sched.best, "history": _history_json(history)})
        return best

    if protocol == "fine_tuned_lm":
        mono_parts = {k: parts[k] for k in ("mono_l1", "mono_l2")}
        mono_dev = encode_corpus(data.mono_dev, vocab) if data.mono_dev is not None and len(data.mono_dev) else dev
        phase("pretrain", "pretrain", mono_parts, mono_dev)
        best = phase("finetune", "finetune", {"cs": parts["cs"]}, dev)
    else:
        best = phase("train", protocol, parts, dev)
    return RunResult(protocol, model, vocab, phases, audit, best)


def run_disc_protocol(protocol: str, data: ProtocolData, cfg: TrainConfig, cs_fraction: float = 1.0) -> RunResult:
    _require(protocol in DISC_PROTOCOLS, f"unknown discriminative protocol {protocol!r}")
    _require(len(data.cs_train_sets) > 0, f"{protocol} needs code-switched training sets")
    _require(len(data.dev_sets) > 0, f"{protocol} needs dev sets")
    if protocol == "fine_tuned_disc":
        _require(len(data.mono_train_sets) > 0, "fine_tuned_disc needs monolingual training sets")
    cs_sets = list(data.cs_train_sets)
    if cs_fraction < 1.0:
        k = int(round(len(cs_sets) * cs_fraction))
        cs_sets = sorted(random.Random(f"cs-fraction:{cfg.seed}:{cs_fraction}").sample(cs_sets, k), key=lambda s: s.id)
    train_sets = cs_sets + (list(data.mono_train_sets) if protocol == "fine_tuned_disc" else [])
    vocab = build_vocab(train_sets, extra=list(data.dev_sets) + list(data.test_sets))
    model = make_ranker(vocab, cfg)
    cs_enc = encode_sets(cs_sets, vocab)
    dev_enc = encode_sets(data.dev_sets, vocab)
    audit = DataAudit()
    phases = []

    def phase(name, sets, partition):
        history, sched, _ = fit(
            model,
            lambda m, lr, ep: disc_epoch(m, sets, cfg, lr, ep, audit, partition),
            lambda m: dev_accuracy(m, dev_enc),
            cfg,
            "max",
        )
        phases.append({"phase": name, "metric": "accuracy", "best_epoch": sched.best_epoch,
                       "best": sched.best, "history": _history_json(history)})

    if protocol == "fine_tuned_disc":
        phase("pretrain", encode_sets(data.mono_train_sets, vocab, cfg.pretrain_alt_types), "mono_sets")
    phase("finetune" if protocol == "fine_tuned_disc" else "train", cs_enc, "cs_sets")
    return RunResult(protocol, model, vocab, phases, audit)


def run_protocol(protocol: str, data: ProtocolData, cfg: TrainConfig, cs_fraction: float = 1.0) -> RunResult:
    if protocol in LM_PROTOCOLS:
        if cs_fraction < 1.0 and data.cs_train is not None:
            data = replace(data, cs_train=data.cs_train.subset(cs_fraction, cfg.seed))
        return run_lm_protocol(protocol, data, cfg)
    if protocol in DISC_PROTOCOLS:
        return run_disc_protocol(protocol, data, cfg, cs_fraction)
    raise ProtocolError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")


def finetune(
    model: Module,
    vocab: Vocabulary,
    cfg: TrainConfig,
    cs_corpus: Optional[TaggedCorpus] = None,
    cs_sets: Sequence[EvalSet] = (),
    dev_corpus: Optional[TaggedCorpus] = None,
    dev_sets: Sequence[EvalSet] = (),
) -> Tuple[Module, List[EpochRecord]]:
    """Continue training a pretrained model on code-switched data only.

    Generative models take ``cs_corpus``/``dev_corpus``; rankers take
    ``cs_sets``/``dev_sets``. The learning-rate schedule starts fresh.
    """
    if cfg.max_epochs == 0:
        return model, []
    if isinstance(model, LMModel):
        _require(cs_corpus is not None and dev_corpus is not None, "LM fine-tuning needs CS train and dev corpora")
        if len(vocab) != model.vocab_size:
            raise ProtocolError("vocabulary does not match the checkpoint")
        try:
            parts = {"cs": encode_corpus(cs_corpus, vocab)}
            dev = encode_corpus(dev_corpus, vocab)
        except KeyError as e:
            raise ProtocolError(f"vocabulary mismatch: {e}") from None
        history, _, _ = fit(
            model, lambda m, lr, ep: lm_epoch(m, "finetune", parts, cfg, lr, ep), lambda m: lm_perplexity(m, dev), cfg, "min"
        )
        return model, history
    if len(vocab) != model.vocab_size:
        raise ProtocolError("vocabulary does not match the checkpoint")
    train = encode_sets(cs_sets, vocab)
    dev = encode_sets(dev_sets, vocab)
    _require(train and dev, "ranker fine-tuning needs CS training sets and dev sets in the vocabulary")
    history, _, _ = fit(
        model, lambda m, lr, ep: disc_epoch(m, train, cfg, lr, ep), lambda m: dev_accuracy(m, dev), cfg, "max"
    )
    return model, history
