"""Acceptance suite: one pass/fail line per criterion, then the assertion.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
written straight to the terminal even when output capture is on.
"""

import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import (
    compose_relation,
    edit_distance,
    grad_check,
    nbest_oracle,
    random_fst,
    relation,
    spread,
    symbols,
)
from phonorank.altgen import GenerationConfig, Generator, assemble_dataset, build_pool, check_set, read_dataset
from phonorank.cli import main
from phonorank.corpus import TaggedCorpus
from phonorank.lexicon import L1, L2
from phonorank.metrics import PerplexityAccumulator, wer
from phonorank.neural import LMModel, RankerModel, hinge_rank_loss
from phonorank.synthetic import make_world
from phonorank.training import (
    ProtocolData,
    Schedule,
    TrainConfig,
    disc_loss,
    encode_corpus,
    encode_sets,
    extend_vocabulary,
    fit,
    lm_perplexity,
    run_protocol,
    score_sets,
)
from phonorank.wfst import compose, invert, nbest

pytestmark = pytest.mark.acceptance


@pytest.fixture
def announce(capsys):
    def say(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")

    return say


# -- 1: transducer operations against path enumeration ------------------------


def test_c01_fst_operations_match_enumeration(announce):
    t0 = time.perf_counter()
    mismatches = []
    pairs = 0
    for seed in range(200):
        rng = random.Random(10_000 + seed)
        mid = symbols(3)
        a = random_fst(rng, 6, osyms=mid, density=4.0, min_states=3)
        b = random_fst(rng, 6, isyms=mid, density=4.0, min_states=3)
        ra = relation(a, 6)
        if relation(compose(a, b), 12) != compose_relation(ra, relation(b, 6)):
            mismatches.append((seed, "compose"))
        if relation(invert(a), 6) != {(o, i): c for (i, o), c in ra.items()}:
            mismatches.append((seed, "invert"))
        if [(p.weight, p.output) for p in nbest(a, 10)] != nbest_oracle(a, 10, 6):
            mismatches.append((seed, "nbest"))
        pairs += len(ra)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 30
    announce(1, ok, f"200 random machine pairs ({pairs} input/output pairs enumerated), "
                    f"{len(mismatches)} mismatches, {elapsed:.2f}s (limit 30s)")
    assert ok, mismatches[:5]


# -- 2: WER against recursive edit distance -----------------------------------


def test_c02_wer_matches_recursive_oracle(announce):
    rng = random.Random(2)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(500):
        ref = [rng.choice("abcd") for _ in range(rng.randint(1, 6))]
        hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 6))]
        r = wer(ref, hyp)
        if r.edits != edit_distance(tuple(ref), tuple(hyp)) or r.wer != r.edits / len(ref):
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5
    announce(2, ok, f"500 pairs, {bad} mismatches, {elapsed:.2f}s (limit 5s)")
    assert ok


# -- 3: perplexity identities -------------------------------------------------


def direct_perplexity(probs):
    return 2.0 ** (-sum(math.log2(p) for p in probs) / len(probs))


def test_c03_perplexity_identities(announce):
    uniform_err = 0.0
    for v in (2, 10, 100):
        acc = PerplexityAccumulator()
        for _ in range(250):
            acc.add(1.0 / v)
        uniform_err = max(uniform_err, abs(acc.perplexity() - v))
    rng = random.Random(3)
    formula_err = 0.0
    for _ in range(50):
        probs = [rng.uniform(0.01, 1.0) for _ in range(rng.randint(1, 200))]
        acc = PerplexityAccumulator()
        for p in probs:
            acc.add(p)
        formula_err = max(formula_err, abs(acc.perplexity() - direct_perplexity(probs)))
    # the same identity on a real model's token probabilities
    lm = LMModel(20, 8, 12, seed=3)
    sents = [[rng.randrange(3, 20) for _ in range(rng.randint(1, 6))] for _ in range(10)]
    probs = []
    for s in sents:
        d = lm.distributions(s)
        probs += [d[t, w] for t, w in enumerate(s + [lm.eos])]
    formula_err = max(formula_err, abs(lm_perplexity(lm, sents) - direct_perplexity(probs)))
    ok = uniform_err < 1e-9 and formula_err < 1e-12
    announce(3, ok, f"uniform max err {uniform_err:.1e} (<1e-9), formula vs accumulator {formula_err:.1e} (<1e-12)")
    assert ok


# -- 4: gradient check ---------------------------------------------------------


def test_c04_gradient_check(announce):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    sents = [list(rng.integers(3, 20, size=n)) for n in (6, 3, 1, 5)]
    lm = LMModel(20, 8, 12, seed=4, dropout=0.35, word_dropout=0.2)
    spread(lm, 4)
    lm_err = grad_check(lm, lambda: lm.loss(sents, train=True, rng=np.random.default_rng(9))[0])
    groups = [(0, [1, 2], [0.5, 1.0]), (3, [1], [0.3])]
    worst_rank = 0.0
    for rep, seed in (("bilstm", 5), ("bow", 6)):
        r = RankerModel(20, 8, 12, representation=rep, seed=seed)
        spread(r, seed)
        s = r.scores(sents).value
        margins = [w - (s[g] - s[i]) for g, alts, ws in groups for i, w in zip(alts, ws)]
        assert min(abs(m) for m in margins) > 1e-3, "sample point too close to a hinge kink"
        worst_rank = max(worst_rank, grad_check(r, lambda: hinge_rank_loss(r.scores(sents), groups)))
    elapsed = time.perf_counter() - t0
    ok = lm_err < 1e-4 and worst_rank < 1e-4 and elapsed < 60
    announce(4, ok, f"LM rel err {lm_err:.1e}, hinge rel err {worst_rank:.1e} (<1e-4), {elapsed:.1f}s (limit 60s)")
    assert ok


# -- 5: hinge-loss examples ----------------------------------------------------


def test_c05_hinge_examples(announce):
    got = (
        disc_loss(1.0, [(0.0, 0.5), (0.2, 0.7)]),
        disc_loss(0.2, [(0.0, 0.5)]),
        disc_loss(0.0, [(0.1, 0.2), (-0.4, 0.5), (-1.0, 0.6)]),
    )
    ok = got == (0.0, 0.3, 0.4)
    announce(5, ok, f"losses {got} (expected exactly (0.0, 0.3, 0.4))")
    assert ok


# -- 6: dataset contract -------------------------------------------------------


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_c06_dataset_contract(tmp_path, announce):
    w, c = tmp_path / "world", tmp_path / "corpus"
    assert run_cli("toy-world", "--out", w, "--words-per-language", 50, "--cs-lines", 400, "--mono-lines", 60, "-q") == 0
    assert run_cli("prep-corpus", "--tagged", w / "cs_tagged.txt", "--out", c, "-q") == 0
    outs = {}
    for workers in (1, 4):
        out = tmp_path / f"data{workers}"
        rc = run_cli("gen-dataset", "--corpus", c, "--out", out, "--no-train-sets", "--workers", workers,
                     "--l1-dict", w / "l1.dict", "--l2-dict", w / "l2.dict",
                     "--l1-unigrams", w / "l1.unigrams", "--l2-unigrams", w / "l2.unigrams",
                     "--similar", w / "similar.txt", "--sets", 40, "--cs-ratio", "1:3", "--seed", 6, "-q")
        assert rc == 0
        outs[workers] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    identical = outs[1] == outs[4]
    problems, ratios = [], []
    cfg = GenerationConfig()
    for part in ("dev", "test"):
        with open(tmp_path / "data1" / f"{part}.jsonl", encoding="utf-8") as fp:
            sets = read_dataset(fp)
        for s in sets:
            problems += [f"{s.id}: {p}" for p in check_set(s, cfg)]
        ratios.append((sum(s.gold.is_cs for s in sets), len(sets)))
    ratio_ok = all(n == 40 and k == 10 for k, n in ratios)
    ok = identical and not problems and ratio_ok
    announce(6, ok, f"{len(problems)} invariant violations, CS gold per file {ratios} (want 10/40), "
                    f"1 vs 4 workers byte-identical: {identical}")
    assert ok, problems[:5]


# -- 7, 8: learning on the synthetic task --------------------------------------

SMALL = dict(emb_dim=16, hidden=16, layers=1)


@pytest.fixture(scope="module")
def synthetic():
    """2,000 CS training golds, abundant monolingual golds, a 1:3 dev mix."""
    world = make_world(0)
    gen = Generator(world.lexicon, world.similar, GenerationConfig(nbest=200))
    t0 = time.perf_counter()
    cs = world.corpus(2400, "cs", 1)
    train, _ = build_pool([(f"tr{k:05d}", g) for k, g in enumerate(cs[:2000])], gen, 0)
    dev_golds = [(f"dv{k:05d}", g) for k, g in enumerate(cs[2000:2100])]
    dev_golds += [(f"dm{k:05d}", g) for k, g in enumerate(world.corpus(150, L1, 12) + world.corpus(150, L2, 13))]
    pool, _ = build_pool(dev_golds, gen, 0)
    dev = assemble_dataset(pool, 50, 150, random.Random("dev"))
    cs_seconds = time.perf_counter() - t0
    mono_golds = world.corpus(1000, L1, 2) + world.corpus(1000, L2, 3)
    mono, _ = build_pool([(f"mo{k:05d}", g) for k, g in enumerate(mono_golds)], gen, 0)
    data = ProtocolData(cs_train_sets=train, mono_train_sets=mono, dev_sets=dev, test_sets=dev)
    return data, cs_seconds


def test_c07_ranker_learns(synthetic, announce):
    data, gen_seconds = synthetic
    t0 = time.perf_counter()
    r = run_protocol("cs_only_disc", data, TrainConfig.for_disc(max_epochs=20, **SMALL))
    train_seconds = time.perf_counter() - t0
    # chance of ranking the gold first, averaged over sets of varying size
    baseline = float(np.mean([100.0 / (1 + s.num_alternatives()) for s in data.dev_sets]))
    best = r.phases[-1]["best"]
    total = gen_seconds + train_seconds
    ok = best >= 3 * baseline and total < 600
    announce(7, ok, f"{len(data.cs_train_sets)} train sets, dev accuracy {best:.1f}% vs 3x baseline {3 * baseline:.1f}%, "
                    f"{total:.0f}s (limit 600s)")
    assert ok


def test_c08_fine_tuning_helps_with_scarce_cs_data(synthetic, announce):
    data, _ = synthetic
    results = []
    for seed in (0, 1, 2):
        accs = {}
        for protocol in ("cs_only_disc", "fine_tuned_disc"):
            r = run_protocol(protocol, data, TrainConfig.for_disc(max_epochs=10, seed=seed, **SMALL), cs_fraction=0.25)
            accs[protocol] = r.phases[-1]["best"]
        results.append((seed, accs["fine_tuned_disc"], accs["cs_only_disc"]))
    wins = sum(ft >= cs for _, ft, cs in results)
    ok = wins >= 2
    detail = ", ".join(f"seed {s}: {ft:.1f} vs {cs:.1f}" for s, ft, cs in results)
    announce(8, ok, f"fine-tuned vs CS-only dev accuracy at 25% CS data: {detail}; {wins}/3 wins (need 2)")
    assert ok


# -- 9: vocabulary extension on a frozen model ---------------------------------


def test_c09_vocabulary_extension(announce):
    world = make_world(0, words_per_language=120)
    gen = Generator(world.lexicon, world.similar, GenerationConfig(nbest=200))
    cs = world.corpus(200, "cs", 1)
    sets, _ = build_pool([(f"t{k}", g) for k, g in enumerate(cs[150:])], gen, 0)
    data = ProtocolData(
        cs_train=TaggedCorpus(cs[:100]), cs_dev=TaggedCorpus(cs[100:125]), cs_test=TaggedCorpus(cs[125:150]),
        mono_l1_train=TaggedCorpus(world.corpus(500, L1, 2)), mono_l2_train=TaggedCorpus(world.corpus(500, L2, 3)),
        dev_sets=sets[:20], test_sets=sets[20:],
    )
    cfg = TrainConfig.for_lm(lr=1.0, max_epochs=3, **SMALL)
    base = run_protocol("cs_only_lm", data, cfg)
    # a zero-epoch run yields the protocol's vocabulary and nothing else
    wide_vocab = run_protocol("cs_only_vocab_lm", data, replace(cfg, max_epochs=0)).vocab
    wide = extend_vocabulary(base.model, base.vocab, wide_vocab)
    added = len(wide_vocab) - len(base.vocab)
    p_base = lm_perplexity(base.model, encode_corpus(data.cs_test, base.vocab))
    p_wide = lm_perplexity(wide, encode_corpus(data.cs_test, wide_vocab))
    s_base = score_sets(base.model, encode_sets(data.test_sets, base.vocab))
    s_wide = score_sets(wide, encode_sets(data.test_sets, wide_vocab))
    flips = sum(int(np.argmax(a)) != int(np.argmax(b)) for a, b in zip(s_base, s_wide))
    ok = added > 0 and p_wide != p_base and flips == 0
    announce(9, ok, f"{added} untrained words added, perplexity {p_base:.3f} -> {p_wide:.3f}, "
                    f"{flips}/{len(s_base)} argmax decisions changed")
    assert ok


# -- 10: best-checkpoint policy and decay ----------------------------------------


class Probe(RankerModel):
    """A tiny model whose weights record the epoch they were written in."""

    def __init__(self):
        super().__init__(4, 2, 2, seed=0)


def replay(metrics, mode):
    m = Probe()
    lrs = []

    def epoch(model, lr, ep):
        lrs.append(lr)
        model.params["w"].value[:] = ep
        return 0.0

    it = iter(metrics)
    history, sched, _ = fit(m, epoch, lambda model: next(it), TrainConfig(lr=10.0, max_epochs=len(metrics)), mode)
    return int(m.params["w"].value[0]), lrs, sched


def test_c10_best_checkpoint_and_decay(announce):
    rng = random.Random(10)
    failures = []
    for trial in range(200):
        mode = rng.choice(["min", "max"])
        metrics = [float(rng.randint(0, 6)) for _ in range(rng.randint(1, 12))]
        kept, lrs, sched = replay(metrics, mode)
        pick = min if mode == "min" else max
        best = pick(metrics)
        if kept != metrics.index(best) + 1 or sched.best_epoch != kept:
            failures.append((trial, "kept epoch"))
        running = None
        lr = 10.0
        for k, v in enumerate(metrics):
            if lrs[k] != lr:
                failures.append((trial, "lr"))
                break
            improved = running is None or (v < running if mode == "min" else v > running)
            if improved:
                running = v
            else:
                lr = lr / 2.5
    s = Schedule(1.0, 2.5, "min")
    s.step(1, 1.0)
    s.step(2, 1.0)
    ratio = 1.0 / s.lr
    ok = not failures and ratio == 2.5
    announce(10, ok, f"200 injected metric sequences, {len(failures)} failures; decay ratio on a tie {ratio}")
    assert ok, failures[:5]
