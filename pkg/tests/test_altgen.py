import io
import itertools
import math
import random
from collections import Counter

import pytest

from phonorank.altgen import (
    ALT_TYPES,
    CS,
    Alternative,
    EvalSet,
    GenerationConfig,
    Generator,
    GoldSentence,
    InsufficientPool,
    OOVError,
    Rejection,
    TaggedToken,
    assemble_dataset,
    build_pool,
    build_set,
    check_set,
    dataset_stats,
    full_span,
    heuristic_score,
    minority_language,
    phonemize,
    read_dataset,
    sample_span,
    sentence_rng,
    span_bounds,
    surfaces,
    write_dataset,
)
from phonorank.lexicon import L1, L2, PUNCT, Lexicon, SimilarPhonemes
from phonorank.synthetic import make_world


def gold(text):
    """``word/l1 word/l2 ./punct`` shorthand."""
    return GoldSentence(tuple(TaggedToken(*t.rsplit("/", 1)) for t in text.split()))


@pytest.fixture(scope="module")
def world():
    return make_world(0)


@pytest.fixture(scope="module")
def gen(world):
    return Generator(world.lexicon, world.similar, GenerationConfig())


def test_gold_kind():
    assert gold("no/l2 pero/l2 he/l1 came/l1").is_cs
    assert gold("he/l1 came/l1 ./punct").kind == "mono-l1"
    assert gold("hola/l2 ./punct").num_words == 1


def test_phonemize_uses_tagged_language_and_first_pron():
    lex = Lexicon()
    lex.add("cat", L1, ("K", "AE", "T"))
    lex.add("cat", L1, ("K", "AA", "T"))
    lex.add("no", L1, ("N", "OW"))
    lex.add("no", L2, ("N", "O"))
    assert phonemize(gold("cat/l1").tokens, lex) == ["K", "AE", "T"]
    assert phonemize(gold("no/l2 cat/l1 ./punct").tokens, lex) == ["N", "O", "K", "AE", "T"]
    with pytest.raises(OOVError, match="perro"):
        phonemize(gold("perro/l2").tokens, lex)


def test_span_bounds_examples():
    assert span_bounds(10) == (3, 7)
    assert span_bounds(3) == (1, 2)


def test_span_distribution_monte_carlo():
    g = gold(" ".join(f"w{k}/l1" for k in range(10)))
    rng = random.Random(0)
    lengths = Counter()
    starts = Counter()
    for _ in range(10_000):
        a, b = sample_span(g, rng)
        lengths[b - a] += 1
        starts[a] += 1
    assert set(lengths) == {3, 4, 5, 6, 7}
    # uniform over 5 lengths: each near 2000, 5 sigma is about 200
    assert all(abs(c - 2000) < 200 for c in lengths.values())
    assert set(starts) == set(range(8))


def test_span_skips_punctuation_and_is_deterministic():
    g = gold("a/l1 ,/punct b/l1 c/l1 d/l1 ./punct")
    for seed in range(50):
        a, b = sample_span(g, random.Random(seed))
        assert g.tokens[a].is_word and g.tokens[b - 1].is_word
        assert sample_span(g, random.Random(seed)) == (a, b)
    assert full_span(g) == (0, 5)


def test_minority_language_tie_goes_to_l2():
    assert minority_language(gold("a/l1 b/l2 c/l2")) == L1
    assert minority_language(gold("a/l1 b/l2")) == L2


def test_heuristic_hand_evaluation():
    cfg = GenerationConfig()
    g = gold("a/l1 bb/l1 cc/l2")  # minority is l2
    cand = Alternative(gold("xx/l2 yyyy/l1 z/l2").tokens, CS, 5.0)
    want = -1.0 * 5.0 + 2.0 * (2 / 3) + 0.5 * (7 / 3)
    assert heuristic_score(cand, g, cfg) == pytest.approx(want, abs=1e-12)
    mono = Alternative(cand.tokens, L1, 5.0)
    assert heuristic_score(mono, g, cfg) == pytest.approx(-5.0 + 0.5 * 7 / 3, abs=1e-12)


def test_heuristic_monotone_in_minority():
    cfg = GenerationConfig()
    g = gold("a/l1 b/l1 c/l2")
    more = Alternative(gold("xx/l2 yy/l2").tokens, CS, 1.0)
    less = Alternative(gold("xx/l2 yy/l1").tokens, CS, 1.0)
    assert heuristic_score(more, g, cfg) > heuristic_score(less, g, cfg)


def test_zero_weights_rank_by_cost(world):
    cfg = GenerationConfig(w_minority=0.0, w_length=0.0)
    g = Generator(world.lexicon, world.similar, cfg)
    sent = world.corpus(1, "cs", 9)[0]
    alts = g.generate(sent, CS, random.Random(0))
    costs = [a.gen_cost for a in alts]
    assert costs == sorted(costs)


def brute_force_decodings(lex, sim, phones, langs, scale):
    """Every word sequence reachable from ``phones`` by edits, with cheapest cost."""
    subs = {}
    for a, b in sim.substitutions():
        subs.setdefault(a, []).append(b)
    edited = {}
    options = [[(p, 0.0)] + [(q, sim.sub_cost) for q in subs.get(p, [])] + [(None, sim.del_cost)] for p in phones]
    for combo in itertools.product(*options):
        seq = tuple(p for p, _ in combo if p is not None)
        cost = sum(c for _, c in combo)
        edited[seq] = min(cost, edited.get(seq, math.inf))
    vocab = [
        (w, l, pron, scale * -math.log(lex.unigram(w, l)))
        for (w, l), e in lex.entries.items()
        if l in langs and not lex.is_filtered(w)
        for pron in e.pronunciations
    ]
    out = {}

    def segment(seq, pos, words, cost):
        if pos == len(seq):
            key = tuple(words)
            out[key] = min(cost, out.get(key, math.inf))
            return
        for w, l, pron, c in vocab:
            if seq[pos : pos + len(pron)] == pron:
                segment(seq, pos + len(pron), words + [w], cost + c)

    for seq, c in edited.items():
        segment(seq, 0, [], c)
    return out


def test_decode_matches_exhaustive_oracle():
    lex = Lexicon()
    prons = {"ba": ("B", "AA"), "pa": ("P", "AA"), "bi": ("B", "IY"), "ta": ("T", "AA"), "da": ("D", "AA"), "ti": ("T", "IY")}
    for k, (w, p) in enumerate(prons.items()):
        lex.add(w, L1 if k < 3 else L2, p)
    lex.unigrams = {L1: {"ba": 0.5, "pa": 0.3, "bi": 0.2}, L2: {"ta": 0.6, "da": 0.3, "ti": 0.1}}
    sim = SimilarPhonemes((("B", "P"), ("T", "D"), ("AA", "IY")), 3.0, 4.0)
    cfg = GenerationConfig(nbest=100_000)
    g = Generator(lex, sim, cfg)
    phones = ["B", "AA", "T", "IY"]
    for alt_type, langs in ((CS, (L1, L2)), (L1, (L1,)), (L2, (L2,))):
        got = {surfaces(toks): c for toks, c in g.decode(phones, alt_type)}
        want = brute_force_decodings(lex, sim, phones, langs, cfg.unigram_scale)
        assert set(got) == set(want), alt_type
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-9)


def test_generate_respects_language_restriction(world, gen):
    rng = random.Random(1)
    for sent in world.corpus(5, "cs", 7):
        for t in (L1, L2):
            for alt in gen.generate(sent, t, rng):
                assert all(x.language in (t, PUNCT) for x in alt.tokens)


def test_cs_alternatives_keep_unsampled_part(world, gen):
    for k, sent in enumerate(world.corpus(5, "cs", 8)):
        # generate draws the span first, so the same rng state reproduces it
        a, b = sample_span(sent, sentence_rng(0, str(k)))
        alts = gen.generate(sent, CS, sentence_rng(0, str(k)))
        assert alts
        tail = sent.tokens[b:]
        for alt in alts:
            assert alt.tokens[:a] == sent.tokens[:a]
            assert alt.tokens[len(alt.tokens) - len(tail) :] == tail
            assert surfaces(alt.tokens) != surfaces(sent.tokens)


def test_worked_code_switched_alternative():
    lex = Lexicon()
    for w, p in {"ten": "T EH N", "key": "K IY", "main": "M EY N", "den": "D EH N"}.items():
        lex.add(w, L1, p.split())
    for w, p in {"la": "L AA", "casa": "K AA S AA", "es": "EH S", "qui": "K IY", "tenqui": "T EH N K EY"}.items():
        lex.add(w, L2, p.split())
    sim = SimilarPhonemes((("T", "D"), ("IY", "EY"), ("S", "Z")), 3.0, 4.0)
    g = Generator(lex, sim, GenerationConfig())
    sent = gold("la/l2 casa/l2 es/l2 ten/l1 key/l1")
    decoded = [surfaces(t) for t, _ in g.decode(phonemize(sent.tokens[3:], lex), CS)]
    # one substitution turns the L1 span into a mixed-language reading
    assert ("den", "qui") in decoded and ("tenqui",) in decoded
    assert ("ten", "key") in decoded


def test_build_set_rejects_short_gold(gen):
    r = build_set("x", gold("ab/l1 ./punct cd/l1"), gen, random.Random(0))
    assert isinstance(r, Rejection) and r.reason == "too-short"


def test_build_set_rejects_few_alternatives(world, monkeypatch):
    g = Generator(world.lexicon, world.similar, GenerationConfig())
    real = g.generate

    def fewer(sent, alt_type, rng):
        alts = real(sent, alt_type, rng)
        return alts[:4] if alt_type == L2 else alts

    monkeypatch.setattr(g, "generate", fewer)
    sent = world.corpus(1, "cs", 3)[0]
    r = build_set("x", sent, g, random.Random(0))
    assert isinstance(r, Rejection) and r.reason == "few-l2"


def test_build_set_rejects_oov(gen):
    r = build_set("x", gold("zzz/l1 qqq/l1 www/l1"), gen, random.Random(0))
    assert isinstance(r, Rejection) and r.reason == "oov"


def test_generated_sets_satisfy_invariants(world, gen):
    golds = [(f"s{k}", g) for k, g in enumerate(world.corpus(8, "cs", 4) + world.corpus(4, L1, 4))]
    sets, rejected = build_pool(golds, gen, seed=3)
    assert sets
    for s in sets:
        assert check_set(s, gen.cfg) == []
        for t in ALT_TYPES:
            assert 5 <= len(s.alternatives[t]) <= 10


def test_build_pool_independent_of_workers(world, gen):
    golds = [(f"s{k}", g) for k, g in enumerate(world.corpus(6, "cs", 5))]
    one, _ = build_pool(golds, gen, seed=7, workers=1)
    two, _ = build_pool(golds, gen, seed=7, workers=2)
    assert [json_of(x) for x in one] == [json_of(x) for x in two]


def json_of(s):
    buf = io.StringIO()
    write_dataset([s], buf)
    return buf.getvalue()


def fake_pool(n_cs, n_mono):
    alt = Alternative(gold("x/l1 y/l1 z/l1").tokens, L1, 0.0)
    pool = []
    for k in range(n_cs):
        pool.append(EvalSet(f"c{k:04d}", gold("a/l1 b/l2 c/l1"), {t: [alt] * 5 for t in ALT_TYPES}))
    for k in range(n_mono):
        pool.append(EvalSet(f"m{k:04d}", gold("a/l1 b/l1 c/l1"), {t: [alt] * 5 for t in ALT_TYPES}))
    return pool


def test_assemble_ratio_and_determinism():
    pool = fake_pool(100, 300)
    got = assemble_dataset(pool, 100, 300, random.Random(0))
    assert sum(s.gold.is_cs for s in got) == 100 and len(got) == 400
    a = assemble_dataset(fake_pool(50, 80), 10, 30, random.Random(5))
    b = assemble_dataset(fake_pool(50, 80), 10, 30, random.Random(5))
    assert [s.id for s in a] == [s.id for s in b]
    assert dataset_stats(a)["cs_gold_fraction"] == 0.25


def test_assemble_insufficient_pool_reports_counts():
    with pytest.raises(InsufficientPool) as e:
        assemble_dataset(fake_pool(3, 10), 5, 5, random.Random(0))
    assert "3" in str(e.value) and "10" in str(e.value)


def test_dataset_round_trip(world, gen):
    golds = [(f"s{k}", g) for k, g in enumerate(world.corpus(3, "cs", 6))]
    sets, _ = build_pool(golds, gen, seed=1)
    buf = io.StringIO()
    write_dataset(sets, buf)
    again = read_dataset(io.StringIO(buf.getvalue()))
    buf2 = io.StringIO()
    write_dataset(again, buf2)
    assert buf.getvalue() == buf2.getvalue()
    with pytest.raises(ValueError, match="line 1"):
        read_dataset(io.StringIO("{}\n"))
