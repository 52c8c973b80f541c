"""Command-line entry point: ``phonorank <command> [options]``.

Every option can also come from an INI file given with ``--config``; keys
live in a section named after the command (or ``[DEFAULT]``) and use the
long option name. Flags on the command line win over the file.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import random
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .altgen import (
    EvalSet,
    GenerationConfig,
    Generator,
    InsufficientPool,
    assemble_dataset,
    build_pool,
    dataset_stats,
    read_dataset,
    write_dataset,
)
from .corpus import (
    CorpusError,
    TaggedCorpus,
    Vocabulary,
    corpus_hash,
    load_monolingual,
    load_tagged,
    split,
    write_tagged,
)
from .lexicon import (
    L1,
    L2,
    LexiconError,
    Lexicon,
    apply_phoneme_map,
    default_similar_phonemes,
    default_stoplist,
    dump_pron_dict,
    load_phoneme_map,
    load_pron_dict,
    load_similar_phonemes,
    load_unigrams,
)
from .neural import CheckpointError, LMModel, NumericError, load_checkpoint, save_checkpoint
from .training import (
    LM_PROTOCOLS,
    PROTOCOLS,
    ProtocolData,
    ProtocolError,
    TrainConfig,
    encode_corpus,
    encode_sets,
    evaluate_sets,
    lm_perplexity,
    run_protocol,
)

log = logging.getLogger("phonorank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- small helpers ------------------------------------------------------------


def _open_text(path, what: str):
    try:
        return open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"missing {what}: {path}") from None


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for block in iter(lambda: fp.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()[:16]


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True, ensure_ascii=False)
        fp.write("\n")


def _read_sets(path, required: bool = True) -> List[EvalSet]:
    if not os.path.exists(path):
        if required:
            raise DataError(f"missing dataset: {path}")
        return []
    with open(path, encoding="utf-8") as fp:
        try:
            return read_dataset(fp)
        except ValueError as e:
            raise DataError(f"{path}: {e}") from None


def _parse_ratio(text: str) -> float:
    """``0.25`` or ``cs:mono`` such as ``1:3``; returns the CS-gold fraction."""
    if ":" in text:
        a, b = (float(x) for x in text.split(":", 1))
        if a < 0 or b < 0 or a + b == 0:
            raise argparse.ArgumentTypeError(f"bad ratio {text!r}")
        return a / (a + b)
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"fraction must be in [0, 1], got {text!r}")
    return v


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PHONORANK_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PHONORANK_SEED must be an integer, got {env!r}") from None


def _run_config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config", "quiet", "verbose"):
            continue
        out[k] = v
    out["seed"] = _seed(args)
    return out


# -- toy resources ------------------------------------------------------------


def cmd_toy_world(args) -> int:
    from .synthetic import SIMILAR, make_world, plain_line, tagged_line

    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = make_world(seed, args.words_per_language)
    for lang in (L1, L2):
        (out / f"{lang}.dict").write_text(dump_pron_dict(world.lexicon, lang), encoding="utf-8")
        table = world.lexicon.unigrams[lang]
        (out / f"{lang}.unigrams").write_text(
            "".join(f"{w}\t{table[w]!r}\n" for w in sorted(table)), encoding="utf-8"
        )
    (out / "similar.txt").write_text("".join(f"{a}\t{b}\n" for a, b in SIMILAR), encoding="utf-8")
    n_cs = int(round(args.cs_lines * args.cs_share))
    golds = world.corpus(n_cs, "cs", 1) + world.corpus((args.cs_lines - n_cs) // 2, L1, 2)
    golds += world.corpus(args.cs_lines - len(golds), L2, 3)
    random.Random(f"toy-mix:{seed}").shuffle(golds)
    with open(out / "cs_tagged.txt", "w", encoding="utf-8") as fp:
        fp.writelines(tagged_line(g) + "\n" for g in golds)
    for lang, k in ((L1, 4), (L2, 5)):
        with open(out / f"mono_{lang}.txt", "w", encoding="utf-8") as fp:
            fp.writelines(plain_line(g) + "\n" for g in world.corpus(args.mono_lines, lang, k))
    log.info("toy resources written to %s", out)
    return EXIT_OK


# -- prep-corpus --------------------------------------------------------------


def cmd_prep_corpus(args) -> int:
    seed = _seed(args)
    ratios = tuple(args.ratios)
    if len(ratios) != 3:
        raise UsageError("--ratios needs three values")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": seed, "ratios": list(ratios), "sources": {}, "splits": {}}
    with _open_text(args.tagged, "tagged corpus") as fp:
        cs = load_tagged(fp, "cs")
    if not len(cs):
        raise DataError(f"{args.tagged}: no sentences")
    todo = [("cs", args.tagged, cs)]
    for lang, path in ((L1, args.mono_l1), (L2, args.mono_l2)):
        if path:
            with _open_text(path, f"{lang} monolingual text") as fp:
                todo.append((f"mono_{lang}", path, load_monolingual(fp, lang, f"mono_{lang}")))
    for name, path, corpus in todo:
        parts = split(corpus, ratios, seed)
        manifest["sources"][name] = {"path": str(path), "hash": file_hash(path), "sentences": len(corpus)}
        manifest["splits"][name] = {}
        for part in parts:
            with open(out / f"{name}.{part.split}.txt", "w", encoding="utf-8") as fp:
                write_tagged(part, fp)
            manifest["splits"][name][part.split] = {"lines": part.indices, "hash": corpus_hash(part)}
            log.info("%s %s: %d sentences", name, part.split, len(part))
    _write_json(out / "splits.json", manifest)
    return EXIT_OK


# -- gen-dataset --------------------------------------------------------------


def load_resources(args) -> Lexicon:
    lex = Lexicon()
    for lang, dict_path, uni_path in ((L1, args.l1_dict, args.l1_unigrams), (L2, args.l2_dict, args.l2_unigrams)):
        if not dict_path:
            raise UsageError(f"--{lang}-dict is required")
        with _open_text(dict_path, f"{lang} pronunciation dictionary") as fp:
            part = load_pron_dict(fp, lang)
        if lang == L2 and args.l2_phone_map:
            with _open_text(args.l2_phone_map, "phoneme map") as fp:
                part = apply_phoneme_map(part, load_phoneme_map(fp))
        if uni_path:
            with _open_text(uni_path, f"{lang} unigram table") as fp:
                part.unigrams[lang] = load_unigrams(fp)
        lex = lex.merge(part)
    lex.stoplist = default_stoplist(w for w, _ in lex.entries)
    return lex


def generation_config(args) -> GenerationConfig:
    names = {f.name for f in fields(GenerationConfig)}
    return GenerationConfig(**{k: getattr(args, k) for k in names if getattr(args, k, None) is not None})


def _read_split(corpus_dir: Path, name: str, part: str, required: bool = True) -> Optional[TaggedCorpus]:
    path = corpus_dir / f"{name}.{part}.txt"
    if not path.exists():
        if required:
            raise DataError(f"missing corpus split: {path}")
        return None
    with open(path, encoding="utf-8") as fp:
        return load_tagged(fp, f"{name}.{part}")


def cmd_gen_dataset(args) -> int:
    seed = _seed(args)
    corpus_dir = Path(args.corpus)
    out = Path(args.out)
    lex = load_resources(args)
    cfg = generation_config(args)
    if args.similar:
        with _open_text(args.similar, "similar-phoneme list") as fp:
            sim = load_similar_phonemes(fp, cfg.sub_cost, cfg.del_cost)
    else:
        sim = default_similar_phonemes(cfg.sub_cost, cfg.del_cost)
    gen = Generator(lex, sim, cfg)
    out.mkdir(parents=True, exist_ok=True)
    n_cs, n_mono = _counts(args.sets, args.cs_ratio)
    stats: Dict[str, dict] = {"config": asdict(cfg), "seed": seed}

    def progress(name):
        step = max(1, args.progress_every)

        def report(k, total):
            if k % step == 0 or k == total:
                log.info("%s: %d/%d golds", name, k, total)

        return report

    def pool_for(name, corpus):
        golds = [(f"{name}:{i:06d}", g) for i, g in enumerate(corpus)]
        sets, rejected = build_pool(golds, gen, seed, args.workers, progress(name))
        reasons: Dict[str, int] = {}
        for r in rejected:
            reasons[r.reason] = reasons.get(r.reason, 0) + 1
        return sets, {"golds": len(golds), "accepted": len(sets), "rejected": reasons}

    for part in ("dev", "test"):
        corpus = _read_split(corpus_dir, "cs", part)
        pool, pstats = pool_for(part, corpus)
        try:
            chosen = assemble_dataset(pool, n_cs, n_mono, random.Random(f"assemble:{seed}:{part}"))
        except InsufficientPool as e:
            raise DataError(f"{part}: {e}") from None
        _write_sets(out / f"{part}.jsonl", chosen)
        stats[part] = {**dataset_stats(chosen), "pool": pstats}
    if args.train_sets:
        corpus = _read_split(corpus_dir, "cs", "train")
        sets, pstats = pool_for("train", corpus)
        _write_sets(out / "train_cs.jsonl", sets)
        stats["train_cs"] = {**dataset_stats(sets), "pool": pstats}
        mono = []
        for lang in (L1, L2):
            c = _read_split(corpus_dir, f"mono_{lang}", "train", required=False)
            if c is None:
                continue
            k = int(round(len(c) * args.mono_train_fraction))
            picked = sorted(random.Random(f"mono-train:{seed}:{lang}").sample(range(len(c)), k))
            mono += [(f"mono_{lang}:{i:06d}", c.sentences[i]) for i in picked]
        if mono:
            sets, rejected = build_pool(mono, gen, seed, args.workers, progress("mono"))
            _write_sets(out / "train_mono.jsonl", sets)
            stats["train_mono"] = {**dataset_stats(sets), "pool": {"golds": len(mono), "accepted": len(sets)}}
    _write_json(out / "stats.json", stats)
    for part in ("dev", "test"):
        s = stats[part]
        print(f"{part}: {s['sets']} sets, {s['sentences']} sentences, {s['cs_gold']} CS gold")
    return EXIT_OK


def _counts(n_sets: int, cs_fraction: float):
    n_cs = int(round(n_sets * cs_fraction))
    return n_cs, n_sets - n_cs


def _write_sets(path, sets) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        write_dataset(sets, fp)


# -- train --------------------------------------------------------------------


def train_config(args) -> TrainConfig:
    kind = TrainConfig.for_lm if args.protocol in LM_PROTOCOLS else TrainConfig.for_disc
    kw = {}
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            kw[f.name] = tuple(v) if f.name == "pretrain_alt_types" else v
    kw["seed"] = _seed(args)
    return kind(**kw)


def _protocol_data(args) -> ProtocolData:
    data = ProtocolData()
    if args.corpus:
        d = Path(args.corpus)
        data.cs_train = _read_split(d, "cs", "train", required=False)
        data.cs_dev = _read_split(d, "cs", "dev", required=False)
        data.cs_test = _read_split(d, "cs", "test", required=False)
        data.mono_l1_train = _read_split(d, f"mono_{L1}", "train", required=False)
        data.mono_l2_train = _read_split(d, f"mono_{L2}", "train", required=False)
        devs = [c for c in (_read_split(d, f"mono_{L1}", "dev", False), _read_split(d, f"mono_{L2}", "dev", False)) if c]
        if devs:
            data.mono_dev = TaggedCorpus([s for c in devs for s in c], "mono.dev", "dev")
    if args.datasets:
        d = Path(args.datasets)
        data.dev_sets = _read_sets(d / "dev.jsonl", required=False)
        data.test_sets = _read_sets(d / "test.jsonl", required=False)
        data.cs_train_sets = _read_sets(d / "train_cs.jsonl", required=False)
        data.mono_train_sets = _read_sets(d / "train_mono.jsonl", required=False)
    return data


def _input_hashes(args) -> Dict[str, str]:
    out = {}
    for root in (args.corpus, args.datasets):
        if root and os.path.isdir(root):
            for p in sorted(Path(root).iterdir()):
                if p.suffix in (".txt", ".jsonl"):
                    out[str(p)] = file_hash(p)
    return out


def cmd_train(args) -> int:
    if args.protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {args.protocol!r}; choose from {', '.join(PROTOCOLS)}")
    cfg = train_config(args)
    data = _protocol_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_protocol(args.protocol, data, cfg, args.cs_fraction)
    model, vocab = result.model, result.vocab
    meta = {"vocab": vocab.to_json(), "protocol": args.protocol}
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, model, meta)
    final = {"dev": {}, "test": {}}
    is_lm = isinstance(model, LMModel)
    dev_sets = encode_sets(data.dev_sets, vocab)
    test_sets = encode_sets(data.test_sets, vocab)
    checkpoints = {"model": str(ckpt)}
    if is_lm:
        final["dev"]["perplexity"] = lm_perplexity(model, encode_corpus(data.cs_dev, vocab))
        if data.cs_test is not None:
            final["test"]["perplexity"] = lm_perplexity(model, encode_corpus(data.cs_test, vocab))
        best_acc = result.best_by_metric.get("accuracy")
        if best_acc is not None:
            # each measure is reported from its own best epoch
            acc_model = LMModel(**model.config())
            acc_model.trainable_rows = dict(model.trainable_rows)
            acc_model.load_state(best_acc["state"])
            acc_path = out / "model.acc.ckpt"
            save_checkpoint(acc_path, acc_model, {**meta, "selected_by": "accuracy", "epoch": best_acc["epoch"]})
            checkpoints["accuracy"] = str(acc_path)
            ranker = acc_model
        else:
            ranker = model
    else:
        ranker = model
    for part, sets in (("dev", dev_sets), ("test", test_sets)):
        if sets:
            rep = evaluate_sets(ranker, sets, final[part].get("perplexity"))
            final[part] = rep.to_json()
    manifest = {
        "command": "train",
        "version": __version__,
        "protocol": args.protocol,
        "kind": "lm" if is_lm else "disc",
        "seed": cfg.seed,
        "cs_fraction": args.cs_fraction,
        "config": _run_config(args),
        "train_config": asdict(cfg),
        "inputs": _input_hashes(args),
        "vocab": {"size": len(vocab), "fingerprint": vocab.fingerprint(), "trainable": int(vocab.trainable.sum())},
        "audit": dict(sorted(result.audit.items())),
        "phases": result.phases,
        "final": final,
        "checkpoints": checkpoints,
    }
    _write_json(out / "manifest.json", manifest)
    print(_summary_line(args.protocol, final))
    return EXIT_OK


def _summary_line(protocol: str, final: dict) -> str:
    parts = [protocol]
    for split_name in ("dev", "test"):
        for k in ("perplexity", "accuracy", "wer"):
            if k in final.get(split_name, {}):
                parts.append(f"{split_name}_{k}={final[split_name][k]:.2f}")
    return " ".join(parts)


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"missing checkpoint: {args.checkpoint}") from None
    if "vocab" not in meta:
        raise DataError(f"{args.checkpoint}: checkpoint carries no vocabulary")
    vocab = Vocabulary.from_json(meta["vocab"])
    if len(vocab) != model.vocab_size:
        raise DataError(f"{args.checkpoint}: vocabulary size does not match the model")
    sets = _read_sets(args.dataset)
    enc = encode_sets(sets, vocab)
    if len(enc) < len(sets):
        raise DataError(f"{len(sets) - len(enc)} sets contain tokens unknown to the checkpoint")
    ppl = None
    if isinstance(model, LMModel) and args.corpus:
        with _open_text(args.corpus, "perplexity corpus") as fp:
            corpus = load_tagged(fp)
        try:
            ppl = lm_perplexity(model, encode_corpus(corpus, vocab))
        except KeyError as e:
            raise DataError(f"{args.corpus}: {e}") from None
    rep = evaluate_sets(model, enc, ppl)
    text = rep.render()
    if args.out:
        _write_json(f"{args.out}.json", rep.to_json())
        Path(f"{args.out}.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- report -------------------------------------------------------------------

COLUMNS = (
    ("dev", "perplexity", "dev perp"),
    ("dev", "accuracy", "dev acc"),
    ("dev", "wer", "dev wer"),
    ("test", "perplexity", "test perp"),
    ("test", "accuracy", "test acc"),
    ("test", "wer", "test wer"),
    ("test", "accuracy_cs_gold", "test acc CS"),
    ("test", "accuracy_mono_gold", "test acc mono"),
)


def report_rows(manifests: Sequence[dict]) -> List[dict]:
    rows = []
    for m in manifests:
        row = {"protocol": m["protocol"], "seed": m.get("seed"), "cs_fraction": m.get("cs_fraction", 1.0)}
        for part, key, _ in COLUMNS:
            row[f"{part}_{key}"] = m.get("final", {}).get(part, {}).get(key)
        rows.append(row)
    rows.sort(key=lambda r: (-(r["test_accuracy"] if r["test_accuracy"] is not None else -1.0), r["protocol"]))
    return rows


def render_table(rows: Sequence[dict]) -> str:
    header = ["protocol", "seed"] + [c[2] for c in COLUMNS]
    body = []
    for r in rows:
        cells = [r["protocol"], str(r["seed"])]
        for part, key, _ in COLUMNS:
            v = r.get(f"{part}_{key}")
            cells.append("--" if v is None else f"{v:.2f}")
        body.append(cells)
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) if k < 2 else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths))) for cells in [header] + body]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    manifests, rows = [], []
    for path in args.manifests:
        with _open_text(path, "manifest") as fp:
            try:
                obj = json.load(fp)
            except ValueError as e:
                raise DataError(f"{path}: {e}") from None
        if "rows" in obj:
            rows.extend(obj["rows"])
        elif "protocol" in obj:
            manifests.append(obj)
        else:
            raise DataError(f"{path}: neither a run manifest nor a report")
    rows = report_rows(manifests) + rows
    rows.sort(key=lambda r: (-(r["test_accuracy"] if r["test_accuracy"] is not None else -1.0), r["protocol"]))
    if args.format == "json":
        text = json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n"
    else:
        text = render_table(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with option defaults")
    common.add_argument("--seed", type=int, default=None, help="run seed (falls back to $PHONORANK_SEED, then 0)")
    common.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="phonorank", description="Confusable-alternative evaluation sets and rankers for code-switched text.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("toy-world", parents=[common], help="write a synthetic bilingual resource bundle")
    t.add_argument("--out", required=True)
    t.add_argument("--words-per-language", type=int, default=50)
    t.add_argument("--cs-lines", type=int, default=1000)
    t.add_argument("--cs-share", type=float, default=0.5, help="fraction of code-switched lines in the tagged corpus")
    t.add_argument("--mono-lines", type=int, default=1000)
    t.set_defaults(func=cmd_toy_world)

    c = sub.add_parser("prep-corpus", parents=[common], help="clean and split corpora")
    c.add_argument("--tagged", required=True, help="code-switched corpus, surface/lang tokens")
    c.add_argument("--mono-l1", help="plain monolingual L1 text")
    c.add_argument("--mono-l2", help="plain monolingual L2 text")
    c.add_argument("--ratios", type=_floats, default=[0.6, 0.2, 0.2])
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_prep_corpus)

    g = sub.add_parser("gen-dataset", parents=[common], help="generate alternative-sentence sets")
    g.add_argument("--corpus", required=True, help="directory written by prep-corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--l1-dict")
    g.add_argument("--l2-dict")
    g.add_argument("--l2-phone-map", help="map L2 phonemes onto the L1 inventory")
    g.add_argument("--l1-unigrams")
    g.add_argument("--l2-unigrams")
    g.add_argument("--similar", help="similar-phoneme pairs (built-in list when omitted)")
    g.add_argument("--sets", type=int, default=1000, help="sets per dev/test file")
    g.add_argument("--cs-ratio", type=_parse_ratio, default=0.25, help="CS-gold share, as a fraction or cs:mono")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--train-sets", action=argparse.BooleanOptionalAction, default=True,
                   help="also build sets from the training splits")
    g.add_argument("--mono-train-fraction", type=float, default=1 / 6)
    g.add_argument("--progress-every", type=int, default=500)
    for f in fields(GenerationConfig):
        g.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=None)
    g.set_defaults(func=cmd_gen_dataset)

    r = sub.add_parser("train", parents=[common], help="train one protocol")
    r.add_argument("--protocol", required=True, help=", ".join(PROTOCOLS))
    r.add_argument("--corpus", help="directory written by prep-corpus")
    r.add_argument("--datasets", help="directory written by gen-dataset")
    r.add_argument("--out", required=True)
    r.add_argument("--cs-fraction", type=float, default=1.0, help="share of CS training data to use")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        if f.name == "pretrain_alt_types":
            r.add_argument("--pretrain-alt-types", type=lambda s: s.replace(",", " ").split(), default=None)
            continue
        r.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=None)
    r.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="score a dataset with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--corpus", help="tagged corpus for perplexity (language models only)")
    e.add_argument("--out", help="write OUT.json and OUT.txt")
    e.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", parents=[common], help="tabulate run manifests")
    rp.add_argument("manifests", nargs="+")
    rp.add_argument("--format", choices=("text", "json"), default="text")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv`` after loading option defaults from ``--config``."""
    path = _config_path(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fp:
            cp.read_file(fp)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except configparser.Error as e:
        raise UsageError(f"{path}: {e}") from None
    section = dict(cp[command]) if cp.has_section(command) else dict(cp.defaults())
    subparser = choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in section.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            if raw.lower() not in _TRUE | _FALSE:
                raise UsageError(f"{path}: {key} must be a boolean")
            defaults[dest] = raw.lower() in _TRUE
        elif action.nargs in ("+", "*"):
            defaults[dest] = raw.split()
        else:
            try:
                defaults[dest] = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise UsageError(f"{path}: bad value for {key}: {e}") from None
    subparser.set_defaults(**defaults)
    for a in subparser._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


def _setup_logging(args) -> None:
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("phonorank")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as e:
            # argparse exits on --help, --version and usage errors
            return e.code if isinstance(e.code, int) else EXIT_USAGE
        _setup_logging(args)
        return args.func(args)
    except UsageError as e:
        print(f"phonorank: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"phonorank: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorpusError, LexiconError, ProtocolError, CheckpointError, InsufficientPool, FileNotFoundError) as e:
        print(f"phonorank: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
