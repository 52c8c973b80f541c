import json
from pathlib import Path

import pytest

from phonorank.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from phonorank.neural import load_checkpoint

FAST = ["--nbest", "200", "-q"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    w, c, d = root / "world", root / "corpus", root / "data"
    assert run("toy-world", "--out", w, "--cs-lines", 240, "--mono-lines", 120, "-q") == EXIT_OK
    assert run("prep-corpus", "--tagged", w / "cs_tagged.txt", "--mono-l1", w / "mono_l1.txt",
               "--mono-l2", w / "mono_l2.txt", "--out", c, "-q") == EXIT_OK
    assert run("gen-dataset", "--corpus", c, "--out", d, "--l1-dict", w / "l1.dict", "--l2-dict", w / "l2.dict",
               "--l1-unigrams", w / "l1.unigrams", "--l2-unigrams", w / "l2.unigrams",
               "--similar", w / "similar.txt", "--sets", 20, "--cs-ratio", "1:3", *FAST) == EXIT_OK
    return root


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def test_prep_corpus_outputs(pipeline):
    c = pipeline / "corpus"
    splits = json.loads((c / "splits.json").read_text())
    assert set(splits["splits"]) == {"cs", "mono_l1", "mono_l2"} and splits["ratios"] == [0.6, 0.2, 0.2]
    for name in ("cs", "mono_l1", "mono_l2"):
        for part in ("train", "dev", "test"):
            assert (c / f"{name}.{part}.txt").exists()


def test_dataset_ratio_is_exact(pipeline):
    for part in ("dev", "test"):
        sets = read_jsonl(pipeline / "data" / f"{part}.jsonl")
        assert len(sets) == 20
        assert sum(s["gold_kind"] == "cs" for s in sets) == 5
    stats = json.loads((pipeline / "data" / "stats.json").read_text())
    assert stats["dev"]["cs_gold"] == 5


def test_regeneration_is_byte_identical(pipeline, tmp_path):
    w = pipeline / "world"
    assert run("gen-dataset", "--corpus", pipeline / "corpus", "--out", tmp_path, "--no-train-sets",
               "--l1-dict", w / "l1.dict", "--l2-dict", w / "l2.dict",
               "--l1-unigrams", w / "l1.unigrams", "--l2-unigrams", w / "l2.unigrams",
               "--similar", w / "similar.txt", "--sets", 20, "--cs-ratio", "0.25", *FAST) == EXIT_OK
    for part in ("dev", "test"):
        assert (tmp_path / f"{part}.jsonl").read_bytes() == (pipeline / "data" / f"{part}.jsonl").read_bytes()


TRAIN_SMALL = ["--emb-dim", 8, "--hidden", 8, "--layers", 1, "--max-epochs", 2, "-q"]


def train(pipeline, protocol, out, *extra):
    return run("train", "--protocol", protocol, "--corpus", pipeline / "corpus", "--datasets", pipeline / "data",
               "--out", out, *TRAIN_SMALL, *extra)


@pytest.fixture(scope="module")
def runs(pipeline):
    out = {}
    for protocol in ("cs_only_disc", "cs_only_lm"):
        d = pipeline / "runs" / protocol
        assert train(pipeline, protocol, d) == EXIT_OK
        out[protocol] = d
    return out


def test_train_manifest_and_checkpoint(runs):
    m = json.loads((runs["cs_only_disc"] / "manifest.json").read_text())
    assert m["kind"] == "disc" and m["audit"] == {"cs_sets": m["audit"]["cs_sets"]}
    assert 0 <= m["final"]["test"]["accuracy"] <= 100
    assert "perplexity" not in m["final"]["test"]
    model, meta = load_checkpoint(runs["cs_only_disc"] / "model.ckpt")
    assert model.vocab_size == m["vocab"]["size"] and "vocab" in meta
    lm = json.loads((runs["cs_only_lm"] / "manifest.json").read_text())
    assert lm["final"]["test"]["perplexity"] > 1
    assert set(lm["audit"]) == {"cs"}


def test_manifest_replay_is_deterministic(pipeline, runs, tmp_path):
    assert train(pipeline, "cs_only_disc", tmp_path) == EXIT_OK
    a = json.loads((runs["cs_only_disc"] / "manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("final", "phases", "audit", "vocab", "inputs", "train_config"):
        assert a[key] == b[key]


def test_evaluate_perplexity_only_for_lm(pipeline, runs, tmp_path, capsys):
    ds = pipeline / "data" / "test.jsonl"
    corpus = pipeline / "corpus" / "cs.test.txt"
    assert run("evaluate", "--checkpoint", runs["cs_only_lm"] / "model.ckpt", "--dataset", ds,
               "--corpus", corpus, "--out", tmp_path / "lm", "-q") == EXIT_OK
    assert "perplexity" in json.loads((tmp_path / "lm.json").read_text())
    assert run("evaluate", "--checkpoint", runs["cs_only_disc"] / "model.ckpt", "--dataset", ds,
               "--corpus", corpus, "--out", tmp_path / "disc", "-q") == EXIT_OK
    rep = json.loads((tmp_path / "disc.json").read_text())
    assert "perplexity" not in rep
    m = json.loads((runs["cs_only_disc"] / "manifest.json").read_text())
    assert rep["accuracy"] == pytest.approx(m["final"]["test"]["accuracy"])
    assert (tmp_path / "disc.txt").read_text() in capsys.readouterr().out


def test_report_sorts_and_round_trips(runs, tmp_path, capsys):
    manifests = [runs[p] / "manifest.json" for p in ("cs_only_lm", "cs_only_disc")]
    assert run("report", *manifests, "--format", "json", "--out", tmp_path / "r.json", "-q") == EXIT_OK
    rows = json.loads((tmp_path / "r.json").read_text())["rows"]
    accs = [r["test_accuracy"] for r in rows]
    assert accs == sorted(accs, reverse=True)
    assert run("report", tmp_path / "r.json", "--format", "json", "-q") == EXIT_OK
    capsys.readouterr()
    assert run("report", tmp_path / "r.json", "-q") == EXIT_OK
    table = capsys.readouterr().out
    assert "cs_only_lm" in table and "--" in table


def test_config_file_and_override(pipeline, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[train]\nprotocol = cs_only_disc\n"
        f"corpus = {pipeline / 'corpus'}\ndatasets = {pipeline / 'data'}\n"
        "emb_dim = 8\nhidden = 8\nlayers = 1\nmax_epochs = 1\nlr = 0.5\n"
    )
    assert run("train", "--config", cfg, "--out", tmp_path / "a", "--lr", "0.25", "-q") == EXIT_OK
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["train_config"]["lr"] == 0.25 and m["train_config"]["max_epochs"] == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nbogus = 1\n")
    assert run("train", "--config", bad, "--out", tmp_path / "b", "-q") == EXIT_USAGE


def test_seed_from_environment(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("PHONORANK_SEED", "7")
    assert train(pipeline, "cs_only_disc", tmp_path, "--max-epochs", 1) == EXIT_OK
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 7


def test_exit_codes(pipeline, tmp_path):
    assert run("train", "--protocol", "bogus", "--out", tmp_path) == EXIT_USAGE
    assert run("train", "--protocol", "cs_only_disc") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
    assert run("prep-corpus", "--tagged", tmp_path / "missing.txt", "--out", tmp_path, "-q") == EXIT_DATA
    assert run("evaluate", "--checkpoint", tmp_path / "none.ckpt", "--dataset", tmp_path / "x", "-q") == EXIT_DATA
    assert run("train", "--protocol", "fine_tuned_disc", "--datasets", tmp_path, "--out", tmp_path / "o", "-q") == EXIT_DATA
    assert run("report", tmp_path / "missing.json", "-q") == EXIT_DATA


def test_toy_world_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("toy-world", "--out", tmp_path / d, "--cs-lines", 30, "--mono-lines", 10, "--seed", 3, "-q") == EXIT_OK
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
