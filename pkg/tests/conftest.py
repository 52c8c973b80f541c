import pytest

from phonorank.altgen import GenerationConfig, Generator, build_pool
from phonorank.corpus import TaggedCorpus
from phonorank.lexicon import L1, L2
from phonorank.synthetic import make_world


class ToyData:
    """A small bilingual task shared by the training and CLI tests."""

    def __init__(self, seed=0):
        self.world = make_world(seed)
        w = self.world
        self.gen = Generator(w.lexicon, w.similar, GenerationConfig())
        cs, l1, l2 = w.corpus(300, "cs", 1), w.corpus(300, L1, 2), w.corpus(300, L2, 3)
        self.cs_train, self.cs_dev, self.cs_test = (TaggedCorpus(cs[:200]), TaggedCorpus(cs[200:250]), TaggedCorpus(cs[250:]))
        self.l1_train, self.l2_train = TaggedCorpus(l1[:200]), TaggedCorpus(l2[:200])
        self.mono_dev = TaggedCorpus(l1[200:225] + l2[200:225])
        self.train_sets = self._pool("tr", cs[:60])
        self.mono_sets = self._pool("mo", l1[:20] + l2[:20])
        self.dev_sets = self._pool("dv", cs[200:220] + l1[250:260])
        self.test_sets = self._pool("te", cs[250:265] + l2[250:260])

    def _pool(self, prefix, golds):
        sets, _ = build_pool([(f"{prefix}{k:04d}", g) for k, g in enumerate(golds)], self.gen, seed=0)
        return sets


@pytest.fixture(scope="session")
def toy():
    return ToyData()
