import sys

import numpy as np
import pytest

from kgneg.graph import TypeCatalog, Vocabulary, build_indexes
from kgneg.synthetic import make_typed_kg

TOY_TRIPLES = [("e1", "r1", "e2"), ("e3", "r1", "e4"), ("e1", "r2", "e5")]


def make_toy(train=TOY_TRIPLES, dev=(), test=()):
    ents, rels = Vocabulary(), Vocabulary()
    enc = {}
    for name, rows in (("train", train), ("dev", dev), ("test", test)):
        enc[name] = [(ents.add(s), rels.add(r), ents.add(t)) for s, r, t in rows]
    return build_indexes(enc, ents, rels)


@pytest.fixture
def toy():
    """The three-triple store used throughout the sampler examples."""
    return make_toy()


@pytest.fixture
def toy_catalog(toy):
    e = toy.entities.id
    return TypeCatalog(
        entity_types={e("e2"): frozenset({"B"}), e("e4"): frozenset({"B"}), e("e5"): frozenset({"C"})},
        relation_signature={toy.relations.id("r1"): ("A", "B")},
    )


@pytest.fixture(scope="session")
def synthetic():
    return make_typed_kg(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
