"""Small strictly-typed knowledge graph with learnable 1:1 relations.

Entities come in ``n_types`` types of ``per_type`` members each; member
``i`` of every type belongs to group ``i``.  Each relation links two
distinct types and maps member ``i`` of its domain to member ``i`` of its
range, so a held-out triple is implied by the other triples of its group.
"""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from kgneg.graph import TripleStore, TypeCatalog, Vocabulary, build_indexes, write_type_catalog


def make_typed_kg(
    n_types: int = 4,
    per_type: int = 50,
    n_relations: int = 10,
    n_dev: int = 50,
    n_test: int = 50,
    seed: int = 0,
) -> tuple[TripleStore, TypeCatalog]:
    rng = np.random.default_rng(seed)
    pairs = list(itertools.permutations(range(n_types), 2))
    if n_relations > len(pairs):
        raise ValueError(f"at most {len(pairs)} relations between {n_types} types")
    chosen = [pairs[i] for i in sorted(rng.choice(len(pairs), size=n_relations, replace=False))]

    entities, relations = Vocabulary(), Vocabulary()
    for k in range(n_types):
        for i in range(per_type):
            entities.add(f"type{k}_e{i:03d}")
    triples = []
    signatures = {}
    for dom, rng_type in chosen:
        r = relations.add(f"rel_{dom}_{rng_type}")
        signatures[r] = (f"type{dom}", f"type{rng_type}")
        for i in range(per_type):
            triples.append((dom * per_type + i, r, rng_type * per_type + i))
    triples = np.array(triples, dtype=np.int64)
    if n_dev + n_test >= len(triples):
        raise ValueError("dev + test leave no training triples")
    order = rng.permutation(len(triples))
    test = triples[order[:n_test]]
    dev = triples[order[n_test : n_test + n_dev]]
    train = triples[order[n_test + n_dev :]]

    store = build_indexes({"train": train, "dev": dev, "test": test}, entities, relations)
    catalog = TypeCatalog(
        entity_types={e: frozenset([f"type{e // per_type}"]) for e in range(len(entities))},
        relation_signature=signatures,
    )
    return store, catalog


def write_typed_kg(directory: str | Path, **kwargs) -> Path:
    """Write the generated graph as ``train/valid/test.txt`` plus ``types.txt``."""
    directory = Path(directory)
    store, catalog = make_typed_kg(**kwargs)
    store.save(directory)
    (directory / "dev.txt").rename(directory / "valid.txt")
    write_type_catalog(directory / "types.txt", catalog, store)
    return directory
