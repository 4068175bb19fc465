"""Triple storage, lookup indexes, entity types and dataset statistics."""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from kgneg.errors import ParseError, VocabularyError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class Triple(NamedTuple):
    source: int
    relation: int
    target: int


class Vocabulary:
    """Bijective string <-> dense id mapping, ids assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise VocabularyError(f"unknown symbol {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names


def load_split(
    path: str | Path,
    entities: Vocabulary,
    relations: Vocabulary,
    grow: bool = True,
) -> list[Triple]:
    """Read a tab-separated ``source<TAB>relation<TAB>target`` file.

    With ``grow=False`` every symbol must already be in the vocabularies.
    """
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            s, r, t = cols
            if grow:
                triples.append(Triple(entities.add(s), relations.add(r), entities.add(t)))
            else:
                try:
                    triples.append(Triple(entities.id(s), relations.id(r), entities.id(t)))
                except VocabularyError as exc:
                    raise VocabularyError(f"{path}:{lineno}: {exc}") from None
    return triples


def write_split(path: str | Path, triples: Iterable[Triple], entities: Vocabulary, relations: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, r, t in triples:
            fh.write(f"{entities.name(s)}\t{relations.name(r)}\t{entities.name(t)}\n")


class TripleIndex:
    """Membership and adjacency lookups over one union of splits.

    Built once; all containers are treated as read-only afterwards.
    """

    def __init__(self, triples: np.ndarray, n_entities: int):
        self.n_entities = n_entities
        self.triples = frozenset(map(tuple, triples.tolist()))
        targets_of: dict[tuple[int, int], set[int]] = defaultdict(set)
        sources_of: dict[tuple[int, int], set[int]] = defaultdict(set)
        rel_targets: dict[int, set[int]] = defaultdict(set)
        rel_sources: dict[int, set[int]] = defaultdict(set)
        out_nb: dict[int, set[tuple[int, int]]] = defaultdict(set)
        in_nb: dict[int, set[tuple[int, int]]] = defaultdict(set)
        for s, r, t in self.triples:
            targets_of[s, r].add(t)
            sources_of[r, t].add(s)
            rel_targets[r].add(t)
            rel_sources[r].add(s)
            out_nb[s].add((r, t))
            in_nb[t].add((r, s))
        freeze = lambda d: {k: frozenset(v) for k, v in d.items()}  # noqa: E731
        self._targets_of = freeze(targets_of)
        self._sources_of = freeze(sources_of)
        self._rel_targets = freeze(rel_targets)
        self._rel_sources = freeze(rel_sources)
        self._out = freeze(out_nb)
        self._in = freeze(in_nb)

    def __contains__(self, triple: Sequence[int]) -> bool:
        return tuple(triple) in self.triples

    def contains(self, s: int, r: int, t: int) -> bool:
        return (s, r, t) in self.triples

    def targets(self, s: int, r: int) -> frozenset[int]:
        """Known targets of the query (s, r, ?)."""
        return self._targets_of.get((s, r), frozenset())

    def sources(self, r: int, t: int) -> frozenset[int]:
        """Known sources of the query (?, r, t)."""
        return self._sources_of.get((r, t), frozenset())

    def relation_targets(self, r: int) -> frozenset[int]:
        return self._rel_targets.get(r, frozenset())

    def relation_sources(self, r: int) -> frozenset[int]:
        return self._rel_sources.get(r, frozenset())

    def neighbors(self, e: int) -> frozenset[tuple[int, int]]:
        """Outgoing ``(relation, target)`` pairs of ``e``."""
        return self._out.get(e, frozenset())

    def in_neighbors(self, e: int) -> frozenset[tuple[int, int]]:
        """Incoming ``(relation, source)`` pairs of ``e``."""
        return self._in.get(e, frozenset())

    def __len__(self) -> int:
        return len(self.triples)


class TripleStore:
    """Id-encoded splits plus cached indexes over split unions."""

    def __init__(self, entities: Vocabulary, relations: Vocabulary, splits: Mapping[str, np.ndarray]):
        self.entities = entities
        self.relations = relations
        self.splits = {name: np.asarray(splits.get(name, np.empty((0, 3))), dtype=np.int64).reshape(-1, 3) for name in SPLITS}
        for arr in self.splits.values():
            arr.flags.writeable = False
        self._indexes: dict[tuple[str, ...], TripleIndex] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triples(self, split: str) -> list[Triple]:
        return [Triple(*row) for row in self.splits[split].tolist()]

    def index(self, splits: Iterable[str] = ("train",)) -> TripleIndex:
        key = tuple(sorted(set(splits), key=SPLITS.index))
        if key not in self._indexes:
            unknown = set(key) - set(SPLITS)
            if unknown:
                raise KeyError(f"unknown split(s): {sorted(unknown)}")
            arr = np.concatenate([self.splits[name] for name in key]) if key else np.empty((0, 3), np.int64)
            self._indexes[key] = TripleIndex(arr, self.n_entities)
        return self._indexes[key]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            write_split(directory / f"{name}.txt", self.triples(name), self.entities, self.relations)


def build_indexes(
    splits: Mapping[str, Sequence[Sequence[int]]],
    entities: Vocabulary,
    relations: Vocabulary,
) -> TripleStore:
    """Validate id bounds and wrap the splits in a :class:`TripleStore`.

    The train-only and train+dev indexes are built eagerly since every
    training run needs them; other unions are built on first request.
    """
    arrays = {}
    for name, triples in splits.items():
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if arr.size:
            ent = arr[:, [0, 2]]
            if ent.min() < 0 or ent.max() >= len(entities):
                raise IndexError(f"entity id out of bounds in split {name!r} (|E|={len(entities)})")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= len(relations):
                raise IndexError(f"relation id out of bounds in split {name!r} (|R|={len(relations)})")
        arrays[name] = arr
    store = TripleStore(entities, relations, arrays)
    store.index(("train",))
    store.index(("train", "dev"))
    return store


def _find_split_file(directory: Path, names: Sequence[str]) -> Path | None:
    for name in names:
        exact = directory / name
        if exact.exists():
            return exact
    for name in names:
        hits = sorted(directory.glob(f"*{name}"))
        if hits:
            return hits[0]
    return None


def load_dataset(directory: str | Path) -> TripleStore:
    """Load ``train``/``valid`` (or ``dev``)/``test`` files from a directory.

    All three splits grow the vocabularies, in that order.
    """
    directory = Path(directory)
    entities, relations = Vocabulary(), Vocabulary()
    files = {
        "train": _find_split_file(directory, ["train.txt"]),
        "dev": _find_split_file(directory, ["valid.txt", "dev.txt"]),
        "test": _find_split_file(directory, ["test.txt"]),
    }
    if files["train"] is None:
        raise FileNotFoundError(f"no train.txt in {directory}")
    splits = {}
    for name, path in files.items():
        splits[name] = load_split(path, entities, relations, grow=True) if path else []
        logger.info("loaded %s: %d triples", name, len(splits[name]))
    return build_indexes(splits, entities, relations)


@dataclass(frozen=True)
class TypeCatalog:
    entity_types: Mapping[int, frozenset[str]] = field(default_factory=dict)
    relation_signature: Mapping[int, tuple[str, str]] = field(default_factory=dict)
    skipped: int = 0

    def types_of(self, entity: int) -> frozenset[str]:
        return self.entity_types.get(entity, frozenset())

    def entities_with_type(self, label: str) -> np.ndarray:
        """Sorted ids of entities carrying ``label`` among their types."""
        return np.array(sorted(e for e, types in self.entity_types.items() if label in types), dtype=np.int64)


def load_type_catalog(path: str | Path, store: TripleStore) -> TypeCatalog:
    """Read ``T<TAB>entity<TAB>type`` and ``R<TAB>relation<TAB>domain<TAB>range`` records.

    Records naming entities or relations unknown to ``store`` are skipped
    and counted.
    """
    entity_types: dict[int, set[str]] = defaultdict(set)
    signatures: dict[int, tuple[str, str]] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            tag = cols[0]
            if tag == "T" and len(cols) == 3:
                if cols[1] not in store.entities:
                    skipped += 1
                    continue
                entity_types[store.entities.id(cols[1])].add(cols[2])
            elif tag == "R" and len(cols) == 4:
                if cols[1] not in store.relations:
                    skipped += 1
                    continue
                if not cols[2] or not cols[3]:
                    raise ParseError(f"{path}:{lineno}: empty domain or range label")
                signatures[store.relations.id(cols[1])] = (cols[2], cols[3])
            else:
                raise ParseError(f"{path}:{lineno}: unrecognised type record")
    if skipped:
        logger.warning("type catalog: skipped %d records for symbols absent from the store", skipped)
    return TypeCatalog(
        entity_types={e: frozenset(v) for e, v in entity_types.items()},
        relation_signature=signatures,
        skipped=skipped,
    )


def write_type_catalog(path: str | Path, catalog: TypeCatalog, store: TripleStore) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in sorted(catalog.entity_types):
            for label in sorted(catalog.entity_types[e]):
                fh.write(f"T\t{store.entities.name(e)}\t{label}\n")
        for r in sorted(catalog.relation_signature):
            dom, rng = catalog.relation_signature[r]
            fh.write(f"R\t{store.relations.name(r)}\t{dom}\t{rng}\n")


def oom_group(freq: int) -> int:
    """Order-of-magnitude group ``n`` with ``10**n < freq <= 10**(n+1)``; freq 1 maps to 0."""
    if freq < 1:
        raise ValueError("frequency must be >= 1")
    # 10^n < f <= 10^(n+1)  <=>  f-1 has n+1 decimal digits
    return len(str(freq - 1)) - 1


@dataclass(frozen=True)
class DatasetStats:
    relation_freq: Mapping[int, int]
    degree: Mapping[int, int]
    oom_groups: Mapping[int, frozenset[int]]
    n_train: int
    n_entities: int

    def group_of(self, relation: int) -> int | None:
        f = self.relation_freq.get(relation, 0)
        return oom_group(f) if f else None

    @property
    def mean_degree(self) -> float:
        """Training triples per entity (the edges/nodes ratio)."""
        return self.n_train / self.n_entities if self.n_entities else 0.0

    @property
    def mean_incidence(self) -> float:
        """Mean of ``degree`` over all entities (each triple counts for both endpoints)."""
        return sum(self.degree.values()) / self.n_entities if self.n_entities else 0.0


def compute_stats(store: TripleStore) -> DatasetStats:
    train = store.splits["train"]
    if not len(train):
        raise ValueError("training split is empty")
    relation_freq = Counter(train[:, 1].tolist())
    degree: Counter[int] = Counter()
    for s, _, t in train.tolist():
        degree[s] += 1
        if t != s:
            degree[t] += 1
    groups: dict[int, set[int]] = defaultdict(set)
    for r, f in relation_freq.items():
        groups[oom_group(f)].add(r)
    return DatasetStats(
        relation_freq=dict(sorted(relation_freq.items())),
        degree=dict(sorted(degree.items())),
        oom_groups={n: frozenset(rs) for n, rs in sorted(groups.items())},
        n_train=len(train),
        n_entities=store.n_entities,
    )


def write_stats(stats: DatasetStats, store: TripleStore, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rel_path, ent_path = directory / "relation_stats.csv", directory / "entity_stats.csv"
    with open(rel_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation", "freq", "oom"])
        for r, f in stats.relation_freq.items():
            w.writerow([store.relations.name(r), f, oom_group(f)])
    with open(ent_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "degree"])
        for e in range(store.n_entities):
            w.writerow([store.entities.name(e), stats.degree.get(e, 0)])
    return rel_path, ent_path
