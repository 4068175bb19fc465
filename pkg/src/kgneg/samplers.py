"""Negative samplers.

Every sampler maps a positive triple ``(s, r, t)`` and a count ``n_s`` to
``n_s`` corrupted targets (``(s, r, t')``) and ``n_s`` corrupted sources
(``(s', r, t)``).

=============  ==========================================================
token          candidate pool for corrupted targets (sources mirrored)
=============  ==========================================================
``random``     all entities, unchecked, with replacement
``corrupt``    entities seen as a target of ``r``
``typed``      entities whose types intersect the range of ``r``
``relational`` targets reached from ``s`` through some relation ``r' != r``
``nn``         nearest neighbours of ``f(t)`` under a frozen model
``nmiss``      nearest neighbours of the frozen model's prediction for ``t``
=============  ==========================================================

All but ``random`` drop known positives of the query under the filter
split union.  Pool samplers draw without replacement and top up a short
pool with uniformly drawn non-positive entities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from kgneg.errors import SamplerError
from kgneg.graph import TripleIndex, TripleStore, TypeCatalog
from kgneg.knn import KnnIndex
from kgneg.models import ModelParams, backward_vectors, forward_vectors

SAMPLER_TOKENS = ("random", "corrupt", "typed", "relational", "nn", "nmiss")
TRAIN_FILTER = ("train", "dev")


@dataclass(frozen=True)
class NegativeBatch:
    neg_sources: np.ndarray
    neg_targets: np.ndarray

    def __len__(self) -> int:
        return len(self.neg_sources) + len(self.neg_targets)


def _ids(values: Iterable[int]) -> np.ndarray:
    return np.array(sorted(values), dtype=np.int64)


def random_fill(exclude: frozenset[int] | set[int], count: int, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` uniform draws (with replacement) avoiding ``exclude``.

    Returns fewer (possibly none) only when every entity is excluded.
    """
    if count <= 0 or len(exclude) >= n_entities and all(0 <= e < n_entities for e in exclude):
        return np.empty(0, np.int64)
    out: list[int] = []
    while len(out) < count:
        draw = rng.integers(0, n_entities, size=2 * (count - len(out)) + 4)
        out.extend(e for e in draw.tolist() if e not in exclude)
    return np.array(out[:count], dtype=np.int64)


class Sampler:
    token = ""
    filtering = True

    def sample(self, triple: Sequence[int], n_s: int, rng: np.random.Generator) -> NegativeBatch:
        raise NotImplementedError

    def sample_batch(self, triples: np.ndarray, n_s: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Corrupted triples for a batch of positives plus the owning positive's row.

        Returns ``(negatives (Q, 3), owner (Q,))``.
        """
        negs, owner = [], []
        for i, (s, r, t) in enumerate(np.asarray(triples).tolist()):
            try:
                nb = self.sample((s, r, t), n_s, rng)
            except Exception as exc:
                raise SamplerError(f"{self.token} sampler failed on triple {(s, r, t)}: {exc}") from exc
            for e in nb.neg_targets.tolist():
                negs.append((s, r, e))
            for e in nb.neg_sources.tolist():
                negs.append((e, r, t))
            owner.extend([i] * len(nb))
        return np.array(negs, dtype=np.int64).reshape(-1, 3), np.array(owner, dtype=np.int64)


class RandomSampler(Sampler):
    """Uniform entities; positives are deliberately not checked."""

    token = "random"
    filtering = False

    def __init__(self, n_entities: int):
        if n_entities < 2:
            raise ValueError("random sampling needs at least two entities")
        self.n_entities = n_entities

    def sample(self, triple, n_s, rng):
        return NegativeBatch(
            neg_sources=rng.integers(0, self.n_entities, size=n_s),
            neg_targets=rng.integers(0, self.n_entities, size=n_s),
        )

    def sample_batch(self, triples, n_s, rng):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        b = len(triples)
        # per positive: n_s targets then n_s sources, matching Sampler.sample_batch
        draws = rng.integers(0, self.n_entities, size=(b, 2, n_s))
        tgt = np.repeat(triples[:, None, :], n_s, axis=1).copy()
        tgt[:, :, 2] = draws[:, 0]
        src = np.repeat(triples[:, None, :], n_s, axis=1).copy()
        src[:, :, 0] = draws[:, 1]
        negs = np.concatenate([tgt, src], axis=1).reshape(-1, 3)
        return negs, np.repeat(np.arange(b), 2 * n_s)


class PoolSampler(Sampler):
    """Draw from a per-query candidate pool, then top up randomly."""

    def __init__(self, index: TripleIndex):
        self.index = index
        self.n_entities = index.n_entities

    def positives_target(self, s: int, r: int, t: int) -> frozenset[int]:
        return self.index.targets(s, r) | {t}

    def positives_source(self, s: int, r: int, t: int) -> frozenset[int]:
        return self.index.sources(r, t) | {s}

    def target_pool(self, s: int, r: int, t: int) -> np.ndarray:
        raise NotImplementedError

    def source_pool(self, s: int, r: int, t: int) -> np.ndarray:
        raise NotImplementedError

    def _draw(self, pool: np.ndarray, exclude: frozenset[int], n_s: int, rng) -> np.ndarray:
        k = min(n_s, len(pool))
        chosen = rng.choice(pool, size=k, replace=False) if k else np.empty(0, np.int64)
        fill = random_fill(exclude, n_s - k, self.n_entities, rng)
        return np.concatenate([chosen.astype(np.int64), fill])

    def sample(self, triple, n_s, rng):
        s, r, t = (int(x) for x in triple)
        targets = self._draw(self.target_pool(s, r, t), self.positives_target(s, r, t), n_s, rng)
        sources = self._draw(self.source_pool(s, r, t), self.positives_source(s, r, t), n_s, rng)
        return NegativeBatch(neg_sources=sources, neg_targets=targets)


class CorruptSampler(PoolSampler):
    """Entities observed in the same role for the same relation."""

    token = "corrupt"

    def target_pool(self, s, r, t):
        return _ids(self.index.relation_targets(r) - self.positives_target(s, r, t))

    def source_pool(self, s, r, t):
        return _ids(self.index.relation_sources(r) - self.positives_source(s, r, t))


class TypedSampler(CorruptSampler):
    """Entities sharing a type with the relation's domain (sources) or range (targets).

    Relations without a signature are sampled exactly like ``corrupt``.
    """

    token = "typed"

    def __init__(self, index: TripleIndex, catalog: TypeCatalog):
        super().__init__(index)
        self.catalog = catalog
        self._by_type: dict[str, frozenset[int]] = {}

    def _typed(self, label: str) -> frozenset[int]:
        if label not in self._by_type:
            self._by_type[label] = frozenset(self.catalog.entities_with_type(label).tolist())
        return self._by_type[label]

    def target_pool(self, s, r, t):
        sig = self.catalog.relation_signature.get(r)
        if sig is None:
            return super().target_pool(s, r, t)
        return _ids(self._typed(sig[1]) - self.positives_target(s, r, t))

    def source_pool(self, s, r, t):
        sig = self.catalog.relation_signature.get(r)
        if sig is None:
            return super().source_pool(s, r, t)
        return _ids(self._typed(sig[0]) - self.positives_source(s, r, t))


class RelationalSampler(PoolSampler):
    """Neighbours of the fixed entity through relations other than ``r``."""

    token = "relational"

    def target_pool(self, s, r, t):
        reached = {e for rel, e in self.index.neighbors(s) if rel != r}
        return _ids(reached - self.positives_target(s, r, t))

    def source_pool(self, s, r, t):
        reached = {e for rel, e in self.index.in_neighbors(t) if rel != r}
        return _ids(reached - self.positives_source(s, r, t))


class NearestNeighborSampler(PoolSampler):
    """Closest non-positive entities to ``f(t)`` (targets) and ``f(s)`` (sources).

    The tree is built once over every entity row of the frozen model;
    positives are removed from each result list, querying deep enough
    that ``n_s`` survivors remain whenever they exist.  ``rng`` is unused.
    """

    token = "nn"

    def __init__(self, index: TripleIndex, frozen: ModelParams, knn: KnnIndex | None = None, leaf_size: int = 32):
        super().__init__(index)
        if frozen.n_entities != index.n_entities:
            raise ValueError("frozen model and store disagree on the number of entities")
        self.frozen = frozen if not frozen.entities.flags.writeable else frozen.frozen()
        self.knn = knn if knn is not None else KnnIndex(self.frozen.entities, leaf_size=leaf_size)

    def query_vectors(self, s: int, r: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.frozen.entities[s], self.frozen.entities[t]

    def _nearest(self, q: np.ndarray, exclude: frozenset[int], n_s: int) -> np.ndarray:
        ids, _ = self.knn.query(q, n_s + len(exclude))
        keep = [e for e in ids.tolist() if e not in exclude]
        return np.array(keep[:n_s], dtype=np.int64)

    def sample(self, triple, n_s, rng=None):
        s, r, t = (int(x) for x in triple)
        qs, qt = self.query_vectors(s, r, t)
        return NegativeBatch(
            neg_sources=self._nearest(qs, self.positives_source(s, r, t), n_s),
            neg_targets=self._nearest(qt, self.positives_target(s, r, t), n_s),
        )


class NearMissSampler(NearestNeighborSampler):
    """Closest non-positive entities to the frozen model's predicted source/target vectors."""

    token = "nmiss"

    def query_vectors(self, s, r, t):
        return backward_vectors(self.frozen, r, t), forward_vectors(self.frozen, s, r)


def make_sampler(
    token: str,
    store: TripleStore,
    catalog: TypeCatalog | None = None,
    frozen: ModelParams | None = None,
    filter_splits: Sequence[str] = TRAIN_FILTER,
    leaf_size: int = 32,
) -> Sampler:
    if token == "random":
        return RandomSampler(store.n_entities)
    index = store.index(filter_splits)
    if token == "corrupt":
        return CorruptSampler(index)
    if token == "typed":
        if catalog is None:
            raise ValueError("typed sampling requires a type catalog")
        return TypedSampler(index, catalog)
    if token == "relational":
        return RelationalSampler(index)
    if token in ("nn", "nmiss"):
        if frozen is None:
            raise ValueError(f"{token} sampling requires a frozen negative-sampling model")
        cls = NearestNeighborSampler if token == "nn" else NearMissSampler
        return cls(index, frozen, leaf_size=leaf_size)
    raise ValueError(f"unknown sampler {token!r}; expected one of {', '.join(SAMPLER_TOKENS)}")


# Functional forms, one call per positive.


def sample_random(store: TripleStore, triple, n_s: int, rng: np.random.Generator) -> NegativeBatch:
    return RandomSampler(store.n_entities).sample(triple, n_s, rng)


def sample_corrupt(store: TripleStore, triple, n_s: int, rng, filter_splits=TRAIN_FILTER) -> NegativeBatch:
    return CorruptSampler(store.index(filter_splits)).sample(triple, n_s, rng)


def sample_typed(store: TripleStore, catalog: TypeCatalog, triple, n_s: int, rng, filter_splits=TRAIN_FILTER) -> NegativeBatch:
    return TypedSampler(store.index(filter_splits), catalog).sample(triple, n_s, rng)


def sample_relational(store: TripleStore, triple, n_s: int, rng, filter_splits=TRAIN_FILTER) -> NegativeBatch:
    return RelationalSampler(store.index(filter_splits)).sample(triple, n_s, rng)


def sample_nearest_neighbor(store: TripleStore, frozen: ModelParams, knn: KnnIndex, triple, n_s: int, filter_splits=TRAIN_FILTER) -> NegativeBatch:
    return NearestNeighborSampler(store.index(filter_splits), frozen, knn).sample(triple, n_s)


def sample_near_miss(store: TripleStore, frozen: ModelParams, knn: KnnIndex, triple, n_s: int, filter_splits=TRAIN_FILTER) -> NegativeBatch:
    return NearMissSampler(store.index(filter_splits), frozen, knn).sample(triple, n_s)
