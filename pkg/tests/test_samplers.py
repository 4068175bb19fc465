import numpy as np
import pytest

from kgneg.errors import SamplerError
from kgneg.graph import TypeCatalog
from kgneg.models import forward_vectors, init_params, predicted_vectors
from kgneg.samplers import (
    SAMPLER_TOKENS,
    CorruptSampler,
    NearestNeighborSampler,
    RandomSampler,
    make_sampler,
    random_fill,
    sample_corrupt,
    sample_near_miss,
    sample_nearest_neighbor,
    sample_random,
    sample_relational,
    sample_typed,
)
from kgneg.knn import KnnIndex

from conftest import make_toy
from oracles import brute_knn, manual_params

# toy ids: e1..e5 -> 0..4, r1 -> 0, r2 -> 1
E1, E2, E3, E4, E5 = range(5)
R1, R2 = 0, 1
POS = (E1, R1, E2)


def test_random_fill_avoids_exclusions(rng):
    out = random_fill({0, 1, 2}, 50, 5, rng)
    assert len(out) == 50 and set(out.tolist()) <= {3, 4}
    assert random_fill(set(range(5)), 3, 5, rng).size == 0


class TestRandom:
    def test_two_entities(self, rng):
        store = make_toy(train=[("a", "r", "b")])
        nb = sample_random(store, (0, 0, 1), 1, rng)
        assert len(nb.neg_targets) == 1 and nb.neg_targets[0] in (0, 1)

    def test_large_vocabulary_count(self, rng):
        sampler = RandomSampler(14951)
        nb = sampler.sample((0, 0, 1), 100, rng)
        assert len(nb.neg_targets) == 100 and len(nb.neg_sources) == 100
        assert nb.neg_targets.max() < 14951

    def test_batch_layout(self, rng):
        triples = np.array([[0, 0, 1], [2, 0, 3]])
        negs, owner = RandomSampler(5).sample_batch(triples, 3, rng)
        assert negs.shape == (12, 3)
        assert owner.tolist() == [0] * 6 + [1] * 6
        # first n_s corrupt the target, next n_s the source
        assert (negs[:3, :2] == [0, 0]).all() and (negs[3:6, 1:] == [0, 1]).all()


class TestCorrupt:
    def test_toy_target(self, toy, rng):
        nb = sample_corrupt(toy, POS, 1, rng)
        assert nb.neg_targets.tolist() == [E4]
        assert nb.neg_sources.tolist() == [E3]

    def test_single_triple_relation_falls_back(self, toy, rng):
        nb = sample_corrupt(toy, (E1, R2, E5), 4, rng)
        assert len(nb.neg_targets) == 4 and E5 not in nb.neg_targets
        assert len(nb.neg_sources) == 4 and E1 not in nb.neg_sources

    def test_pool_exhaustion(self, toy, rng):
        nb = sample_corrupt(toy, POS, 3, rng)
        assert len(nb.neg_targets) == 3
        assert nb.neg_targets[0] == E4
        assert E2 not in nb.neg_targets

    def test_subset_of_pool_without_replacement(self, synthetic, rng):
        store, _ = synthetic
        index = store.index(["train", "dev"])
        sampler = CorruptSampler(index)
        for s, r, t in store.splits["train"][:50].tolist():
            pool = set(index.relation_targets(r)) - index.targets(s, r) - {t}
            nb = sampler.sample((s, r, t), 5, rng)
            if len(pool) >= 5:
                assert set(nb.neg_targets.tolist()) <= pool
                assert len(set(nb.neg_targets.tolist())) == 5


class TestTyped:
    def test_toy_target(self, toy, toy_catalog, rng):
        nb = sample_typed(toy, toy_catalog, POS, 1, rng)
        assert nb.neg_targets.tolist() == [E4]

    def test_empty_domain_type_falls_back(self, toy, toy_catalog, rng):
        nb = sample_typed(toy, toy_catalog, POS, 2, rng)
        assert len(nb.neg_sources) == 2 and E1 not in nb.neg_sources

    def test_no_signature_equals_corrupt(self, toy, toy_catalog):
        a = sample_typed(toy, toy_catalog, (E1, R2, E5), 3, np.random.default_rng(5))
        b = sample_corrupt(toy, (E1, R2, E5), 3, np.random.default_rng(5))
        assert a.neg_targets.tolist() == b.neg_targets.tolist()
        assert a.neg_sources.tolist() == b.neg_sources.tolist()

    def test_any_type_matches(self, toy, rng):
        cat = TypeCatalog(
            entity_types={E4: frozenset({"X", "B"}), E5: frozenset({"Y"})},
            relation_signature={R1: ("A", "B")},
        )
        nb = sample_typed(toy, cat, POS, 1, rng)
        assert nb.neg_targets.tolist() == [E4]

    def test_empty_catalog(self, toy, rng):
        nb = sample_typed(toy, TypeCatalog({}, {}), POS, 1, rng)
        assert nb.neg_targets.tolist() == [E4]


class TestRelational:
    def test_toy_target(self, toy, rng):
        assert sample_relational(toy, POS, 1, rng).neg_targets.tolist() == [E5]

    def test_single_relation_source_falls_back(self, toy, rng):
        nb = sample_relational(toy, (E3, R1, E4), 2, rng)
        assert len(nb.neg_targets) == 2 and E4 not in nb.neg_targets

    def test_neighbor_that_is_also_positive_is_excluded(self, rng):
        store = make_toy(train=[("a", "r1", "b"), ("a", "r2", "b"), ("a", "r2", "c")])
        nb = sample_relational(store, (0, 0, 1), 1, rng)
        assert nb.neg_targets.tolist() == [2]


def nn_table():
    # e4 sits closest to e2; e5 is next
    return manual_params("distmult", [[0, 0], [1, 0], [-1, 0], [1.1, 0], [0.5, 0]], [[1, 1], [1, 1]])


class TestNearestNeighbor:
    def test_toy(self, toy):
        frozen = nn_table()
        knn = KnnIndex(frozen.entities)
        assert sample_nearest_neighbor(toy, frozen, knn, POS, 1).neg_targets.tolist() == [E4]

    def test_matches_brute_force(self, toy):
        frozen = nn_table()
        nb = sample_nearest_neighbor(toy, frozen, KnnIndex(frozen.entities), POS, 2)
        order = [e for e in brute_knn(frozen.entities, frozen.entities[E2], 5) if e != E2]
        assert nb.neg_targets.tolist() == order[:2]

    def test_exhaustion_returns_all_non_positive(self, toy):
        frozen = nn_table()
        nb = sample_nearest_neighbor(toy, frozen, KnnIndex(frozen.entities), POS, 10)
        assert sorted(nb.neg_targets.tolist()) == [E1, E3, E4, E5]
        assert sorted(nb.neg_sources.tolist()) == [E2, E3, E4, E5]

    def test_frozen_untouched(self, synthetic):
        store, _ = synthetic
        params = init_params("rescal", 4, store.n_entities, store.n_relations, seed=0)
        before = params.copy()
        sampler = make_sampler("nn", store, frozen=params)
        sampler.sample_batch(store.splits["train"][:20], 3, np.random.default_rng(0))
        assert params.equals(before)
        assert not sampler.frozen.entities.flags.writeable
        with pytest.raises(ValueError):
            sampler.frozen.relations[0, 0, 0] = 1.0

    def test_size_mismatch(self, toy):
        with pytest.raises(ValueError):
            NearestNeighborSampler(toy.index(), init_params("distmult", 2, 3, 2))


class TestNearMiss:
    def test_identity_rescal_is_nn_around_source(self, synthetic):
        store, _ = synthetic
        params = init_params("rescal", 5, store.n_entities, store.n_relations, seed=2)
        params.relations[:] = np.eye(5)
        sampler = make_sampler("nmiss", store, frozen=params)
        index = store.index(["train", "dev"])
        for s, r, t in store.splits["train"][:20].tolist():
            np.testing.assert_array_equal(forward_vectors(params, s, r), params.entities[s])
            exclude = index.targets(s, r) | {t}
            order = [e for e in brute_knn(params.entities, params.entities[s], store.n_entities) if e not in exclude]
            assert sampler.sample((s, r, t), 4).neg_targets.tolist() == order[:4]

    def test_toy_brute_force(self, toy):
        # x_e1 W_r1 = (0, 1) @ [[0, 1], [2, 0]] = (2, 0); e4 is the closest non-positive row
        frozen = manual_params(
            "rescal", [[0, 1], [1, 0], [-1, 0], [1.5, 0.2], [0.5, 0.5]], [[[0, 1], [2, 0]], np.eye(2)]
        )
        v_s, v_t = predicted_vectors(frozen, E1, R1, E2)
        nb = sample_near_miss(toy, frozen, KnnIndex(frozen.entities), POS, 1)
        dists = {e: np.linalg.norm(frozen.entities[e] - v_t) for e in (E1, E3, E4, E5)}
        assert nb.neg_targets.tolist() == [min(dists, key=dists.get)] == [E4]
        src = {e: np.linalg.norm(frozen.entities[e] - v_s) for e in (E2, E3, E4, E5)}
        assert nb.neg_sources.tolist() == [min(src, key=src.get)]


class TestShared:
    @pytest.fixture
    def samplers(self, synthetic):
        store, catalog = synthetic
        frozen = init_params("rescal", 6, store.n_entities, store.n_relations, seed=1)
        return store, {tok: make_sampler(tok, store, catalog, frozen) for tok in SAMPLER_TOKENS}

    def test_filtering_property(self, samplers):
        store, by_token = samplers
        index = store.index(["train", "dev"])
        rng = np.random.default_rng(9)
        train = store.splits["train"]
        for tok, sampler in by_token.items():
            if not sampler.filtering:
                continue
            for _ in range(100):
                batch = train[rng.integers(len(train), size=4)]
                negs, _ = sampler.sample_batch(batch, 3, rng)
                assert not any(index.contains(*row) for row in negs.tolist()), tok

    @pytest.mark.parametrize("token", SAMPLER_TOKENS)
    def test_counts_and_determinism(self, samplers, token):
        store, by_token = samplers
        sampler = by_token[token]
        batch = store.splits["train"][:16]
        a = sampler.sample_batch(batch, 5, np.random.default_rng(3))
        b = sampler.sample_batch(batch, 5, np.random.default_rng(3))
        assert a[0].shape == (16 * 10, 3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_errors_carry_context(self, toy):
        class Broken(CorruptSampler):
            token = "broken"

            def target_pool(self, s, r, t):
                raise RuntimeError("boom")

        with pytest.raises(SamplerError, match=r"broken sampler failed on triple \(0, 0, 1\)"):
            Broken(toy.index()).sample_batch(np.array([[0, 0, 1]]), 1, np.random.default_rng(0))


class TestMakeSampler:
    def test_unknown(self, toy):
        with pytest.raises(ValueError, match="unknown sampler"):
            make_sampler("bogus", toy)

    def test_requirements(self, toy):
        with pytest.raises(ValueError, match="type catalog"):
            make_sampler("typed", toy)
        with pytest.raises(ValueError, match="frozen"):
            make_sampler("nmiss", toy)
