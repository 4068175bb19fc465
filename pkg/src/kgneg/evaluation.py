"""Filtered link-prediction ranking, MRR and hits@K."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from kgneg.graph import SPLITS, DatasetStats, Triple, TripleStore
from kgneg.models import ModelParams, score_candidates

COMPARATORS = ("inclusive", "strict")


@dataclass(frozen=True)
class RankingResult:
    triple: Triple
    target_rank: int
    source_rank: int


def rank_from_scores(pos_score: float, other_scores: Sequence[float] | np.ndarray) -> int:
    """Pessimistic rank: every other candidate scoring >= the positive ranks above it."""
    other = np.asarray(other_scores)
    return 1 + int(np.count_nonzero(other > pos_score)) + int(np.count_nonzero(other == pos_score))


def _side_rank(scores: np.ndarray, true_id: int, known: frozenset[int] | None) -> int:
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[true_id] = False
    if known:
        keep[np.fromiter(known, dtype=np.int64, count=len(known))] = False
    return rank_from_scores(scores[true_id], scores[keep])


def rank_triple(
    params: ModelParams,
    store: TripleStore,
    triple: Sequence[int],
    filter_splits: Sequence[str] = SPLITS,
    mode: str = "filtered",
) -> RankingResult:
    """Rank the true target of ``(s, r, ?)`` and true source of ``(?, r, t)`` among all entities.

    In ``filtered`` mode every other entity forming a known triple in
    ``filter_splits`` is removed from the candidates first.
    """
    if mode not in ("raw", "filtered"):
        raise ValueError(f"mode must be 'raw' or 'filtered', got {mode!r}")
    s, r, t = (int(x) for x in triple)
    index = store.index(filter_splits) if mode == "filtered" else None
    tgt_scores = score_candidates(params, (s, r, "target")).scores
    src_scores = score_candidates(params, (t, r, "source")).scores
    return RankingResult(
        Triple(s, r, t),
        _side_rank(tgt_scores, t, index.targets(s, r) if index else None),
        _side_rank(src_scores, s, index.sources(r, t) if index else None),
    )


def rank_split(
    params: ModelParams,
    store: TripleStore,
    triples: np.ndarray,
    filter_splits: Sequence[str] = SPLITS,
    mode: str = "filtered",
) -> np.ndarray:
    """``(N, 2)`` array of (target_rank, source_rank) per triple."""
    out = np.empty((len(triples), 2), dtype=np.int64)
    for i, tr in enumerate(np.asarray(triples).tolist()):
        res = rank_triple(params, store, tr, filter_splits, mode)
        out[i] = res.target_rank, res.source_rank
    return out


def mrr(ranks: Sequence[int] | np.ndarray) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("mrr of an empty rank list")
    if np.any(r < 1):
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / r))


def hits_at_k(ranks: Sequence[int] | np.ndarray, k: int, comparator: str = "inclusive") -> float:
    """Fraction of ranks ``<= k`` (inclusive) or ``< k`` (strict)."""
    if k < 1:
        raise ValueError("K must be >= 1")
    r = np.asarray(ranks)
    if r.size == 0:
        raise ValueError("hits@K of an empty rank list")
    if comparator == "inclusive":
        return float(np.mean(r <= k))
    if comparator == "strict":
        return float(np.mean(r < k))
    raise ValueError(f"comparator must be one of {COMPARATORS}")


@dataclass(frozen=True)
class SliceMetrics:
    mrr: float
    hits: Mapping[int, float]
    count: int


@dataclass
class MetricsReport:
    mrr: float
    hits: dict[int, float]
    per_slice: dict[int, SliceMetrics]
    n_evaluated: int
    comparator: str = "inclusive"
    config_fingerprint: str = ""
    model: str = ""
    sampler: str = ""
    n_s: int = 0
    split: str = "test"
    seed: int = 0
    ranks: np.ndarray = field(default=None, repr=False)
    relations: np.ndarray = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "model": self.model,
            "sampler": self.sampler,
            "n_s": self.n_s,
            "split": self.split,
            "n_evaluated": self.n_evaluated,
            "mrr": self.mrr,
            "hits": {f"hits@{k}": v for k, v in self.hits.items()},
            "comparator": self.comparator,
            "per_slice": {
                slice_label(n): {"mrr": m.mrr, "count": m.count, **{f"hits@{k}": v for k, v in m.hits.items()}}
                for n, m in self.per_slice.items()
            },
        }


UNSEEN_SLICE = -1


def slice_label(n: int) -> str:
    return "unseen" if n == UNSEEN_SLICE else f"G{n}"


def _metrics(ranks: np.ndarray, ks: Sequence[int], comparator: str) -> tuple[float, dict[int, float]]:
    return mrr(ranks), {k: hits_at_k(ranks, k, comparator) for k in ks}


def evaluate(
    params: ModelParams,
    store: TripleStore,
    split: str = "test",
    stats: DatasetStats | None = None,
    ks: Sequence[int] = (1, 3, 10),
    comparator: str = "inclusive",
    filter_splits: Sequence[str] = SPLITS,
    max_triples: int | None = None,
    rng: np.random.Generator | None = None,
    **meta,
) -> MetricsReport:
    """Filtered ranking of every triple in ``split``, both directions pooled.

    ``max_triples`` evaluates a random subset (drawn with ``rng``), used
    for cheap validation during training.  Per-slice metrics group each
    triple by the order of magnitude of its relation's training frequency;
    relations absent from training fall in the ``unseen`` slice.
    """
    triples = store.splits[split]
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    if max_triples is not None and len(triples) > max_triples:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(len(triples), size=max_triples, replace=False))
        triples = triples[pick]
    ranks = rank_split(params, store, triples, filter_splits)
    pooled = ranks.reshape(-1)
    rels = np.repeat(triples[:, 1], 2)
    total_mrr, total_hits = _metrics(pooled, ks, comparator)

    per_slice: dict[int, SliceMetrics] = {}
    if stats is not None:
        groups = np.array([
            g if (g := stats.group_of(r)) is not None else UNSEEN_SLICE for r in rels.tolist()
        ])
        for g in sorted(set(groups.tolist())):
            sel = pooled[groups == g]
            m, h = _metrics(sel, ks, comparator)
            per_slice[g] = SliceMetrics(m, h, int(sel.size))
    return MetricsReport(
        mrr=total_mrr,
        hits=total_hits,
        per_slice=per_slice,
        n_evaluated=int(len(triples)),
        comparator=comparator,
        split=split,
        ranks=pooled,
        relations=rels,
        **meta,
    )
