"""Scoring functions for RESCAL, TransE, DistMult and ComplEx.

All four families share one real-valued container.  ComplEx rows are
stored as ``[Re | Im]`` halves, so an entity row has width ``2 * dim``.

Every family is expressed through a *forward* vector predicted from
``(s, r)`` and a *backward* vector predicted from ``(r, t)``:

* bilinear families score ``<forward(s, r), x_t> = <x_s, backward(r, t)>``
* TransE scores ``-||forward(s, r) - x_t|| = -||x_s - backward(r, t)||``

The same vectors drive batched candidate scoring and near-miss sampling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from kgneg.errors import CheckpointError

CHECKPOINT_VERSION = 1
TRANSE_EPS = 1e-12


class Family(str, enum.Enum):
    RESCAL = "rescal"
    TRANSE = "transe"
    DISTMULT = "distmult"
    COMPLEX = "complex"

    @property
    def bilinear(self) -> bool:
        return self is not Family.TRANSE


@dataclass
class ModelParams:
    family: Family
    dim: int
    entities: np.ndarray
    relations: np.ndarray

    @property
    def width(self) -> int:
        """Stored row width: ``2 * dim`` for ComplEx, ``dim`` otherwise."""
        return 2 * self.dim if self.family is Family.COMPLEX else self.dim

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relations.shape[0]

    def copy(self) -> "ModelParams":
        return replace(self, entities=self.entities.copy(), relations=self.relations.copy())

    def frozen(self) -> "ModelParams":
        """Read-only copy; any in-place write raises."""
        out = self.copy()
        out.entities.flags.writeable = False
        out.relations.flags.writeable = False
        return out

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.family is other.family
            and self.dim == other.dim
            and np.array_equal(self.entities, other.entities)
            and np.array_equal(self.relations, other.relations)
        )


class Query(NamedTuple):
    entity: int
    relation: int
    direction: str  # "target": entity is the source; "source": entity is the target


@dataclass(frozen=True)
class ScoredCandidates:
    query: Query
    candidates: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class MarginLossConfig:
    margin: float = 1.0
    l2_lambda: float = 0.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


def init_params(
    family: Family | str,
    dim: int,
    n_entities: int,
    n_relations: int,
    seed: int | np.random.Generator = 0,
) -> ModelParams:
    family = Family(family)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    width = 2 * dim if family is Family.COMPLEX else dim
    bound = 6.0 / np.sqrt(dim)
    entities = rng.uniform(-bound, bound, size=(n_entities, width))
    entities /= np.linalg.norm(entities, axis=1, keepdims=True)
    if family is Family.RESCAL:
        relations = rng.uniform(-6.0 / dim, 6.0 / dim, size=(n_relations, dim, dim))
    else:
        relations = rng.uniform(-bound, bound, size=(n_relations, width))
    return ModelParams(family, dim, entities, relations)


def _split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = x.shape[-1] // 2
    return x[..., :h], x[..., h:]


def _cmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    a, b = _split(x)
    c, d = _split(y)
    return np.concatenate([a * c - b * d, a * d + b * c], axis=-1)


def _conj(x: np.ndarray) -> np.ndarray:
    re, im = _split(x)
    return np.concatenate([re, -im], axis=-1)


def forward_vectors(params: ModelParams, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Predicted target representations for a batch of ``(s, r)`` pairs."""
    xs, rel = params.entities[s], params.relations[r]
    fam = params.family
    if fam is Family.RESCAL:
        return np.einsum("...i,...ij->...j", xs, rel)
    if fam is Family.TRANSE:
        return xs + rel
    if fam is Family.DISTMULT:
        return xs * rel
    return _cmul(xs, rel)


def backward_vectors(params: ModelParams, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Predicted source representations for a batch of ``(r, t)`` pairs."""
    xt, rel = params.entities[t], params.relations[r]
    fam = params.family
    if fam is Family.RESCAL:
        return np.einsum("...ij,...j->...i", rel, xt)
    if fam is Family.TRANSE:
        return xt - rel
    if fam is Family.DISTMULT:
        return xt * rel
    return _cmul(xt, _conj(rel))


def predicted_vectors(params: ModelParams, s: int, r: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(v_s, v_t)``: the backward prediction of the source and the forward prediction of the target."""
    return backward_vectors(params, r, t), forward_vectors(params, s, r)


def score(params: ModelParams, s: int, r: int, t: int) -> float:
    """Score of a single triple, written out per family."""
    xs, xt, rel = params.entities[s], params.entities[t], params.relations[r]
    fam = params.family
    if fam is Family.RESCAL:
        return float(xs @ rel @ xt)
    if fam is Family.TRANSE:
        return -float(np.sqrt(np.sum((xs + rel - xt) ** 2)))
    if fam is Family.DISTMULT:
        return float(np.sum(xs * rel * xt))
    a, b = _split(xs)
    c, d = _split(rel)
    e, f = _split(xt)
    return float(np.sum(a * c * e) + np.sum(b * c * f) + np.sum(a * d * f) - np.sum(b * d * e))


def score_triples(params: ModelParams, s: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorised scores for aligned id arrays."""
    v = forward_vectors(params, s, r)
    xt = params.entities[t]
    if params.family is Family.TRANSE:
        return -np.sqrt(np.sum((v - xt) ** 2, axis=-1))
    return np.sum(v * xt, axis=-1)


def score_candidates(
    params: ModelParams,
    query: Query | tuple[int, int, str],
    candidates: Sequence[int] | np.ndarray | None = None,
) -> ScoredCandidates:
    """Score every candidate substituted into the open slot of ``query``.

    ``candidates=None`` scores the whole entity table.
    """
    query = Query(*query)
    if query.direction == "target":
        v = forward_vectors(params, query.entity, query.relation)
    elif query.direction == "source":
        v = backward_vectors(params, query.relation, query.entity)
    else:
        raise ValueError(f"direction must be 'target' or 'source', got {query.direction!r}")
    if candidates is None:
        cand = np.arange(params.n_entities)
        table = params.entities
    else:
        cand = np.asarray(candidates, dtype=np.int64)
        if cand.size == 0:
            raise ValueError("candidates must be nonempty")
        table = params.entities[cand]
    if params.family is Family.TRANSE:
        scores = -np.sqrt(np.sum((table - v) ** 2, axis=1))
    else:
        scores = table @ v
    return ScoredCandidates(query, cand, scores)


def margin_loss(pos_score: float, neg_scores: Sequence[float], cfg: MarginLossConfig = MarginLossConfig()) -> float:
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("neg_scores must be nonempty")
    return float(np.sum(np.maximum(0.0, cfg.margin - pos_score + neg)))


def triple_gradients(
    params: ModelParams, s: np.ndarray, r: np.ndarray, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of the score w.r.t. ``x_s``, the relation parameters and ``x_t``."""
    xs, xt, rel = params.entities[s], params.entities[t], params.relations[r]
    fam = params.family
    if fam is Family.RESCAL:
        gs = np.einsum("bij,bj->bi", rel, xt)
        gt = np.einsum("bi,bij->bj", xs, rel)
        gr = np.einsum("bi,bj->bij", xs, xt)
    elif fam is Family.TRANSE:
        v = xs + rel - xt
        norm = np.sqrt(np.sum(v**2, axis=1, keepdims=True))
        g = v / np.maximum(norm, TRANSE_EPS)
        gs, gr, gt = -g, -g, g
    elif fam is Family.DISTMULT:
        gs, gr, gt = rel * xt, xs * xt, xs * rel
    else:
        a, b = _split(xs)
        c, d = _split(rel)
        e, f = _split(xt)
        gs = np.concatenate([c * e + d * f, c * f - d * e], axis=1)
        gr = np.concatenate([a * e + b * f, a * f - b * e], axis=1)
        gt = np.concatenate([a * c - b * d, b * c + a * d], axis=1)
    return gs, gr, gt


@dataclass
class SparseGrads:
    """Row-sparse gradient of the summed hinge loss."""

    entity_ids: np.ndarray
    entity_grads: np.ndarray
    relation_ids: np.ndarray
    relation_grads: np.ndarray
    loss: float = 0.0
    n_active: int = 0

    @property
    def empty(self) -> bool:
        return self.entity_ids.size == 0 and self.relation_ids.size == 0

    def dense(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        ge = np.zeros_like(params.entities)
        gr = np.zeros_like(params.relations)
        ge[self.entity_ids] = self.entity_grads
        gr[self.relation_ids] = self.relation_grads
        return ge, gr


def _empty_grads(params: ModelParams, loss: float = 0.0) -> SparseGrads:
    return SparseGrads(
        np.empty(0, np.int64),
        np.empty((0, params.width)),
        np.empty(0, np.int64),
        np.empty((0,) + params.relations.shape[1:]),
        loss,
        0,
    )


def _accumulate(ids: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(ids, return_inverse=True)
    out = np.zeros((uniq.size,) + rows.shape[1:])
    np.add.at(out, inv, rows)
    return uniq, out


def batch_loss_gradients(
    params: ModelParams,
    positives: np.ndarray,
    negatives: np.ndarray,
    owner: np.ndarray,
    margin: float = 1.0,
) -> SparseGrads:
    """Summed hinge loss and its gradient for many (positive, negative) pairs.

    ``negatives[j]`` is a corrupted copy of ``positives[owner[j]]``.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 3)
    owner = np.asarray(owner, dtype=np.int64)
    if negatives.shape[0] == 0:
        return _empty_grads(params)
    pos_scores = score_triples(params, positives[:, 0], positives[:, 1], positives[:, 2])
    neg_scores = score_triples(params, negatives[:, 0], negatives[:, 1], negatives[:, 2])
    hinge = margin - pos_scores[owner] + neg_scores
    active = hinge > 0
    loss = float(np.sum(hinge[active]))
    if not active.any():
        return _empty_grads(params, loss)

    # d/d(pos) of each active term is -grad(pos); d/d(neg) is +grad(neg)
    counts = np.bincount(owner[active], minlength=positives.shape[0]).astype(np.float64)
    used = counts > 0
    p = positives[used]
    w = counts[used]
    ps, pr, pt = triple_gradients(params, p[:, 0], p[:, 1], p[:, 2])
    n = negatives[active]
    ns, nr, nt = triple_gradients(params, n[:, 0], n[:, 1], n[:, 2])

    wshape = (-1,) + (1,) * (pr.ndim - 1)
    ent_ids = np.concatenate([p[:, 0], p[:, 2], n[:, 0], n[:, 2]])
    ent_rows = np.concatenate([-w[:, None] * ps, -w[:, None] * pt, ns, nt])
    rel_ids = np.concatenate([p[:, 1], n[:, 1]])
    rel_rows = np.concatenate([-w.reshape(wshape) * pr, nr])
    e_ids, e_grads = _accumulate(ent_ids, ent_rows)
    r_ids, r_grads = _accumulate(rel_ids, rel_rows)
    return SparseGrads(e_ids, e_grads, r_ids, r_grads, loss, int(active.sum()))


def corrupted_triples(positive: Sequence[int], neg_sources: Sequence[int], neg_targets: Sequence[int]) -> np.ndarray:
    s, r, t = (int(x) for x in positive)
    tgt = [(s, r, int(e)) for e in neg_targets]
    src = [(int(e), r, t) for e in neg_sources]
    return np.array(tgt + src, dtype=np.int64).reshape(-1, 3)


def loss_gradients(params: ModelParams, positive: Sequence[int], negatives, cfg: MarginLossConfig = MarginLossConfig()) -> SparseGrads:
    """Hinge loss gradient for one positive against its corrupted targets and sources.

    ``negatives`` is anything with ``neg_sources`` and ``neg_targets``.
    """
    neg = corrupted_triples(positive, negatives.neg_sources, negatives.neg_targets)
    if neg.shape[0] == 0:
        raise ValueError("negatives must be nonempty in at least one direction")
    return batch_loss_gradients(params, np.array([positive]), neg, np.zeros(len(neg), np.int64), cfg.margin)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    entity_names: Sequence[str] | None = None,
    relation_names: Sequence[str] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": np.array([CHECKPOINT_VERSION], dtype=np.uint8),
        "family": np.array(params.family.value),
        "dim": np.array(params.dim, dtype=np.int64),
        "sizes": np.array([params.n_entities, params.n_relations], dtype=np.int64),
        "entities": params.entities,
        "relations": params.relations,
    }
    if entity_names is not None:
        payload["entity_names"] = np.array(list(entity_names), dtype=str)
    if relation_names is not None:
        payload["relation_names"] = np.array(list(relation_names), dtype=str)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


@dataclass
class Checkpoint:
    params: ModelParams
    entity_names: list[str] | None = None
    relation_names: list[str] | None = None
    extra: dict = field(default_factory=dict)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"][0])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
            family = Family(str(data["family"]))
            n_e, n_r = (int(x) for x in data["sizes"])
            params = ModelParams(family, int(data["dim"]), data["entities"].copy(), data["relations"].copy())
            ents = data["entity_names"].tolist() if "entity_names" in data else None
            rels = data["relation_names"].tolist() if "relation_names" in data else None
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if params.n_entities != n_e or params.n_relations != n_r:
        raise CheckpointError(f"{path}: table sizes disagree with header")
    return Checkpoint(params, ents, rels)
