"""Row-sparse Adam, the epoch loop and early stopping on validation MRR."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from kgneg.errors import OptimizerError, SamplerError
from kgneg.evaluation import evaluate
from kgneg.graph import SPLITS, TripleStore
from kgneg.models import MarginLossConfig, ModelParams, SparseGrads, batch_loss_gradients
from kgneg.samplers import NearestNeighborSampler, Sampler

logger = logging.getLogger(__name__)

UNIT_NORM_EPS = 1e-12


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialisation, shuffling and sampling, all derived from one seed."""
    init, shuffle, sample = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init),
        "shuffle": np.random.default_rng(shuffle),
        "sample": np.random.default_rng(sample),
    }


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m_ent: np.ndarray | None = field(default=None, repr=False)
    v_ent: np.ndarray | None = field(default=None, repr=False)
    m_rel: np.ndarray | None = field(default=None, repr=False)
    v_rel: np.ndarray | None = field(default=None, repr=False)
    # rows that have ever received a gradient; moments elsewhere are undefined
    seen_ent: np.ndarray | None = field(default=None, repr=False)
    seen_rel: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")

    def _ensure(self, params: ModelParams) -> None:
        if self.m_ent is None:
            self.m_ent = np.zeros_like(params.entities)
            self.v_ent = np.zeros_like(params.entities)
            self.m_rel = np.zeros_like(params.relations)
            self.v_rel = np.zeros_like(params.relations)
            self.seen_ent = np.zeros(params.n_entities, dtype=bool)
            self.seen_rel = np.zeros(params.n_relations, dtype=bool)


def _adam_rows(state: AdamState, table, m, v, ids, g, l2_lambda) -> None:
    m[ids] = state.beta1 * m[ids] + (1 - state.beta1) * g
    v[ids] = state.beta2 * v[ids] + (1 - state.beta2) * g * g
    m_hat = m[ids] / (1 - state.beta1**state.step_count)
    v_hat = v[ids] / (1 - state.beta2**state.step_count)
    old = table[ids]
    table[ids] = old - state.lr * m_hat / (np.sqrt(v_hat) + state.eps) - state.lr * l2_lambda * old


def project_unit_norm(table: np.ndarray, ids: np.ndarray | None = None) -> None:
    rows = table if ids is None else table[ids]
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    rows = rows / np.maximum(norms, UNIT_NORM_EPS)
    if ids is None:
        table[...] = rows
    else:
        table[ids] = rows


def adam_step(state: AdamState, params: ModelParams, grads: SparseGrads, l2_lambda: float = 0.0):
    """One bias-corrected Adam update of the touched rows, in place.

    Order: Adam step, decoupled decay ``theta -= lr * l2_lambda * theta``
    (both from the pre-step value), then unit-norm projection of touched
    entity rows.  Relation parameters are never projected.
    """
    if not (np.all(np.isfinite(grads.entity_grads)) and np.all(np.isfinite(grads.relation_grads))):
        raise OptimizerError("non-finite gradient; update rejected")
    state._ensure(params)
    state.step_count += 1
    if grads.entity_ids.size:
        state.seen_ent[grads.entity_ids] = True
        _adam_rows(state, params.entities, state.m_ent, state.v_ent, grads.entity_ids, grads.entity_grads, l2_lambda)
        project_unit_norm(params.entities, grads.entity_ids)
    if grads.relation_ids.size:
        state.seen_rel[grads.relation_ids] = True
        _adam_rows(state, params.relations, state.m_rel, state.v_rel, grads.relation_ids, grads.relation_grads, l2_lambda)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    n_s: int = 1
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 3
    eval_every: int = 1
    seed: int = 0
    fine_tune_epochs: int = 5
    dev_sample: int | None = 1000
    eval_filter: tuple[str, ...] = SPLITS

    def __post_init__(self):
        if self.n_s < 1:
            raise ValueError("n_s must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    dev_mrr: float
    elapsed_seconds: float


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_mrr: float = float("nan")

    def __len__(self) -> int:
        return len(self.epochs)

    def rows(self, with_time: bool = True) -> list[tuple]:
        if with_time:
            return [(e.epoch, e.mean_loss, e.dev_mrr, e.elapsed_seconds) for e in self.epochs]
        return [(e.epoch, e.mean_loss, e.dev_mrr) for e in self.epochs]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss", "dev_mrr", "elapsed_seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.mean_loss), "" if math.isnan(e.dev_mrr) else repr(e.dev_mrr), f"{e.elapsed_seconds:.3f}"])
        return path


def train(
    store: TripleStore,
    params: ModelParams,
    sampler: Sampler,
    cfg: TrainConfig,
    adam: AdamState | None = None,
    loss_cfg: MarginLossConfig = MarginLossConfig(),
) -> tuple[ModelParams, TrainingLog]:
    """Train on ``store``'s train split; return the best-dev checkpoint and the log.

    The input ``params`` are not modified.  Validation MRR is filtered and
    computed every ``cfg.eval_every`` epochs on a fixed subset of at most
    ``cfg.dev_sample`` dev triples; training stops after ``cfg.patience``
    evaluations without improvement.  Without a dev split the final
    parameters are returned.
    """
    params = params.copy()
    adam = adam if adam is not None else AdamState()
    streams = seed_streams(cfg.seed)
    triples = store.splits["train"]
    has_dev = len(store.splits["dev"]) > 0
    log = TrainingLog()
    best = params.copy()
    best_mrr = -math.inf
    stale = 0
    t0 = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        order = streams["shuffle"].permutation(len(triples))
        total = 0.0
        for start in range(0, len(triples), cfg.batch_size):
            batch = triples[order[start : start + cfg.batch_size]]
            try:
                negs, owner = sampler.sample_batch(batch, cfg.n_s, streams["sample"])
            except SamplerError as exc:
                raise SamplerError(f"epoch {epoch}: {exc}") from exc
            grads = batch_loss_gradients(params, batch, negs, owner, loss_cfg.margin)
            total += grads.loss
            adam_step(adam, params, grads, loss_cfg.l2_lambda)
        mean_loss = total / max(len(triples), 1)

        dev_mrr = float("nan")
        if has_dev and epoch % cfg.eval_every == 0:
            dev_mrr = evaluate(
                params,
                store,
                "dev",
                filter_splits=cfg.eval_filter,
                max_triples=cfg.dev_sample,
                rng=np.random.default_rng(cfg.seed),
            ).mrr
            if dev_mrr > best_mrr:
                best, best_mrr, stale = params.copy(), dev_mrr, 0
                log.best_epoch, log.best_dev_mrr = epoch, dev_mrr
            else:
                stale += 1
        log.epochs.append(EpochRecord(epoch, mean_loss, dev_mrr, time.perf_counter() - t0))
        logger.info("epoch %d loss %.4f dev_mrr %.4f", epoch, mean_loss, dev_mrr)
        if stale >= cfg.patience:
            logger.info("early stop at epoch %d (best %d)", epoch, log.best_epoch)
            break

    if best_mrr == -math.inf:
        return params, log
    return best, log


def fine_tune(
    store: TripleStore,
    params: ModelParams,
    sampler: NearestNeighborSampler,
    cfg: TrainConfig,
    adam: AdamState | None = None,
    loss_cfg: MarginLossConfig = MarginLossConfig(),
) -> tuple[ModelParams, TrainingLog]:
    """Continue training pretrained ``params`` for exactly ``cfg.fine_tune_epochs`` epochs.

    Early stopping is disabled; the best-dev epoch among those run is returned.
    """
    if not isinstance(sampler, NearestNeighborSampler):
        raise TypeError("fine_tune needs an embedding-based (nn / nmiss) sampler")
    ft_cfg = replace(cfg, max_epochs=cfg.fine_tune_epochs, patience=cfg.fine_tune_epochs + 1)
    return train(store, params, sampler, ft_cfg, adam, loss_cfg)
