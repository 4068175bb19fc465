"""Experiment configuration, the n_s grid runner and report files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from kgneg.errors import ConfigError
from kgneg.evaluation import COMPARATORS, MetricsReport, evaluate, slice_label
from kgneg.graph import TripleStore, compute_stats, load_dataset, load_type_catalog
from kgneg.models import Family, MarginLossConfig, init_params, load_checkpoint, save_checkpoint
from kgneg.optim import AdamState, TrainConfig, fine_tune, seed_streams, train
from kgneg.samplers import SAMPLER_TOKENS, make_sampler

logger = logging.getLogger(__name__)

DEFAULT_GRID = (1, 2, 5, 10, 20, 50, 100)
DEFAULT_LR = 0.001

# Tuned (lr, l2) per dataset and model.  WordNet rows depend on n_s.
_FREEBASE = {
    "complex": (0.001, 1.31e-06),
    "distmult": (0.001, 4.93e-06),
    "rescal": (0.001, 0.0002084),
    "transe": (0.001, 0.00024036),
}
_WORDNET_L2 = {
    "complex": 2.82e-05,
    "distmult": 3.12e-06,
    "rescal": 7.48e-05,
    "transe": 0.0001863777692,
}


def preset_hparams(dataset: str, model: str, n_s: int) -> tuple[float, float]:
    """Learning rate and L2 coefficient for a dataset preset."""
    model = Family(model).value
    if dataset == "freebase":
        return _FREEBASE[model]
    if dataset == "wordnet":
        return (0.005 if n_s < 10 else 0.01), _WORDNET_L2[model]
    raise ConfigError([f"unknown dataset preset {dataset!r} (expected freebase or wordnet)"])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = ""
    model: str = "transe"
    sampler: str = "random"
    num_negatives: tuple[int, ...] = DEFAULT_GRID
    dim: int = 100
    lr: float | None = None
    l2: float | None = None
    margin: float = 1.0
    seed: int = 0
    frozen: str | None = None
    init: str | None = None
    types: str | None = None
    dataset: str | None = None
    out: str = "runs"
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 3
    eval_every: int = 1
    fine_tune_epochs: int = 5
    dev_sample: int | None = 1000
    hits: tuple[int, ...] = (1, 10)
    comparator: str = "inclusive"

    # -- key=value text form -------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError([f"line {lineno}: expected key=value, got {raw!r}"])
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        problems = [f"unknown key {k!r}" for k in values if k not in known]
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                continue
            try:
                kwargs[key] = _coerce(known[key].type, val)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    def fingerprint(self) -> str:
        text = "".join(line for line in self.to_text().splitlines(keepends=True) if not line.startswith("out="))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    # -- validation ----------------------------------------------------------

    def type_file(self) -> Path | None:
        if self.types:
            return Path(self.types)
        guess = Path(self.data) / "types.txt"
        return guess if self.data and guess.exists() else None

    def problems(self) -> list[str]:
        out = []
        if not self.data:
            out.append("data: a dataset directory is required")
        if self.model not in {f.value for f in Family}:
            out.append(f"model: {self.model!r} is not one of rescal, transe, distmult, complex")
        if self.sampler not in SAMPLER_TOKENS:
            out.append(f"sampler: {self.sampler!r} is not one of {', '.join(SAMPLER_TOKENS)}")
        if not self.num_negatives or any(n < 1 for n in self.num_negatives):
            out.append("num_negatives: need at least one value, all >= 1")
        if self.dim < 1:
            out.append("dim: must be >= 1")
        if not self.margin > 0:
            out.append("margin: must be > 0")
        if self.lr is not None and not self.lr > 0:
            out.append("lr: must be > 0")
        if self.l2 is not None and self.l2 < 0:
            out.append("l2: must be >= 0")
        if self.batch_size < 1:
            out.append("batch_size: must be >= 1")
        if self.max_epochs < 0 or self.patience < 1 or self.eval_every < 1 or self.fine_tune_epochs < 0:
            out.append("max_epochs/fine_tune_epochs must be >= 0; patience/eval_every must be >= 1")
        if self.sampler in ("nn", "nmiss") and not self.frozen:
            out.append(f"frozen: sampler {self.sampler!r} needs a frozen negative-sampling checkpoint")
        if self.sampler == "typed" and self.type_file() is None:
            out.append("types: typed sampling needs a type file (--types or <data>/types.txt)")
        if self.dataset is not None and self.dataset not in ("freebase", "wordnet"):
            out.append(f"dataset: unknown preset {self.dataset!r} (expected freebase or wordnet)")
        if not self.hits or any(k < 1 for k in self.hits):
            out.append("hits: need at least one K >= 1")
        if self.comparator not in COMPARATORS:
            out.append(f"comparator: must be one of {', '.join(COMPARATORS)}")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def hparams(self, n_s: int) -> tuple[float, float]:
        """``(lr, l2)`` for one grid point; explicit values always win over presets."""
        lr, l2 = self.lr, self.l2
        if self.dataset is not None and (lr is None or l2 is None):
            p_lr, p_l2 = preset_hparams(self.dataset, self.model, n_s)
            lr = p_lr if lr is None else lr
            l2 = p_l2 if l2 is None else l2
        return (DEFAULT_LR if lr is None else lr), (0.0 if l2 is None else l2)


def _coerce(annotation: str, value):
    if not isinstance(value, str):
        return tuple(value) if isinstance(value, list) else value
    ann = str(annotation)
    optional = "None" in ann
    if value == "" and optional:
        return None
    if ann.startswith("tuple"):
        return tuple(int(v) for v in value.split(",") if v.strip())
    if ann.startswith("int"):
        return int(value)
    if ann.startswith("float"):
        return float(value)
    return value


def _run_name(cfg: ExperimentConfig, n_s: int) -> str:
    return f"{cfg.model}_{cfg.sampler}_ns{n_s}"


def _starting_params(cfg: ExperimentConfig, store: TripleStore, frozen, streams):
    if cfg.sampler not in ("nn", "nmiss"):
        return init_params(cfg.model, cfg.dim, store.n_entities, store.n_relations, streams["init"])
    if cfg.init:
        return load_checkpoint(cfg.init).params
    if frozen.family.value == cfg.model and frozen.dim == cfg.dim:
        return frozen.copy()
    raise ConfigError([
        f"init: fine-tuning a {cfg.model} model needs --init when the frozen model is {frozen.family.value} (dim {frozen.dim})"
    ])


def _check_vocab(ckpt, store: TripleStore, path) -> None:
    p = ckpt.params
    if p.n_entities != store.n_entities or p.n_relations != store.n_relations:
        raise ConfigError([f"{path}: checkpoint has {p.n_entities} entities / {p.n_relations} relations, data has {store.n_entities} / {store.n_relations}"])
    if ckpt.entity_names is not None and ckpt.entity_names != store.entities.names:
        raise ConfigError([f"{path}: checkpoint entity dictionary differs from the dataset's"])


def run_experiment(cfg: ExperimentConfig) -> list[MetricsReport]:
    """Train (or fine-tune) and test one model/sampler pair for every n_s in the grid.

    Checkpoints, training logs and the cumulative report files are written
    after each grid point, so a failure keeps everything finished so far.
    """
    cfg.validate()
    out = Path(cfg.out)
    store = load_dataset(cfg.data)
    stats = compute_stats(store)
    catalog = load_type_catalog(cfg.type_file(), store) if cfg.type_file() else None
    frozen = None
    if cfg.frozen:
        ckpt = load_checkpoint(cfg.frozen)
        _check_vocab(ckpt, store, cfg.frozen)
        frozen = ckpt.params.frozen()
    fingerprint = cfg.fingerprint()
    loss_base = MarginLossConfig(margin=cfg.margin)

    sampler = None
    reports: list[MetricsReport] = []
    for n_s in cfg.num_negatives:
        lr, l2 = cfg.hparams(n_s)
        logger.info("grid point n_s=%d lr=%g l2=%g", n_s, lr, l2)
        streams = seed_streams(cfg.seed)
        params = _starting_params(cfg, store, frozen, streams)
        if sampler is None:  # the ball tree is built once per run
            sampler = make_sampler(cfg.sampler, store, catalog=catalog, frozen=frozen)
        tcfg = TrainConfig(
            n_s=n_s,
            batch_size=cfg.batch_size,
            max_epochs=cfg.max_epochs,
            patience=cfg.patience,
            eval_every=cfg.eval_every,
            seed=cfg.seed,
            fine_tune_epochs=cfg.fine_tune_epochs,
            dev_sample=cfg.dev_sample,
        )
        loss_cfg = dataclasses.replace(loss_base, l2_lambda=l2)
        runner = fine_tune if cfg.sampler in ("nn", "nmiss") else train
        params, log = runner(store, params, sampler, tcfg, AdamState(lr=lr), loss_cfg)

        name = _run_name(cfg, n_s)
        save_checkpoint(out / "checkpoints" / f"{name}.npz", params, store.entities.names, store.relations.names)
        log.to_csv(out / "logs" / f"{name}.csv")
        report = evaluate(
            params, store, "test", stats, ks=cfg.hits, comparator=cfg.comparator,
            config_fingerprint=fingerprint, model=cfg.model, sampler=cfg.sampler, n_s=n_s, seed=cfg.seed,
        )
        reports.append(report)
        emit_report(reports, out)
        logger.info("n_s=%d test mrr=%.4f", n_s, report.mrr)
    return reports


METRIC_COLUMNS = ["model", "sampler", "n_s", "split", "metric", "slice", "value", "seed", "fingerprint"]


def _num(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ""


def _metric_rows(rep: MetricsReport, label: str, mrr_value: float, hits: dict) -> list[list]:
    base = [rep.model, rep.sampler, rep.n_s, rep.split]
    tail = [rep.seed, rep.config_fingerprint]
    rows = [base + ["mrr", label, _num(mrr_value)] + tail]
    for k in sorted(hits):
        rows.append(base + [f"hits@{k}" if rep.comparator == "inclusive" else f"hits@{k}_strict", label, _num(hits[k])] + tail)
    return rows


def emit_report(reports: Sequence[MetricsReport], out_dir: str | Path) -> dict[str, Path]:
    """Write ``metrics.csv``, ``slices.csv`` and ``plot_series.csv`` under ``out_dir``.

    Output depends only on the reports, so reruns are byte-identical.
    """
    if not reports:
        raise ValueError("need at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "slices": out / "slices.csv", "plot": out / "plot_series.csv"}

    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for rep in reports:
            w.writerows(_metric_rows(rep, "all", rep.mrr, rep.hits))

    with open(paths["slices"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS + ["count"])
        for rep in reports:
            for g in sorted(rep.per_slice):
                sm = rep.per_slice[g]
                for row in _metric_rows(rep, slice_label(g), sm.mrr, dict(sm.hits)):
                    w.writerow(row + [sm.count])

    series = sorted(((r.model, r.sampler, r.n_s, r.mrr, r.seed, r.config_fingerprint) for r in reports), key=lambda x: x[:3])
    with open(paths["plot"], "w", newline="") as fh:
        fh.write("# x=n_s (logarithmic scale), y=test MRR; one series per (model, sampler)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "sampler", "n_s", "mrr", "seed", "fingerprint"])
        for model, sampler, n_s, value, seed, fp in series:
            w.writerow([model, sampler, n_s, _num(value), seed, fp])
    return paths
