"""Command line entry point: ``kgneg {train,eval,stats,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from kgneg.errors import KgError
from kgneg.evaluation import COMPARATORS, evaluate
from kgneg.experiment import ExperimentConfig, _check_vocab, emit_report, run_experiment
from kgneg.graph import compute_stats, load_dataset, write_stats
from kgneg.models import load_checkpoint
from kgneg.samplers import SAMPLER_TOKENS

logger = logging.getLogger("kgneg")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgneg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train and test over an n_s grid")
    tr.add_argument("--config", help="key=value config file; flags override it")
    tr.add_argument("--data", help="directory with train.txt, valid.txt (or dev.txt), test.txt")
    tr.add_argument("--model", choices=["rescal", "transe", "distmult", "complex"])
    tr.add_argument("--sampler", choices=SAMPLER_TOKENS)
    tr.add_argument("--num-negatives", type=_int_list, help="n_s or comma-separated grid (default 1,2,5,10,20,50,100)")
    tr.add_argument("--dim", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--l2", type=float)
    tr.add_argument("--margin", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--frozen", help="checkpoint of the frozen negative-sampling model (nn, nmiss)")
    tr.add_argument("--init", help="checkpoint to fine-tune from (nn, nmiss); defaults to --frozen")
    tr.add_argument("--types", help="type catalog file (typed)")
    tr.add_argument("--dataset", choices=["freebase", "wordnet"], help="fill unset lr/l2 from tuned presets")
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--max-epochs", type=int)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--eval-every", type=int)
    tr.add_argument("--fine-tune-epochs", type=int)
    tr.add_argument("--dev-sample", type=int)
    tr.add_argument("--hits", type=_int_list)
    tr.add_argument("--comparator", choices=COMPARATORS)
    tr.add_argument("--out")

    ev = sub.add_parser("eval", help="filtered evaluation of a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=["dev", "test"])
    ev.add_argument("--hits", type=_int_list, default=(1, 10))
    ev.add_argument("--comparator", choices=COMPARATORS, default="inclusive")
    ev.add_argument("--out", help="also write report CSVs here")

    st = sub.add_parser("stats", help="dataset statistics")
    st.add_argument("--data", required=True)
    st.add_argument("--out", help="write relation_stats.csv and entity_stats.csv here")

    sy = sub.add_parser("synth", help="write the small synthetic typed graph")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    return parser


_TRAIN_KEYS = [
    "data", "model", "sampler", "num_negatives", "dim", "lr", "l2", "margin", "seed", "frozen", "init",
    "types", "dataset", "batch_size", "max_epochs", "patience", "eval_every", "fine_tune_epochs",
    "dev_sample", "hits", "comparator", "out",
]


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _TRAIN_KEYS if getattr(args, k, None) is not None}
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    return ExperimentConfig.from_mapping(overrides)


def cmd_train(args) -> int:
    cfg = config_from_args(args).validate()
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "config.txt").write_text(cfg.to_text())
    for rep in run_experiment(cfg):
        hits = " ".join(f"hits@{k}={v:.4f}" for k, v in rep.hits.items())
        print(f"{rep.model} {rep.sampler} n_s={rep.n_s} mrr={rep.mrr:.4f} {hits}")
    return 0


def cmd_eval(args) -> int:
    store = load_dataset(args.data)
    ckpt = load_checkpoint(args.ckpt)
    _check_vocab(ckpt, store, args.ckpt)
    rep = evaluate(
        ckpt.params, store, args.split, compute_stats(store), ks=args.hits, comparator=args.comparator,
        model=ckpt.params.family.value,
    )
    print(json.dumps(rep.summary(), indent=2))
    if args.out:
        emit_report([rep], args.out)
    return 0


def cmd_stats(args) -> int:
    store = load_dataset(args.data)
    stats = compute_stats(store)
    print(f"entities\t{store.n_entities}")
    print(f"relations\t{store.n_relations}")
    for name, arr in store.splits.items():
        print(f"{name}\t{len(arr)}")
    print(f"mean_degree_train\t{stats.mean_degree:.4f}")
    print(f"mean_incidence_train\t{stats.mean_incidence:.4f}")
    for n, rels in stats.oom_groups.items():
        print(f"G{n}\t{len(rels)}")
    if args.out:
        for p in write_stats(stats, store, args.out):
            print(f"wrote {p}")
    return 0


def cmd_synth(args) -> int:
    from kgneg.synthetic import write_typed_kg

    print(write_typed_kg(args.out, seed=args.seed))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "stats": cmd_stats, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (KgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
