"""Command-line entry point.

Exit statuses:

    0  success
    2  configuration error (bad flag, config file or key)
    3  data or I/O error (unreadable or corrupt dataset / checkpoint, dim mismatch)
    4  numeric abort (a loss component became non-finite)
    5  gradient check failure
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, load_config
from .contrastive import write_prototypes
from .errors import ConfigError, CorruptDatasetError, NonFiniteError, TrainingAbort
from .metrics import write_reports
from .numeric import Tensor, no_grad, precision
from .sarl import write_attention
from .training import Trainer, load_trainer
from .verify import run_grad_check

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

log = logging.getLogger("sadcl")


class DataError(Exception):
    pass


# -- shared helpers ------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="run seed (u64)")
    p.add_argument("--out", help="output location")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="pin BLAS to one thread (already the default)")
    p.add_argument("--precision", choices=("train", "high"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    text = cfg.to_text() + "".join(f"{item}\n" for item in args.set)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    cfg = RunConfig.from_text(text, "<command line>")
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be a nonnegative integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.deterministic:
        changes["deterministic"] = True
    if args.precision:
        changes["precision"] = args.precision
    if getattr(args, "no_sscl", False):
        changes["sscl_on"] = False
    if getattr(args, "no_pscl", False):
        changes["pscl_on"] = False
    if getattr(args, "dataset", None):
        changes["dataset"] = args.dataset
    return cfg.replace(**changes) if changes else cfg


def load_dataset(cfg: RunConfig) -> data_mod.Dataset:
    if cfg.dataset:
        try:
            return data_mod.load(cfg.dataset)
        except (CorruptDatasetError, OSError) as exc:
            raise DataError(str(exc)) from exc
    return data_mod.generate(cfg.data_spec())


def _trainer_from_checkpoint(args) -> tuple[Trainer, data_mod.Dataset]:
    from . import archive
    from .training import CHECKPOINT_MAGIC

    try:
        meta, _ = archive.load(args.checkpoint, CHECKPOINT_MAGIC)
    except (CorruptDatasetError, OSError) as exc:
        raise DataError(str(exc)) from exc
    cfg = RunConfig.from_dict(meta["config"])
    if args.dataset:
        cfg = cfg.replace(dataset=args.dataset)
    dataset = load_dataset(cfg)
    try:
        return load_trainer(args.checkpoint, dataset, dataset=cfg.dataset), dataset
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _split_rows(dataset: data_mod.Dataset, split: str):
    """Yield ``(image ids, grids, labels)`` for the requested split; ids are global."""
    n_train = len(dataset.train_y)
    if split in ("train", "all"):
        yield np.arange(n_train), dataset.train_x, dataset.train_y
    if split in ("test", "all"):
        yield n_train + np.arange(len(dataset.test_y)), dataset.test_x, dataset.test_y


# -- commands --------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.resume:
        trainer, _ = _trainer_from_checkpoint(argparse.Namespace(checkpoint=args.resume, dataset=args.dataset))
        out = Path(args.out or trainer.cfg.out)
    else:
        cfg = resolve_config(args)
        trainer = Trainer(cfg, load_dataset(cfg))
        out = Path(cfg.out)

    def progress(s):
        all_r, top_r = s.reports
        print(f"epoch {s.epoch:3d}  loss {s.mean_loss:.4f}  mAP {all_r.mAP:.4f}  "
              f"CF1 {all_r.CF1:.4f}  OF1 {all_r.OF1:.4f}  top3 CF1 {top_r.CF1:.4f}", flush=True)

    summaries = trainer.run(out, stop_after=args.stop_after_epoch, progress=progress)
    if summaries:
        _print_reports(summaries[-1].reports)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    trainer, _ = _trainer_from_checkpoint(args)
    reports = trainer.evaluate(args.split)
    _print_reports(reports)
    if args.out:
        write_reports(args.out, list(reports))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    report = run_grad_check(seed=args.seed, instances=args.instances)
    for line in report.lines():
        print(line)
    print(f"elapsed {report.seconds:.1f}s")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    spec = cfg.data_spec()
    if args.seed is not None:
        spec = data_mod.SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    if not args.out:
        raise ConfigError("gen-data needs --out <file>")
    dataset = data_mod.generate(spec)
    try:
        digest = data_mod.save(dataset, args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"{args.out} sha256={digest} train={len(dataset.train_y)} test={len(dataset.test_y)} "
          f"cardinality={dataset.mean_cardinality('train'):.3f}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    trainer, dataset = _trainer_from_checkpoint(args)
    model = trainer.model
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d_out = trainer.cfg.d_proj
    count = 0
    with precision(trainer.cfg.precision), no_grad(), (out / "embeddings.csv").open("w") as fh:
        fh.write(",".join(["image_id", "class_id"] + [f"v_{k}" for k in range(d_out)]) + "\n")
        for ids, grids, labels in _split_rows(dataset, args.split):
            for start in range(0, len(ids), 128):
                sl = slice(start, start + 128)
                q, _ = model.features(grids[sl].astype(trainer.dtype))
                x = model.projection(q).data
                for i, j in zip(*np.nonzero(labels[sl] == 1)):
                    fh.write(",".join([str(int(ids[sl][i])), str(int(j))] + [repr(float(v)) for v in x[i, j]]) + "\n")
                    count += 1
        protos, counts = trainer.prototypes.export_view()
        defined = np.flatnonzero(counts > 0)
        projected = {}
        if defined.size:
            c_out = model.projection(Tensor(protos[defined].astype(trainer.dtype))).data
            projected = {int(j): c_out[k] for k, j in enumerate(defined)}
    write_prototypes(out / "prototypes.csv", protos, counts, projected, d_out)
    print(f"wrote {count} embeddings and {defined.size} prototypes to {out}")
    return EXIT_OK


def cmd_export_attention(args) -> int:
    trainer, dataset = _trainer_from_checkpoint(args)
    spec = dataset.spec
    ids, maps = [], []
    with precision(trainer.cfg.precision):
        for split_ids, grids, _ in _split_rows(dataset, args.split):
            _, attn = trainer.model.predict(grids.astype(trainer.dtype))
            ids.append(split_ids)
            maps.append(attn)
    write_attention(args.out, np.concatenate(ids), np.concatenate(maps), spec.height, spec.width)
    print(f"wrote attention maps for {sum(len(i) for i in ids)} images to {args.out}")
    return EXIT_OK


def _print_reports(reports) -> None:
    print(f"{'mode':6s} {'mAP':>7s} {'CP':>7s} {'CR':>7s} {'CF1':>7s} {'OP':>7s} {'OR':>7s} {'OF1':>7s}")
    for r in reports:
        print(f"{r.mode:6s} " + " ".join(f"{getattr(r, c):7.4f}" for c in ("mAP", "CP", "CR", "CF1", "OP", "OR", "OF1")))


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sadcl", description="Label-level contrastive multi-label classifier")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write logs, metrics and a checkpoint to --out")
    _add_run_flags(p)
    p.add_argument("--dataset", help="dataset file; otherwise the config's synthetic spec is generated")
    p.add_argument("--no-sscl", action="store_true", help="disable the sample-to-sample loss")
    p.add_argument("--no-pscl", action="store_true", help="disable the prototype-to-sample loss")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue a run from its checkpoint")
    p.add_argument("--stop-after-epoch", type=int, metavar="E", help="stop once E epochs are complete")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="All and Top-3 metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="metric report CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of every loss component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file from the config's data_* keys")
    _add_run_flags(p)
    p.set_defaults(func=cmd_gen_data)

    for name, func, what in (("export-embeddings", cmd_export_embeddings, "output directory"),
                             ("export-attention", cmd_export_attention, "output file")):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset")
        p.add_argument("--split", choices=("train", "test", "all"), default="all")
        p.add_argument("--out", required=True, help=what)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAbort, NonFiniteError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorruptDatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
