"""Training loop, checkpoints and run outputs.

Per iteration, in this order:

1. label-level features and cross-attention from the grids
2. classifier scores
3. projection of the features
4. memory-bank snapshot
5. sample-to-sample loss
6. prototype update from this pass's features and scores
7. prototype projection
8. prototype-to-sample loss
9. joint loss, backward, AdamW step
10. push of the batch's activated projections into the memory bank

The bank push comes last so a batch never contrasts against its own copies.
Steps 3-5 and 7-8 are skipped when both contrastive terms are disabled.
Prototype sums reset at the start of every epoch.
"""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import archive
from .config import RunConfig, save_config
from .contrastive import MemoryBank, PrototypeBank, Snapshot, project_prototypes, pscl_loss, sscl_loss
from .data import Dataset, batches
from .metrics import EvalConfig, MetricReport, evaluate, write_reports
from .model import SADCLModel
from .numeric import PRECISIONS, RngState, backward, precision
from .objective import LossReport, OneCycle, OptimizerState, bce_loss, optimizer_step, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SADCL-CHECKPOINT v1"
CHECKPOINT_VERSION = 1
LOSS_LOG_HEADER = "epoch,iteration,l_bce,l_s2s,l_p2s,l_total,lr"
EPOCH_LOG_HEADER = "epoch,mean_total_loss,mAP,CF1_all,OF1_all,CF1_top3,OF1_top3"

EVAL_MODES = (EvalConfig("all"), EvalConfig("topk", k=3))


@contextlib.contextmanager
def single_threaded(enabled: bool = True):
    """Pin BLAS to one thread so reductions keep a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


@dataclass
class EpochSummary:
    epoch: int
    mean_loss: float
    reports: tuple[MetricReport, ...]


class Trainer:
    def __init__(self, cfg: RunConfig, dataset: Dataset):
        self.cfg = cfg
        self.dataset = dataset
        spec = dataset.spec
        self.num_classes = spec.num_classes
        self.dtype = PRECISIONS[cfg.precision]
        self.rng = RngState(cfg.seed)
        with precision(cfg.precision):
            self.model = SADCLModel(cfg, spec.num_classes, spec.channels, spec.height, spec.width, self.rng.child(0))
        self.params = self.model.parameters()
        n = len(dataset.train_y)
        self.steps_per_epoch = math.ceil(n / cfg.batch_size)
        self.opt = OptimizerState(OneCycle(cfg.lr, cfg.epochs * self.steps_per_epoch, cfg.warmup), cfg.weight_decay)
        self.bank = MemoryBank(spec.num_classes, cfg.bank_capacity)
        self.prototypes = PrototypeBank(spec.num_classes, cfg.d, cfg.eps)
        self.snapshot_cap = cfg.snapshot_size or max(1, round(cfg.batch_size * dataset.mean_cardinality("train")))
        self.epoch = 0
        self.iteration = 0

    @property
    def contrastive(self) -> bool:
        return self.cfg.sscl_on or self.cfg.pscl_on

    # -- one iteration -------------------------------------------------------

    def train_step(self, idx: np.ndarray) -> LossReport:
        cfg = self.cfg
        grids = self.dataset.train_x[idx].astype(self.dtype)
        targets = self.dataset.train_y[idx]
        q, _ = self.model.features(grids)
        scores = self.model.classifier(q)
        l_s2s = l_p2s = x = None
        if self.contrastive:
            x = self.model.projection(q)
            snapshot = self.bank.snapshot(self.snapshot_cap)
            if cfg.sscl_on:
                l_s2s = sscl_loss(x, targets, snapshot, cfg.tau)
        self.prototypes.update(q.data, targets, scores.data)
        if cfg.pscl_on:
            classes, c_out = project_prototypes(self.model.projection, self.prototypes, self.dtype)
            l_p2s = pscl_loss(classes, c_out, x, targets, snapshot, cfg.tau)
        l_bce = bce_loss(scores, targets)
        lr = self.opt.lr
        total, report = total_loss(l_bce, l_s2s, l_p2s, sscl_on=cfg.sscl_on, pscl_on=cfg.pscl_on,
                                   weights=(cfg.w_bce, cfg.w_s2s, cfg.w_p2s),
                                   iteration=self.iteration, epoch=self.epoch, lr=lr)
        backward(total)
        optimizer_step(self.params, self.opt)
        if x is not None:
            self.bank.push(x.data, targets, idx, self.iteration)
        self.iteration += 1
        return report

    # -- epochs ----------------------------------------------------------------

    def run(self, out_dir=None, stop_after: int | None = None, progress=None) -> list[EpochSummary]:
        """Train from the current epoch up to ``cfg.epochs`` (or ``stop_after`` epochs total).

        With ``out_dir``, appends to ``loss_log.csv`` and ``epoch_log.csv`` there,
        writes the resolved config, the final metric report and ``checkpoint.bin``.
        """
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            save_config(cfg, out / "config.txt")
            loss_log = _open_log(out / "loss_log.csv", LOSS_LOG_HEADER)
            epoch_log = _open_log(out / "epoch_log.csv", EPOCH_LOG_HEADER)
        last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
        summaries = []
        try:
            with single_threaded(cfg.deterministic), precision(cfg.precision):
                while self.epoch < last:
                    self.prototypes.reset_epoch()
                    losses = []
                    n = len(self.dataset.train_y)
                    for idx in batches(n, cfg.batch_size, cfg.seed, self.epoch):
                        r = self.train_step(idx)
                        losses.append(r.l_total)
                        if out is not None:
                            loss_log.write(format_loss_record(r) + "\n")
                    reports = self.evaluate("test")
                    summary = EpochSummary(self.epoch, float(np.mean(losses)), reports)
                    summaries.append(summary)
                    if out is not None:
                        all_r, top_r = reports
                        epoch_log.write(",".join([str(self.epoch), repr(summary.mean_loss), repr(all_r.mAP),
                                                  repr(all_r.CF1), repr(all_r.OF1), repr(top_r.CF1), repr(top_r.OF1)]) + "\n")
                        loss_log.flush()
                        epoch_log.flush()
                    log.info("epoch %d  loss %.4f  mAP %.4f", self.epoch, summary.mean_loss, reports[0].mAP)
                    if progress is not None:
                        progress(summary)
                    self.epoch += 1
        finally:
            if out is not None:
                loss_log.close()
                epoch_log.close()
        if out is not None:
            if summaries:
                write_reports(out / "metrics.csv", list(summaries[-1].reports))
            self.save_checkpoint(out / "checkpoint.bin")
        return summaries

    def evaluate(self, split: str = "test") -> tuple[MetricReport, ...]:
        x, y = self.dataset.split(split)
        with precision(self.cfg.precision):
            scores, _ = self.model.predict(x.astype(self.dtype))
        return tuple(evaluate(scores, y, mode) for mode in EVAL_MODES)

    # -- checkpoints -------------------------------------------------------------

    def checkpoint_arrays(self) -> tuple[dict, dict]:
        arrays = {}
        for name, p in self.model.named_parameters():
            arrays[f"param/{name}"] = p.data
            if name in self.opt.m:
                arrays[f"adam_m/{name}"] = self.opt.m[name]
                arrays[f"adam_v/{name}"] = self.opt.v[name]
        for key, value in self.prototypes.state().items():
            arrays[f"proto/{key}"] = value
        bank = self.bank.state()
        arrays["bank/vectors"] = bank["vectors"]
        arrays["bank/meta"] = bank["meta"]
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "data_spec": self.dataset.spec.to_dict(),
            "epoch": self.epoch,
            "iteration": self.iteration,
            "opt_step": self.opt.step,
            "bank_seq": bank["seq"],
            "rng_state": self.rng.get_state(),
        }
        return meta, arrays

    def save_checkpoint(self, path) -> str:
        meta, arrays = self.checkpoint_arrays()
        return archive.save(path, CHECKPOINT_MAGIC, meta, arrays)

    def load_checkpoint(self, path) -> None:
        meta, arrays = archive.load(path, CHECKPOINT_MAGIC)
        restore(self, meta, arrays)


def restore(trainer: Trainer, meta: dict, arrays: dict) -> None:
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    trainer.model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    trainer.opt.m = {k[len("adam_m/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")}
    trainer.opt.v = {k[len("adam_v/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")}
    trainer.opt.step = meta["opt_step"]
    trainer.prototypes.load_state({k[len("proto/"):]: v for k, v in arrays.items() if k.startswith("proto/")})
    trainer.bank.load_state({"vectors": arrays["bank/vectors"], "meta": arrays["bank/meta"], "seq": meta["bank_seq"]})
    trainer.rng.set_state(meta["rng_state"])
    trainer.epoch = meta["epoch"]
    trainer.iteration = meta["iteration"]


def load_trainer(path, dataset: Dataset, /, **overrides) -> Trainer:
    """Rebuild a trainer (model, optimizer, banks) from a checkpoint file."""
    meta, arrays = archive.load(path, CHECKPOINT_MAGIC)
    cfg = RunConfig.from_dict(meta["config"])
    if overrides:
        cfg = cfg.replace(**overrides)
    spec = dataset.spec
    ck = meta["data_spec"]
    dims = ("num_classes", "height", "width", "channels")
    if any(ck[k] != getattr(spec, k) for k in dims):
        raise ValueError("checkpoint was trained on {} but dataset has {}".format(
            {k: ck[k] for k in dims}, {k: getattr(spec, k) for k in dims}))
    trainer = Trainer(cfg, dataset)
    restore(trainer, meta, arrays)
    return trainer


def format_loss_record(r: LossReport) -> str:
    return ",".join([str(r.epoch), str(r.iteration), repr(r.l_bce), repr(r.l_s2s), repr(r.l_p2s),
                     repr(r.l_total), repr(r.lr)])


def _open_log(path: Path, header: str):
    fresh = not path.exists()
    fh = path.open("a")
    if fresh:
        fh.write(header + "\n")
    return fh
