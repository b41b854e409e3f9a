"""Contrastive training loop with validation-based checkpoint retention."""
import csv
import logging
import math
import os
import shutil
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, NonFiniteLossError
from ..moe.checkpoint import load_state, read_checkpoint, save_checkpoint
from ..ndtensor import no_grad
from ..objectives import LossConfig, importance, importance_loss, nt_xent, total_loss
from .augment import AugmentConfig, augment_batch, normalize
from .optim import Adam, clip_grad_norm, cosine_lr
from .splits import holdout_split

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128  # views per step; two per origin image
    lr: float = 3e-4
    weight_decay: float = 1e-5
    min_lr: float = 1e-6
    clip_norm: float = 1.0
    seed: int = 0
    keep_top: int = 3
    val_fraction: float = 0.1
    temperature: float = 0.5
    w_importance: float = 0.1
    monitor_agreement: bool = True

    def __post_init__(self):
        if self.batch_size % 2 or self.batch_size < 4:
            raise ConfigError(f"batch_size counts paired views and must be even and >= 4, got {self.batch_size}")
        if not self.lr > self.min_lr > 0:
            raise ConfigError(f"need lr > min_lr > 0, got lr={self.lr}, min_lr={self.min_lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")

    @property
    def loss(self):
        return LossConfig(self.temperature, self.w_importance)

    @classmethod
    def full_scale(cls, seed=0):
        return cls(epochs=100, batch_size=512, seed=seed)


@dataclass
class TrainResult:
    model: object
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final_checkpoint: str = None


def routing_share(selected, num_experts):
    """Fraction of all (image, slot) routing assignments that land on each expert."""
    counts = np.bincount(np.asarray(selected).ravel(), minlength=num_experts)
    return counts / counts.sum()


def default_augment(model, corpus):
    mean, std = corpus.channel_stats()
    return AugmentConfig(size=model.config.input_size).with_stats(mean, std)


def validation_metrics(model, corpus, idx, cfg, aug, chunk=256):
    """Eval-mode loss terms, routing balance and view agreement on held-out images."""
    nt_sum = imp_sum = 0.0
    batches = 0
    agree = 0
    selected_all = []
    origins = chunk // 2
    with no_grad():
        for s in range(0, len(idx), origins):
            part = idx[s : s + origins]
            if len(part) < 2:
                continue
            views = augment_batch(corpus.images[part], [(cfg.seed, 0x7A1, int(i)) for i in part], aug)
            out = model.forward(views, mode="eval")
            v = model.proj(out.z, False)
            nt_sum += nt_xent(v, cfg.temperature).item()
            imp_sum += importance_loss(importance(out.weights), cfg.w_importance).item()
            batches += 1
            sel = out.selected
            agree += int((sel[0::2] == sel[1::2]).all(axis=1).sum())
            _, clean_sel, _ = model.route(normalize(corpus.images[part], aug))
            selected_all.append(clean_sel)
    share = routing_share(np.concatenate(selected_all), model.config.num_experts)
    nt = nt_sum / batches
    imp = imp_sum / batches
    return {
        "val_nt_xent": nt,
        "val_importance": imp,
        "val_total": nt + imp,
        "min_routing_share": float(share.min()),
        "topk_agreement": agree / len(idx),
    }


def _write_csv(path, rows, header):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] if not isinstance(r[h], float) else repr(r[h]) for h in header])


STEP_FIELDS = ["epoch", "step", "nt_xent", "importance", "total"]
EPOCH_FIELDS = ["epoch", "lr", "train_total", "val_nt_xent", "val_importance", "val_total", "min_routing_share", "topk_agreement"]


def train(model, corpus, cfg, augment_cfg=None, out_dir=None, resume=None, progress=None):
    """Train ``model`` on ``corpus``; writes checkpoints and CSV logs when ``out_dir`` is given.

    The run is a pure function of (model initialisation, corpus, cfg): the
    epoch shuffles, augmentation streams and gate noise are all keyed by
    ``cfg.seed``. ``resume`` names a checkpoint written by an earlier call with
    the same configuration; training continues after its recorded epoch.
    """
    aug = augment_cfg or default_augment(model, corpus)
    if aug.size != model.config.input_size:
        raise ConfigError(f"augmentation size {aug.size} != model input size {model.config.input_size}")
    train_idx, val_idx = holdout_split(len(corpus), cfg.val_fraction, cfg.seed)
    per_step = cfg.batch_size // 2
    steps_per_epoch = len(train_idx) // per_step
    if steps_per_epoch < 1:
        raise ConfigError(f"{len(train_idx)} training images cannot fill a batch of {per_step} origins")
    total_steps = cfg.epochs * steps_per_epoch
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    result = TrainResult(model)
    kept = []  # (val_total, epoch, file name inside out_dir)
    start_epoch = 0

    if resume is not None:
        _, meta, tensors = read_checkpoint(resume)
        load_state(model, tensors)
        opt.load_state_tensors(tensors)
        start_epoch = int(meta["epoch"]) + 1
        kept = [tuple(k) for k in meta.get("kept", [])]
        result.steps = list(meta.get("steps", []))
        result.epochs = list(meta.get("epochs", []))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if resume is not None:
            # resuming into a fresh directory: bring the ranked checkpoints along
            src = os.path.dirname(os.path.abspath(resume))
            for _, _, name in kept:
                here, there = os.path.join(out_dir, name), os.path.join(src, name)
                if not os.path.exists(here) and os.path.exists(there):
                    shutil.copyfile(there, here)

    for epoch in range(start_epoch, cfg.epochs):
        perm = train_idx[np.random.default_rng([cfg.seed, epoch]).permutation(len(train_idx))]
        epoch_losses = []
        for s in range(steps_per_epoch):
            step = epoch * steps_per_epoch + s
            origins = perm[s * per_step : (s + 1) * per_step]
            views = augment_batch(corpus.images[origins], [(cfg.seed, epoch, int(i)) for i in origins], aug)
            if step == 0 and resume is None:
                model.warmup_statistics(views)
            out = model.forward(views, mode="train", noise_key=(cfg.seed, step))
            loss, parts = total_loss(out.v, out.weights, cfg.loss)
            row = {
                "epoch": epoch,
                "step": step,
                "nt_xent": parts["nt_xent"].item(),
                "importance": parts["importance"].item(),
                "total": loss.item(),
            }
            if not math.isfinite(row["total"]):
                snap = None
                if out_dir:
                    snap = os.path.join(out_dir, f"nonfinite-step{step}.ckpt")
                    save_checkpoint(snap, model, meta={"epoch": epoch, "step": step, "loss": row})
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {step}: nt_xent={row['nt_xent']}, "
                    f"importance={row['importance']}",
                    snap,
                )
            model.zero_grad()
            loss.backward()
            clip_grad_norm([p.grad for p in params.values()], cfg.clip_norm)
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.min_lr)
            opt.step(lr)
            result.steps.append(row)
            epoch_losses.append(row["total"])

        metrics = validation_metrics(model, corpus, val_idx, cfg, aug)
        erow = {"epoch": epoch, "lr": cosine_lr((epoch + 1) * steps_per_epoch, total_steps, cfg.lr, cfg.min_lr),
                "train_total": float(np.mean(epoch_losses)), **metrics}
        result.epochs.append(erow)
        if progress:
            progress(erow)
        log.info("epoch %d: %s", epoch, erow)

        if out_dir:
            meta_base = {"train": asdict(cfg), "steps_per_epoch": steps_per_epoch,
                         "normalize": {"mean": list(aug.mean), "std": list(aug.std)}}
            name = f"epoch{epoch:03d}.ckpt"
            path = os.path.join(out_dir, name)
            candidate = (metrics["val_total"], epoch, name)
            ranked = sorted(kept + [candidate])
            if candidate in ranked[: cfg.keep_top]:
                for k in ranked[cfg.keep_top :]:
                    stale = os.path.join(out_dir, k[2])
                    if os.path.exists(stale):
                        os.remove(stale)
                kept = ranked[: cfg.keep_top]
                save_checkpoint(path, model, meta={**meta_base, "epoch": epoch, "kept": kept, "val": metrics,
                                                   "steps": result.steps, "epochs": result.epochs},
                                extra=opt.state_tensors())
            last = os.path.join(out_dir, "last.ckpt")
            save_checkpoint(last, model, meta={**meta_base, "epoch": epoch, "kept": kept, "val": metrics,
                                               "steps": result.steps, "epochs": result.epochs},
                            extra=opt.state_tensors())
            _write_csv(os.path.join(out_dir, "loss.csv"), result.steps, STEP_FIELDS)
            _write_csv(os.path.join(out_dir, "epochs.csv"), result.epochs, EPOCH_FIELDS)
            result.checkpoints = [os.path.join(out_dir, k[2]) for k in kept]
            result.final_checkpoint = last
    return result

