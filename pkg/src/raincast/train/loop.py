"""Epoch loop: shuffled cross-region batches, validation, LR plateau, early stop, checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..data import WindowDataset, window_index
from ..evalpost import binarize, confusion_counts, iou_from_counts
from ..losses import LossSpec, combined_loss
from ..models import ConfigError, config_from_dict, forward, init_model
from ..seeding import sub_seed
from ..tensor import Tensor
from .checkpoint import Checkpoint, load_checkpoint, pack_state, save_checkpoint, unpack_state
from .optim import AdamState, EarlyStopping, PlateauScheduler, adam_step, clip_gradients, global_norm

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "train_loss", "val_loss", "val_iou", "lr"]
OPTIM_KEYS = ("lr", "batch_size", "max_epochs", "weight_decay", "clip_max_norm", "plateau_patience",
              "plateau_factor", "early_stop_patience")
DATA_KEYS = ("input_crop", "stride", "exclude_regions", "val_split", "max_batches", "eval_batch_size")


@dataclass
class TrainConfig:
    model: object
    loss: LossSpec = field(default_factory=LossSpec)
    lr: float = 8e-4
    batch_size: int = 16
    max_epochs: int = 90
    weight_decay: float = 5e-6
    clip_max_norm: float = 1.0
    plateau_patience: int = 2
    plateau_factor: float = 0.5
    early_stop_patience: int = 10
    seed: int = 0
    input_crop: int = None
    stride: int = 1
    exclude_regions: list = field(default_factory=list)
    val_split: str = "val"
    max_batches: int = None       # cap on training batches per epoch
    eval_batch_size: int = 32

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = config_from_dict(self.model)
        if isinstance(self.loss, dict):
            self.loss = LossSpec.from_dict(self.loss)
        self.exclude_regions = list(self.exclude_regions)
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must be in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.clip_max_norm <= 0:
            raise ConfigError("batch_size, max_epochs >= 1 and clip_max_norm > 0 required")

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "optim": {k: getattr(self, k) for k in OPTIM_KEYS},
            "data": {k: getattr(self, k) for k in DATA_KEYS},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"model", "loss", "optim", "data", "seed"}
        if unknown:
            raise ConfigError(f"unknown training config keys {sorted(unknown)}")
        if "model" not in d:
            raise ConfigError("training config needs a 'model' section")
        kw = {"model": d["model"], "seed": d.get("seed", 0)}
        if "loss" in d:
            kw["loss"] = d["loss"]
        for section, keys in (("optim", OPTIM_KEYS), ("data", DATA_KEYS)):
            extra = set(d.get(section, {})) - set(keys)
            if extra:
                raise ConfigError(f"unknown {section} keys {sorted(extra)}")
            kw.update(d.get(section, {}))
        return cls(**kw)


def target_size(manifest):
    s = manifest.synth
    return int(s["target_coarse"]) * int(s["upscale"])


def resolve_model(cfg, manifest):
    """Model config with input size and output upsampling matched to the crop and target."""
    model = cfg.model
    n_bands = len(manifest.bands)
    if model.in_bands != n_bands:
        raise ConfigError(f"model expects {model.in_bands} bands, dataset has {n_bands}")
    crop = cfg.input_crop or model.input_size
    target = target_size(manifest)
    if target % crop:
        raise ConfigError(f"target size {target} is not an integer multiple of input crop {crop}")
    return dataclasses.replace(model, input_size=crop, upsample=target // crop)


def epoch_order(n, shuffle_seed, epoch):
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def epoch_batches(refs, batch_size, shuffle_seed, epoch):
    order = epoch_order(len(refs), shuffle_seed, epoch)
    return [[refs[i] for i in order[s:s + batch_size]] for s in range(0, len(order), batch_size)]


def predict_refs(model_cfg, params, ds, refs, batch_size=32):
    """Eval-mode probabilities [N, K, H, W] for ``refs`` (float32)."""
    out = []
    with T.no_grad():
        for s in range(0, len(refs), batch_size):
            x, _ = ds.batch(refs[s:s + batch_size])
            out.append(forward(model_cfg, params, Tensor(x), "eval").data)
    return np.concatenate(out) if out else np.zeros((0, model_cfg.out_frames, 0, 0), np.float32)


def evaluate(model_cfg, params, ds, refs, spec, batch_size=32, threshold=0.5):
    """(mean loss, global IoU at ``threshold``) over ``refs``."""
    total, n = 0.0, 0
    tp = fp = fn = 0
    with T.no_grad():
        for s in range(0, len(refs), batch_size):
            x, y = ds.batch(refs[s:s + batch_size])
            p = forward(model_cfg, params, Tensor(x), "eval")
            total += combined_loss(spec, p, Tensor(y)).item() * len(x)
            n += len(x)
            a, b, c = confusion_counts(binarize(p.data, threshold), y)
            tp, fp, fn = tp + int(a), fp + int(b), fn + int(c)
    return total / n, iou_from_counts(tp, fp, fn)


def train_step(model_cfg, params, opt, spec, x, y, lr, weight_decay, clip, rng):
    """Forward, backward, clip, Adam. Returns (loss, post-clip gradient norm)."""
    pred = forward(model_cfg, params, Tensor(x), "train", rng=rng)
    loss = combined_loss(spec, pred, Tensor(y))
    T.backward(loss)
    grads = params.grads()
    clip_gradients(grads, clip)
    norm = global_norm(grads)
    adam_step(params, grads, opt, lr, weight_decay)
    params.zero_grad()
    return loss.item(), norm


@dataclass
class TrainResult:
    log: list                 # rows as dicts keyed by LOG_HEADER
    best: Checkpoint
    model_config: object
    params: object            # final (last-epoch) parameters
    grad_norms: list          # post-clip norm of every step
    stopped_early: bool


def write_epoch_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_HEADER[1:]])


def read_epoch_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in LOG_HEADER[1:]}} for r in rows]


def _state_meta(cfg, model_cfg, seeds, epoch, rows, best_iou, best_epoch, sched, stopper, opt,
                train_regions, kind, stopped):
    return {
        "kind": kind,
        "model": model_cfg.to_dict(),
        "loss": cfg.loss.to_dict(),
        "train": cfg.to_dict(),
        "epoch": epoch,
        "log": rows,
        "best_val_iou": best_iou,
        "best_epoch": best_epoch,
        "scheduler": dataclasses.asdict(sched),
        "early_stop": dataclasses.asdict(stopper),
        "adam": {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "seeds": seeds,
        "train_regions": train_regions,
        "stopped": stopped,
    }


def _resume_key(d):
    # a resumed run may extend max_epochs; everything else must match
    return {**d, "optim": {k: v for k, v in d["optim"].items() if k != "max_epochs"}}


def train_loop(cfg, manifest, out_dir=None, resume=None):
    """Train per ``cfg``; write ``epochs.csv``, ``checkpoint.nwck`` (best) and ``last.nwck``."""
    model_cfg = resolve_model(cfg, manifest)
    t_in, t_out = model_cfg.in_frames, model_cfg.out_frames
    excluded = set(cfg.exclude_regions) | set(manifest.held_out_regions())
    unknown = set(cfg.exclude_regions) - set(manifest.region_ids)
    if unknown:
        raise ConfigError(f"cannot exclude unknown regions {sorted(unknown)}")
    train_refs = window_index(manifest, t_in, t_out, cfg.stride, "train", exclude_regions=excluded)
    val_refs = window_index(manifest, t_in, t_out, cfg.stride, cfg.val_split, exclude_regions=excluded)
    if not train_refs or not val_refs:
        raise ValueError(f"empty split: {len(train_refs)} train / {len(val_refs)} {cfg.val_split} windows")
    train_regions = sorted({r.region for r in train_refs})
    ds = WindowDataset(manifest, t_in, t_out, model_cfg.input_size)
    seeds = {k: sub_seed(cfg.seed, k) for k in ("init", "shuffle", "dropout")}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if _resume_key(ck.meta["train"]) != _resume_key(cfg.to_dict()):
            raise ConfigError("resume checkpoint was written under a different training config")
        params, m, v = unpack_state(ck.tensors)
        opt = AdamState(m=m, v=v, **ck.meta["adam"])
        sched = PlateauScheduler(**ck.meta["scheduler"])
        stopper = EarlyStopping(**ck.meta["early_stop"])
        rows = list(ck.meta["log"])
        start = ck.meta["epoch"] + 1
        best_iou, best_epoch = ck.meta["best_val_iou"], ck.meta["best_epoch"]
        best_path = out / "checkpoint.nwck" if out is not None else None
        best = load_checkpoint(best_path) if best_path is not None and best_path.exists() else None
        stopped = ck.meta["stopped"]
    else:
        params = init_model(model_cfg, seed=seeds["init"])
        opt = AdamState.fresh(params)
        sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.plateau_factor)
        stopper = EarlyStopping(cfg.early_stop_patience)
        rows, start, best_iou, best_epoch, best, stopped = [], 1, -math.inf, 0, None, False

    norms = []
    for epoch in range(start, cfg.max_epochs + 1):
        if stopped:
            break
        lr = sched.lr
        batches = epoch_batches(train_refs, cfg.batch_size, seeds["shuffle"], epoch)
        if cfg.max_batches:
            batches = batches[:cfg.max_batches]
        loss_sum, count = 0.0, 0
        for step, refs in enumerate(batches):
            x, y = ds.batch(refs)
            rng = np.random.default_rng([seeds["dropout"], epoch, step])
            loss, norm = train_step(model_cfg, params, opt, cfg.loss, x, y, lr, cfg.weight_decay,
                                    cfg.clip_max_norm, rng)
            norms.append(norm)
            loss_sum += loss * len(refs)
            count += len(refs)
        val_loss, val_iou = evaluate(model_cfg, params, ds, val_refs, cfg.loss, cfg.eval_batch_size)
        rows.append({"epoch": epoch, "train_loss": loss_sum / count, "val_loss": val_loss,
                     "val_iou": val_iou, "lr": lr})
        log.info("epoch %d train %.4f val %.4f iou %.4f lr %.2e", epoch, loss_sum / count, val_loss,
                 val_iou, lr)
        sched.step(val_loss)
        stopped = stopper.step(val_loss)
        improved = val_iou > best_iou
        if improved:
            best_iou, best_epoch = val_iou, epoch
        meta = _state_meta(cfg, model_cfg, seeds, epoch, rows, best_iou, best_epoch, sched, stopper, opt,
                           train_regions, "last", stopped)
        last = Checkpoint(meta, pack_state(params, opt))
        if improved:
            best = Checkpoint({**meta, "kind": "best"}, pack_state(params))
        if out is not None:
            save_checkpoint(out / "last.nwck", last)
            if improved:
                save_checkpoint(out / "checkpoint.nwck", best)
            write_epoch_log(rows, out / "epochs.csv")
    return TrainResult(rows, best, model_cfg, params, norms, stopped)


def load_model(path_or_ckpt):
    """(model config, ParamSet, metadata) from a checkpoint."""
    ck = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else load_checkpoint(path_or_ckpt)
    params, _, _ = unpack_state(ck.tensors)
    return config_from_dict(ck.meta["model"]), params, ck.meta


def fit_batch(model_cfg, x, y, spec=None, steps=300, lr=3e-3, seed=0, clip=1.0, weight_decay=0.0):
    """Repeatedly step on one fixed batch; returns (params, training IoU per step at 0.5)."""
    spec = spec or LossSpec()
    params = init_model(model_cfg, seed=sub_seed(seed, "init"))
    opt = AdamState.fresh(params)
    history = []
    for step in range(steps):
        rng = np.random.default_rng([sub_seed(seed, "dropout"), step])
        train_step(model_cfg, params, opt, spec, x, y, lr, weight_decay, clip, rng)
        if step % 10 == 9 or step == steps - 1:
            with T.no_grad():
                p = forward(model_cfg, params, Tensor(x), "eval").data
            history.append((step + 1, iou_from_counts(*map(int, confusion_counts(binarize(p, 0.5), y)))))
    return params, history
