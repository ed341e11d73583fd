"""Balanced-batch training, validation-driven LR decay and evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .model import Inputs, ModelConfig, ModelState, forward_batch, init_model, prepare_inputs
from .imageio import Image
from .optim import AdamW, PlateauSchedule
from .synth import DatasetManifest
from .tensor import NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "split", "loss", "ce", "sc", "acc", "auc")


class NumericError(NonFiniteError):
    """Loss became NaN or infinite."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 5
    lr_factor: float = 0.5
    seed: int = 0
    eval_batch: int = 64
    augment: bool = True

    def __post_init__(self):
        if self.batch_size % 2 or self.batch_size < 4:
            raise ValueError(f"batch size must be even and >= 4, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class Dataset:
    inputs: Inputs
    labels: np.ndarray
    paths: list[str]
    kinds: list[str]
    pixels: np.ndarray | None = None  # raw uint8 stack, kept for augmentation

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs.take(idx), self.labels[idx],
                       [self.paths[i] for i in idx], [self.kinds[i] for i in idx],
                       None if self.pixels is None else self.pixels[idx])


def load_dataset(manifest: DatasetManifest, patch: int) -> Dataset:
    if len(manifest) == 0:
        raise ValueError(f"manifest for split {manifest.split!r} is empty")
    images = [manifest.load(i) for i in range(len(manifest))]
    kinds = [e.tamper.kind if e.tamper else "-" for e in manifest.entries]
    return Dataset(prepare_inputs(images, patch), manifest.labels, [e.path for e in manifest.entries], kinds,
                   np.stack([im.pixels for im in images]))


def augment_batch(pixels: np.ndarray, patch: int, rng: np.random.Generator) -> Inputs:
    """Random dihedral transform plus a circular shift by whole patches, per image.

    Synthetic reals are periodic, so the shift adds no seam, and whole-patch
    steps keep every tamper region aligned with the patch grid.
    """
    out = []
    for px in pixels:
        k = rng.integers(8)
        px = np.rot90(px, k % 4, axes=(0, 1))
        if k >= 4:
            px = px[:, ::-1]
        dy, dx = rng.integers(px.shape[0] // patch), rng.integers(px.shape[1] // patch)
        out.append(Image(np.ascontiguousarray(np.roll(px, (dy * patch, dx * patch), axis=(0, 1)))))
    return prepare_inputs(out, patch)


def balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Index batches holding batch_size/2 real and batch_size/2 fake samples each."""
    half = batch_size // 2
    real, fake = np.flatnonzero(labels == 0), np.flatnonzero(labels == 1)
    if rng is not None:
        real, fake = rng.permutation(real), rng.permutation(fake)
    n = min(real.size, fake.size) // half
    if n == 0:
        raise losses.DegenerateBatchError(
            f"cannot form a balanced batch of {batch_size}: {real.size} real and {fake.size} fake samples")
    return [np.concatenate([real[k * half:(k + 1) * half], fake[k * half:(k + 1) * half]]) for k in range(n)]


def batch_loss(out, labels, cfg: ModelConfig):
    ce = losses.ce_loss_logits(out.logit, labels) if cfg.ce_through_logits else losses.ce_loss(out.prob, labels)
    alpha = cfg.effective_alpha
    sc = losses.supcon_loss(out.z, labels, cfg.tau, cfg.supcon_denominator, cfg.supcon_reduction) if alpha > 0 else None
    total = losses.combined_loss(sc, ce, alpha) if sc is not None else ce
    return total, ce, sc


def predict(data: Dataset, state: ModelState, batch: int = 64):
    """Deterministic inference: (fake probabilities, F_E rows, z rows)."""
    probs, feats, zs = [], [], []
    with no_grad():
        for s in range(0, len(data), batch):
            out = forward_batch(data.inputs.take(slice(s, s + batch)), state, training=False)
            probs.append(out.prob.data)
            feats.append(out.f_e.data)
            zs.append(out.z.data)
    return np.concatenate(probs), np.concatenate(feats), np.concatenate(zs)


def validation_metrics(data: Dataset, state: ModelState, batch_size: int, eval_batch: int = 64) -> dict:
    probs, _, z = predict(data, state, eval_batch)
    cfg = state.config
    y = data.labels
    ce = losses.ce_loss(Tensor(probs), y).item()
    alpha = cfg.effective_alpha
    sc = 0.0
    if alpha > 0:
        vals = [losses.supcon_loss(Tensor(z[idx]), y[idx], cfg.tau, cfg.supcon_denominator,
                                      cfg.supcon_reduction).item()
                for idx in balanced_batches(y, batch_size, None)]
        sc = float(np.mean(vals))
    return {"loss": alpha * sc + (1 - alpha) * ce, "ce": ce, "sc": sc,
            "acc": losses.accuracy(probs, y), "auc": losses.auc(probs, y)}


def _fmt_row(epoch: int, split: str, m: dict) -> list[str]:
    return [str(epoch), split] + [f"{m[k]:.6f}" for k in METRIC_FIELDS[2:]]


def write_metrics_csv(rows: list[list[str]], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        w.writerows(rows)


def train(train_data: Dataset, val_data: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          metrics_path=None, on_epoch: Callable[[int, dict, dict], None] | None = None):
    """Train from scratch; returns (state with the best validation ACC, metric rows)."""
    state = init_model(model_cfg, train_cfg.seed)
    rng = np.random.default_rng([train_cfg.seed, 1])
    opt = AdamW(state.params, train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = PlateauSchedule(train_cfg.lr, train_cfg.patience, train_cfg.lr_factor)
    rows: list[list[str]] = []
    best: ModelState | None = None

    for epoch in range(1, train_cfg.epochs + 1):
        opt.lr = sched.lr
        sums = {"loss": 0.0, "ce": 0.0, "sc": 0.0}
        seen_p, seen_y = [], []
        batches = balanced_batches(train_data.labels, train_cfg.batch_size, rng)
        for idx in batches:
            y = train_data.labels[idx]
            if train_cfg.augment and train_data.pixels is not None:
                inputs = augment_batch(train_data.pixels[idx], model_cfg.patch, rng)
            else:
                inputs = train_data.inputs.take(idx)
            out = forward_batch(inputs, state, training=True, rng=rng)
            total, ce, sc = batch_loss(out, y, model_cfg)
            if not np.isfinite(total.item()):
                raise NumericError(f"non-finite loss {total.item()} at epoch {epoch}")
            opt.zero_grad()
            total.backward()
            opt.step()
            sums["loss"] += total.item()
            sums["ce"] += ce.item()
            sums["sc"] += sc.item() if sc is not None else 0.0
            seen_p.append(out.prob.data)
            seen_y.append(y)
        tr = {k: v / len(batches) for k, v in sums.items()}
        p_all, y_all = np.concatenate(seen_p), np.concatenate(seen_y)
        tr.update(acc=losses.accuracy(p_all, y_all), auc=losses.auc(p_all, y_all))
        va = validation_metrics(val_data, state, train_cfg.batch_size, train_cfg.eval_batch)
        rows.append(_fmt_row(epoch, "train", tr))
        rows.append(_fmt_row(epoch, "val", va))
        log.info("epoch %d lr %.2e train loss %.4f acc %.4f | val loss %.4f acc %.4f auc %.4f",
                 epoch, opt.lr, tr["loss"], tr["acc"], va["loss"], va["acc"], va["auc"])
        if on_epoch is not None:
            on_epoch(epoch, tr, va)

        state.best_val_loss = min(state.best_val_loss, va["loss"])
        state.lr = sched.observe(va["loss"])
        state.epoch = epoch
        if va["acc"] > state.best_val_acc:
            state.best_val_acc = va["acc"]
            best = state.as_float32()

    if metrics_path is not None:
        write_metrics_csv(rows, metrics_path)
    # bookkeeping of the returned snapshot reflects the whole run
    best.best_val_loss, best.lr = state.best_val_loss, state.lr
    return best, rows


def evaluate(data: Dataset, state: ModelState, scores_path=None, batch: int = 64) -> dict:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    probs, feats, _ = predict(data, state, batch)
    result = {"acc": losses.accuracy(probs, data.labels), "auc": losses.auc(probs, data.labels),
              "scores": probs, "f_e": feats}
    if scores_path is not None:
        with Path(scores_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "path", "label", "kind", "score"])
            for i, (path, y, kind, s) in enumerate(zip(data.paths, data.labels, data.kinds, probs)):
                w.writerow([i, path, int(y), kind, f"{s:.6f}"])
    return result
