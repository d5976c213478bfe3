"""Training, evaluation, and ablation drivers.

All randomness flows from the experiment seed, so a given spec reproduces
its run (and its output files) byte for byte. Losses are accumulated over a
mini-batch, scaled by 1/batch, and applied with Adam. Per-epoch train/val
Dice is measured in eval mode (frozen batch-norm buffers) so the logged
numbers match a post-hoc evaluation of the saved checkpoint.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentSpec
from .data import SyntheticParams, SyntheticSample, gen_synthetic, load_directory
from .errors import NumericError
from .losses import total_loss
from .metrics import (MetricReport, default_boundary_tol, dice_iou_mae,
                      evaluate_pair, write_metrics_csv, write_metrics_jsonl)
from .model import SegModel, build_model
from .optim import Adam


@dataclass
class TrainResult:
    train_dice: float
    val_dice: float
    epochs_run: int
    log_rows: list


def make_dataset(spec: ExperimentSpec) -> list[SyntheticSample]:
    if spec.data.kind == "directory":
        return load_directory(spec.data.directory, size=spec.image_size)
    params = SyntheticParams(noise=spec.data.noise)
    return gen_synthetic(spec.data.n_samples, spec.image_size, spec.seed, params)


def split_dataset(samples, val_fraction: float, seed: int):
    """Deterministic shuffle-then-split; val gets round(frac * n) samples."""
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(val_fraction * len(samples)))
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    return [samples[i] for i in train_idx], [samples[i] for i in val_idx]


def _forward(model: SegModel, sample: SyntheticSample, training: bool):
    img = T.Tensor(sample.image)
    return model(img, training=training)


def predict(model: SegModel, sample: SyntheticSample) -> np.ndarray:
    with T.no_grad():
        out = _forward(model, sample, training=False)
    return out.fused_pred.data


def mean_dice(model: SegModel, samples) -> float:
    if not samples:
        return float("nan")
    scores = [dice_iou_mae(predict(model, s), s.mask)[0] for s in samples]
    return float(np.mean(scores))


def train(spec: ExperimentSpec, out_dir: str | None = None,
          dataset=None, log_every: int = 1,
          stop_at_train_dice: float | None = None) -> TrainResult:
    out_dir = out_dir if out_dir is not None else spec.out_dir
    os.makedirs(out_dir, exist_ok=True)
    samples = dataset if dataset is not None else make_dataset(spec)
    train_set, val_set = split_dataset(samples, spec.val_fraction, spec.seed)
    model = build_model(spec)
    opt = Adam(model.parameters(), lr=spec.optimizer.lr, beta1=spec.optimizer.beta1,
               beta2=spec.optimizer.beta2, eps=spec.optimizer.eps)
    order_rng = np.random.default_rng(spec.seed + 1)

    log_rows = []
    best_val = -1.0
    for epoch in range(spec.epochs):
        order = order_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), spec.batch_size):
            batch = order[start:start + spec.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for bi, idx in enumerate(batch):
                T.reset_tape()
                sample = train_set[idx]
                out = _forward(model, sample, training=True)
                loss = total_loss(out.decoder_preds, out.fused_pred, sample.mask)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, "
                                       f"sample {idx}: {value}")
                T.backward(loss * (1.0 / len(batch)))
                batch_loss += value / len(batch)
            opt.step()
            epoch_loss += batch_loss
        n_batches = (len(order) + spec.batch_size - 1) // spec.batch_size
        epoch_loss /= max(n_batches, 1)
        if (epoch + 1) % log_every == 0 or epoch == spec.epochs - 1:
            tr = mean_dice(model, train_set)
            va = mean_dice(model, val_set)
            log_rows.append({"epoch": epoch, "loss": epoch_loss,
                             "train_dice": tr, "val_dice": va})
            score = va if val_set else tr
            if score > best_val:
                best_val = score
                save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), model, opt,
                                extra={"epoch": epoch, "val_dice": va, "train_dice": tr})
            if stop_at_train_dice is not None and tr > stop_at_train_dice:
                break

    if spec.epochs == 0:
        tr, va = mean_dice(model, train_set), mean_dice(model, val_set)
        log_rows.append({"epoch": -1, "loss": float("nan"),
                         "train_dice": tr, "val_dice": va})
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), model, opt,
                        extra={"epoch": -1, "val_dice": va, "train_dice": tr})

    _write_train_log(os.path.join(out_dir, "train_log.csv"), log_rows)
    spec.save(os.path.join(out_dir, "config.ini"))
    last = log_rows[-1]
    return TrainResult(train_dice=last["train_dice"], val_dice=last["val_dice"],
                       epochs_run=last["epoch"] + 1, log_rows=log_rows)


def _write_train_log(path: str, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_dice", "val_dice"])
        for r in rows:
            writer.writerow([r["epoch"], f"{r['loss']:.6f}",
                             f"{r['train_dice']:.6f}", f"{r['val_dice']:.6f}"])
    os.replace(tmp, path)


def evaluate(spec: ExperimentSpec, checkpoint_path: str, out_dir: str,
             dataset=None) -> MetricReport:
    """Score a checkpoint on the dataset; writes metrics and predicted masks."""
    os.makedirs(out_dir, exist_ok=True)
    samples = dataset if dataset is not None else make_dataset(spec)
    model = build_model(spec)
    load_checkpoint(checkpoint_path, model)
    tol = default_boundary_tol((spec.image_size, spec.image_size))
    rows = []
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(mask_dir, exist_ok=True)
    for i, sample in enumerate(samples):
        pred = predict(model, sample)
        rows.append((f"sample_{i:04d}", evaluate_pair(pred, sample.mask, boundary_tol=tol)))
        binary = ((pred >= 0.5) * 255).astype(np.uint8)
        Image.fromarray(binary).save(os.path.join(mask_dir, f"sample_{i:04d}.png"))
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    write_metrics_jsonl(os.path.join(out_dir, "metrics.jsonl"), rows)
    from .metrics import aggregate
    return aggregate([r for _, r in rows])


ABLATION_ROWS = (
    ("A", dict(convnext=True, dbfeb=True, lfsa=True), None),
    ("B", dict(convnext=True, dbfeb=True, lfsa=False), None),
    ("C", dict(convnext=True, dbfeb=False, lfsa=True), None),
    ("D", dict(convnext=False, dbfeb=True, lfsa=True), None),
    ("E", dict(convnext=False, dbfeb=False, lfsa=False), None),
    ("fusion_fnf", dict(convnext=True, dbfeb=True, lfsa=True), "fnf"),
    ("fusion_uf", dict(convnext=True, dbfeb=True, lfsa=True), "uf"),
    ("fusion_sf", dict(convnext=True, dbfeb=True, lfsa=True), "sf"),
)


def ablation_matrix(base: ExperimentSpec, out_dir: str) -> list[dict]:
    """Train each toggle/fusion variant from the same seed; one CSV row each."""
    os.makedirs(out_dir, exist_ok=True)
    samples = make_dataset(base)
    results = []
    for name, toggles, fusion in ABLATION_ROWS:
        import dataclasses
        spec = dataclasses.replace(
            base,
            toggles=dataclasses.replace(base.toggles, **toggles),
            fusion=fusion if fusion is not None else base.fusion,
            out_dir=os.path.join(out_dir, name),
        )
        model_params = build_model(spec).param_count()
        res = train(spec, dataset=samples)
        results.append({"row": name, "convnext": toggles["convnext"],
                        "dbfeb": toggles["dbfeb"], "lfsa": toggles["lfsa"],
                        "fusion": spec.fusion, "params": model_params,
                        "train_dice": res.train_dice, "val_dice": res.val_dice})
    path = os.path.join(out_dir, "ablation.csv")
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(results[0].keys()))
        writer.writeheader()
        for r in results:
            r = dict(r)
            r["train_dice"] = f"{r['train_dice']:.6f}"
            r["val_dice"] = f"{r['val_dice']:.6f}"
            writer.writerow(r)
    os.replace(tmp, path)
    return results
