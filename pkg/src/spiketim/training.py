"""Optimizer, schedule, and the train/eval loops.

The recipe follows the backbone defaults: cross-entropy on time-averaged
logits, AdamW with decoupled weight decay, cosine learning-rate decay from
the initial rate, batch size 16. Runs are deterministic under a seed: the
shuffle order of epoch k depends only on (seed, k), so resuming from a
checkpoint reproduces the unbroken run.
"""

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, NanLossError
from .tensor import Tensor, cross_entropy, no_grad


class AdamW:
    """Decoupled-weight-decay Adam over a list of (name, tensor) parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: Tensor(np.zeros_like(t.data)) for n, t in self.params}
        self.v = {n: Tensor(np.zeros_like(t.data)) for n, t in self.params}

    def state_tensors(self):
        out = []
        for n, _ in self.params:
            out.append((f"opt.m.{n}", self.m[n]))
            out.append((f"opt.v.{n}", self.v[n]))
        return out

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self, lr):
        if lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        with no_grad():
            for n, p in self.params:
                g = p.grad
                if g is None:
                    g = np.zeros_like(p.data)
                m = self.m[n].data
                v = self.v[n].data
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.data = p.data - lr * update - lr * self.weight_decay * p.data

    def grad_norms(self):
        return {
            n: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
            for n, p in self.params
        }


def adamw_step(params, state, lr):
    """Functional form: state is an AdamW instance whose grads are populated."""
    state.step(lr)


def cosine_lr(epoch, total_epochs, lr0, lr_min=0.0):
    if not 0 <= epoch < total_epochs:
        raise ContractError(f"epoch {epoch} out of range [0, {total_epochs})")
    # builtin float: a numpy scalar would promote float32 parameters to 64-bit
    return float(lr_min + (lr0 - lr_min) * (1.0 + np.cos(np.pi * epoch / total_epochs)) / 2.0)


def clip_gradients(params, max_norm):
    total = np.sqrt(
        sum(float((p.grad**2).sum()) for _, p in params if p.grad is not None)
    )
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # rows: dicts per epoch
    confusion: np.ndarray | None = None

    def write_metrics_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_acc", "lr", "seconds"])
            for row in self.epochs:
                w.writerow(
                    [
                        row["epoch"],
                        f"{row['train_loss']:.6f}",
                        f"{row['val_acc']:.4f}",
                        f"{row['lr']:.6g}",
                        f"{row['seconds']:.3f}",
                    ]
                )

    def write_confusion_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.confusion.astype(int).tolist(), fh)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(model, frames, labels, optimizer, epoch, seed, lr, batch_size=16, clip=None):
    """One pass over the data; returns the mean per-batch loss."""
    model.train(True)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(31, epoch)))
    losses = []
    for idx in _batches(len(frames), batch_size, rng):
        model.reset()
        logits = model(frames[idx])
        loss = cross_entropy(logits, labels[idx])
        val = float(loss.data)
        if not np.isfinite(val):
            raise NanLossError(
                f"non-finite loss at epoch {epoch}",
                lr=lr,
                grad_norms=optimizer.grad_norms(),
            )
        optimizer.zero_grad()
        loss.backward()
        if clip:
            clip_gradients(optimizer.params, clip)
        optimizer.step(lr)
        losses.append(val)
    return float(np.mean(losses))


def confusion_matrix(preds, labels, num_classes):
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (np.asarray(labels), np.asarray(preds)), 1)
    return confusion


def evaluate(model, frames, labels, num_classes, batch_size=64):
    """Top-1 accuracy and confusion matrix; ties resolve to the lower class index."""
    if len(frames) == 0:
        raise ContractError("evaluate requires a non-empty dataset")
    model.train(False)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    with no_grad():
        for start in range(0, len(frames), batch_size):
            batch = frames[start : start + batch_size]
            model.reset()
            logits = model(batch).data
            pred = logits.argmax(axis=1)  # np.argmax picks the lowest index on ties
            confusion += confusion_matrix(pred, labels[start : start + batch_size], num_classes)
    model.train(True)
    acc = float(np.trace(confusion)) / float(confusion.sum())
    return acc, confusion


def fit(
    model,
    optimizer,
    train_data,
    val_data,
    epochs,
    lr0,
    seed,
    batch_size=16,
    lr_min=0.0,
    clip=None,
    start_epoch=0,
    on_epoch=None,
    target_acc=None,
):
    """Run the epoch loop; returns a TrainReport.

    ``on_epoch(epoch, report)`` runs after each epoch (checkpointing hook);
    ``target_acc`` stops early once validation accuracy reaches it.
    """
    train_frames, train_labels = train_data
    val_frames, val_labels = val_data
    report = TrainReport()
    num_classes = model.cfg.num_classes
    for epoch in range(start_epoch, epochs):
        t0 = time.time()
        lr = cosine_lr(epoch, epochs, lr0, lr_min)
        loss = train_epoch(
            model, train_frames, train_labels, optimizer, epoch, seed, lr, batch_size, clip
        )
        acc, confusion = evaluate(model, val_frames, val_labels, num_classes)
        report.epochs.append(
            {
                "epoch": epoch,
                "train_loss": loss,
                "val_acc": acc,
                "lr": float(lr),
                "seconds": time.time() - t0,
            }
        )
        report.confusion = confusion
        if on_epoch is not None:
            on_epoch(epoch, report)
        if target_acc is not None and acc >= target_acc:
            break
    return report
