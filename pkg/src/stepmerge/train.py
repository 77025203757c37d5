"""Deterministic training and evaluation of the toy backbone."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backbone import Backbone, BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import HELDOUT_OFFSET, synth_batch
from .errors import ConfigError, NumericError
from .optim import AdamW, cosine_lr
from .tensor import Tape, Tensor, backward, cross_entropy, log_softmax

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "loss", "lr", "acc")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-2
    batch_size: int = 32
    steps: int = 2000
    log_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("steps, batch_size and log_every must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Backbone
    losses: list = field(default_factory=list)
    metrics: list = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.metrics[0]["loss"]

    @property
    def final_loss(self) -> float:
        return self.metrics[-1]["loss"]


def train_loop(bcfg: BackboneConfig, tcfg: TrainConfig, out_dir=None,
               model: Optional[Backbone] = None) -> TrainResult:
    """Train on a fresh synthetic batch each step.

    The logged loss/acc of a row is the mean over the steps since the
    previous row; the first row is step 0 alone.
    """
    model = model or Backbone(bcfg, seed=tcfg.seed)
    model.train()
    opt = AdamW(model.parameters(), tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps, tcfg.weight_decay)
    result = TrainResult(model)
    window_loss, window_acc = [], []
    for step in range(tcfg.steps):
        images, labels = synth_batch(step * tcfg.batch_size, tcfg.batch_size, tcfg.seed)
        lr = cosine_lr(step, tcfg.steps, tcfg.lr)
        opt.zero_grad()
        with Tape() as tape:
            logits = model(Tensor(images))
            loss = cross_entropy(logits, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step} (lr={lr:.3g})")
        backward(tape, loss)
        opt.step(lr)
        result.losses.append(value)
        window_loss.append(value)
        window_acc.append(float((logits.data.argmax(-1) == labels).mean()))
        if step % tcfg.log_every == 0 or step == tcfg.steps - 1:
            row = {"step": step, "loss": float(np.mean(window_loss)), "lr": lr,
                   "acc": float(np.mean(window_acc))}
            result.metrics.append(row)
            log.info("step %d loss %.4f lr %.2e acc %.3f", step, row["loss"], lr, row["acc"])
            window_loss, window_acc = [], []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(result.metrics, out / "metrics.csv")
        save_checkpoint(model, out / "checkpoint.spm", extra={"train": tcfg.to_dict()})
    return result


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["step"], repr(r["loss"]), repr(r["lr"]), repr(r["acc"])])


def evaluate_model(model: Backbone, n: int = 512, seed: int = 0, batch: int = 128) -> tuple[float, float]:
    """Accuracy and mean loss on ``n`` held-out samples, in eval mode, without a tape."""
    was_training = model.training
    model.eval()
    correct, total_loss = 0, 0.0
    try:
        for start in range(0, n, batch):
            m = min(batch, n - start)
            images, labels = synth_batch(HELDOUT_OFFSET + start, m, seed)
            logits = model(Tensor(images))
            lp = log_softmax(logits).data
            total_loss += float(-lp[np.arange(m), labels].sum())
            correct += int((logits.data.argmax(-1) == labels).sum())
    finally:
        model.train(was_training)
    return correct / n, total_loss / n


def evaluate(checkpoint, n: int = 512, seed: int = 0) -> tuple[float, float]:
    model, _ = load_checkpoint(checkpoint)
    return evaluate_model(model, n, seed)
