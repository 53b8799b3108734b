"""SGD with momentum and weight decay, plus a deterministic mini-batch loop.

Update rule per parameter:
    v <- momentum * v + grad + weight_decay * theta
    theta <- theta - lr * v
Batch gradients are means over the batch, so learning-rate semantics are
stable under batch-size changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from . import model as M
from .tensor import Tape, scale, add


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0001
    decay_factor: float = 0.1
    decay_epochs: tuple = ()
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("TrainConfig: lr0 must be > 0")
        if not 0 <= self.decay_factor < 1:
            raise ConfigError("TrainConfig: decay_factor must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("TrainConfig: bad epochs/batch_size")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: multiply by decay_factor at each listed epoch index."""
    drops = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.lr0 * cfg.decay_factor ** drops


class SgdOptimizer:
    """Momentum SGD over a fixed registry of (name, tensor, decay?) triples."""

    def __init__(self, parameters, cfg: TrainConfig):
        self.parameters = list(parameters)
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(t.data) for name, t, _ in self.parameters}

    def step(self, lr: float) -> None:
        for name, t, decay in self.parameters:
            if t.grad is None:
                raise RuntimeError(
                    f"sgd_step: registered parameter {name!r} has no gradient"
                )
            g = t.grad
            if decay and self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * t.data
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += g
            t.data = np.asarray(t.data - lr * v)
            t.grad = None


def sgd_step(params: M.ModelParams, lr: float, cfg: TrainConfig,
             optimizer: SgdOptimizer | None = None) -> SgdOptimizer:
    """One update over the model's trainable parameters; gradients are cleared.

    Pass the returned optimizer back in to carry velocity across steps.
    """
    if optimizer is None:
        optimizer = SgdOptimizer(M.trainable_parameters(params), cfg)
    optimizer.step(lr)
    return optimizer


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    train_acc: float
    eval_acc: float


@dataclass
class TrainReport:
    config: TrainConfig
    epochs: list = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["epoch\tlr\tloss\ttrain_acc\teval_acc"]
        for r in self.epochs:
            lines.append(f"{r.epoch}\t{r.lr:.10g}\t{r.loss:.10g}"
                         f"\t{r.train_acc:.10g}\t{r.eval_acc:.10g}")
        return "\n".join(lines) + "\n"


def evaluate(params: M.ModelParams, dataset) -> float:
    """Top-1 accuracy over a dataset (no tape, no gradients)."""
    if not dataset:
        raise ConfigError("evaluate: empty dataset")
    correct = sum(
        int(np.argmax(M.forward(video, params).data) == label)
        for video, label in dataset
    )
    return correct / len(dataset)


def fit(params: M.ModelParams, dataset, cfg: TrainConfig, eval_set=None) -> TrainReport:
    """Train in place; deterministic given config and seed (fixed shuffle order)."""
    if not dataset:
        raise ConfigError("fit: empty dataset")
    rng = np.random.default_rng(cfg.seed)
    optimizer = SgdOptimizer(M.trainable_parameters(params), cfg)
    report = TrainReport(config=cfg)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            with Tape() as tape:
                total = None
                for video, label in batch:
                    logits = M.forward(video, params)
                    correct += int(np.argmax(logits.data) == label)
                    sample_loss = M.loss(logits, label)
                    total = sample_loss if total is None else add(total, sample_loss)
                mean_loss = scale(total, 1.0 / len(batch))
                tape.backward(mean_loss)
            total_loss += float(mean_loss.data) * len(batch)
            optimizer.step(lr)
        eval_acc = evaluate(params, eval_set) if eval_set else float("nan")
        report.epochs.append(EpochRecord(
            epoch=epoch, lr=lr, loss=total_loss / n,
            train_acc=correct / n, eval_acc=eval_acc,
        ))
    return report
