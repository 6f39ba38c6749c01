"""Minimal PGD adversarial training, used to manufacture desk-scale teachers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .admm import learning_rate
from .attacks import AttackConfig, attack
from .data import BatchPlan, Dataset, batches
from .errors import NumericError, ParameterError
from .losses import ce_loss
from .nn import SGD, Adam, NetworkModel, backward, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TeacherConfig:
    epochs: int = 20
    lr: float = 0.05
    # "sgd" (momentum, weight_decay apply) or "adam" (weight_decay applies)
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    scheduler: str = "cosine"
    seed: int = 0
    # radius and step grow linearly from 0 over this many epochs
    warmup_epochs: int = 0
    # weight of the clean-input cross-entropy; the adversarial term gets 1 - clean_weight
    clean_weight: float = 0.0
    # radius 0 means natural training
    attack: AttackConfig = field(default_factory=lambda: AttackConfig("pgd", 0.3, 0.075, 10, random_start=True))


def train_teacher(model: NetworkModel, data: Dataset, cfg: TeacherConfig,
                  on_epoch: Optional[Callable[[int, float], None]] = None) -> NetworkModel:
    """SGD or Adam on cross-entropy over PGD examples regenerated for every batch."""
    if cfg.optimizer == "sgd":
        opt = SGD(model, cfg.momentum, cfg.weight_decay)
    elif cfg.optimizer == "adam":
        opt = Adam(model, weight_decay=cfg.weight_decay)
    else:
        raise ParameterError(f"unknown optimizer {cfg.optimizer!r}")
    plan = BatchPlan(cfg.batch_size, cfg.seed, drop_last=False)
    adversarial = cfg.attack.radius > 0
    cw = cfg.clean_weight
    if not 0.0 <= cw < 1.0:
        raise ParameterError("clean_weight must lie in [0, 1)")
    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate(cfg.lr, epoch, cfg.epochs, cfg.scheduler)
        rng = np.random.default_rng([cfg.seed, epoch, 2])
        atk = cfg.attack
        if adversarial and epoch <= cfg.warmup_epochs:
            f = epoch / (cfg.warmup_epochs + 1)
            atk = replace(atk, radius=f * atk.radius, step_size=f * atk.step_size)
        total, count = 0.0, 0
        for x, y, _ in batches(data, plan, epoch):
            if adversarial:
                xa = attack(model, x, y, atk, rng).inputs
                trace = forward(model, xa)
                loss, g = ce_loss(trace.logits, y)
                grads = backward(model, trace, g).scale(1.0 - cw)
                if cw > 0:
                    trace = forward(model, x)
                    clean, g = ce_loss(trace.logits, y)
                    grads = grads + backward(model, trace, g).scale(cw)
                    loss = (1.0 - cw) * loss + cw * clean
            else:
                trace = forward(model, x)
                loss, g = ce_loss(trace.logits, y)
                grads = backward(model, trace, g)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite teacher loss in epoch {epoch}")
            opt.step(model, grads, lr)
            total += loss * x.shape[0]
            count += x.shape[0]
        mean = total / max(count, 1)
        log.info("teacher epoch %d: loss %.4f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return model
