"""End-to-end pruning: ADMM stage, mask extraction, masked fine-tuning.

The student starts as a copy of the teacher. Every epoch is evaluated on a
fixed seeded subset of the evaluation set and logged as an EpochRecord;
epoch 0 is the untouched student. The returned model is the fine-tuning
epoch with the lowest mean of natural and adversarial cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .admm import (AdmmState, MixConfig, PruneMask, PruneSchedule, SparsityPlan, TeacherSignal,
                   admm_update, evaluate_epoch_losses, extract_mask, feasibility_gap, learning_rate,
                   masked_finetune, train_epoch)
from .attacks import AttackConfig, evaluate_attack
from .data import Dataset
from .errors import ConfigError, NumericError
from .losses import HBAR_RATIOS, LOSS_PRESETS, LossBreakdown, LossWeights, autotune_lambdas, ce_loss
from .metrics import EpochRecord, hsic_plane_point
from .nn import SGD, NetworkModel, forward

log = logging.getLogger(__name__)


@dataclass
class PruneConfig:
    rate: float = 4.0
    schedule: PruneSchedule = field(default_factory=PruneSchedule)
    weights: LossWeights = LOSS_PRESETS["mnist"]
    autotune: bool = False
    # auto-tuned lambda_kd stays within this factor of the configured value (None: unbounded)
    autotune_clip: Optional[float] = 10.0
    hbar_ratio: tuple[float, float] = HBAR_RATIOS["mnist"]
    attacks: dict[str, AttackConfig] = field(default_factory=lambda: {"fgsm": AttackConfig("fgsm", 0.3)})
    select_attack: Optional[str] = None
    eval_size: int = 1000
    plane_size: int = 256
    eval_seed: int = 0
    mix: MixConfig = field(default_factory=MixConfig)

    def __post_init__(self):
        if not self.attacks:
            raise ConfigError("at least one evaluation attack is required", "attacks")
        if self.select_attack is None:
            self.select_attack = next(iter(self.attacks))
        if self.select_attack not in self.attacks:
            raise ConfigError(f"unknown attack {self.select_attack!r}", "attacks.select")
        if self.plane_size < 2:
            raise ConfigError("must be at least 2", "attacks.plane_size")


@dataclass
class Evaluation:
    natural_acc: float
    robust_acc: dict[str, float]
    hsic_xz: float
    hsic_yz: float
    natural_loss: float
    robust_loss: dict[str, float]


class Evaluator:
    """Fixed evaluation subset and HSIC-plane batch shared by every epoch."""

    def __init__(self, evalset: Dataset, attacks: dict[str, AttackConfig], eval_size: int = 1000,
                 plane_size: int = 256, seed: int = 0):
        self.data = evalset.subset(eval_size, seed)
        m = min(plane_size, len(self.data))
        self.plane_x = self.data.inputs[:m]
        self.plane_y = self.data.labels[:m]
        self.attacks = attacks

    def __call__(self, model: NetworkModel) -> Evaluation:
        logits = forward(model, self.data.inputs).logits
        nat_acc = 100.0 * float(np.mean(logits.argmax(1) == self.data.label_indices))
        nat_loss = ce_loss(logits, self.data.labels)[0]
        rob_acc, rob_loss = {}, {}
        for name, cfg in self.attacks.items():
            rob_acc[name], rob_loss[name] = evaluate_attack(model, self.data, cfg)
        hx, hy = hsic_plane_point(model, self.plane_x, self.plane_y)
        return Evaluation(nat_acc, rob_acc, hx, hy, nat_loss, rob_loss)


def make_record(epoch: int, stage: str, ev: Evaluation, b: LossBreakdown, gap: float) -> EpochRecord:
    return EpochRecord(epoch, stage, ev.natural_acc, dict(ev.robust_acc), b.total, b.kd, b.hbar, b.admm,
                       ev.hsic_xz, ev.hsic_yz, gap)


@dataclass
class PruneResult:
    model: NetworkModel
    final_model: NetworkModel
    mask: PruneMask
    plan: SparsityPlan
    state: AdmmState
    weights: LossWeights
    records: list[EpochRecord]
    best_epoch: int
    selection_loss: dict[int, float]
    rho_history: list[list[float]]


def prune_pipeline(teacher: NetworkModel, train: Dataset, evalset: Dataset, cfg: PruneConfig) -> PruneResult:
    sched = cfg.schedule
    student = teacher.copy()
    plan = SparsityPlan.uniform(student, cfg.rate)
    plan.check(student)
    state = AdmmState.init(student, plan, sched.rho_init)
    signal = TeacherSignal.for_dataset(teacher, train)
    evaluate = Evaluator(evalset, cfg.attacks, cfg.eval_size, cfg.plane_size, cfg.eval_seed)
    bp = sched.batch_plan()
    mix = cfg.mix if cfg.mix.ratio > 0 else None
    weights = cfg.weights
    records: list[EpochRecord] = []
    rho_history = [list(state.rho)]

    def record(epoch, stage, b, gap):
        ev = evaluate(student)
        rec = make_record(epoch, stage, ev, b, gap)
        records.append(rec)
        log.info("%s epoch %d: nat %.2f %s loss %.4g gap %.4g", stage, epoch, rec.natural_acc,
                 " ".join(f"{k} {v:.2f}" for k, v in rec.robust_acc.items()), rec.loss_total, gap)
        return ev

    b0 = evaluate_epoch_losses(student, train, signal, weights, bp, state)
    record(0, "admm", b0, feasibility_gap(student, state))

    opt = SGD(student, sched.momentum, sched.weight_decay)
    k = sched.epochs_per_admm_iter
    for e in range(1, sched.admm_epochs + 1):
        lr = learning_rate(sched.lr_prune, e, sched.admm_epochs, sched.scheduler)
        try:
            b = train_epoch(student, opt, train, signal, weights, bp, e, lr, state, mix=mix)
        except NumericError as exc:
            raise NumericError(f"{exc} (last good epoch {e - 1})") from exc
        if e % k == 0 or e == sched.admm_epochs:
            admm_update(student, state, plan, sched)
            rho_history.append(list(state.rho))
        if e == 1 and cfg.autotune:
            measured = evaluate_epoch_losses(student, train, signal, weights, bp, state, measure=True)
            weights = autotune_lambdas(measured, cfg.hbar_ratio, weights, clip=cfg.autotune_clip)
            log.info("auto-tuned weights: %s", weights)
        record(e, "admm", b, feasibility_gap(student, state))

    mask = extract_mask(student, plan)
    best = {"loss": np.inf, "epoch": -1, "model": None}
    selection: dict[int, float] = {}

    def on_ft_epoch(e, b):
        ev = record(e, "finetune", b, feasibility_gap(student, state))
        score = 0.5 * (ev.natural_loss + ev.robust_loss[cfg.select_attack])
        selection[e] = score
        if score < best["loss"]:
            best.update(loss=score, epoch=e, model=student.copy())

    try:
        masked_finetune(student, mask, train, signal, weights, sched,
                        first_epoch=sched.admm_epochs + 1, mix=mix, on_epoch=on_ft_epoch)
    except NumericError as exc:
        raise NumericError(f"{exc} (last good epoch {records[-1].epoch})") from exc
    chosen = best["model"] if best["model"] is not None else student.copy()
    return PruneResult(chosen, student, mask, plan, state, weights, records, best["epoch"], selection, rho_history)
