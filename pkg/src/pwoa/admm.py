"""l0 projection, ADMM state and iteration, masks and mask-constrained fine-tuning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attacks import AttackConfig, attack
from .data import BatchPlan, Dataset, batches
from .errors import ConfigError, NumericError, ParameterError, ShapeError
from .losses import LossBreakdown, LossWeights, pwoa_loss
from .nn import SGD, NetworkModel, forward


def project_l0(values: np.ndarray, alpha: int) -> np.ndarray:
    """Euclidean projection onto {v : ||v||_0 <= alpha}.

    Keeps the ``alpha`` entries of largest magnitude; among equal magnitudes
    the lower flat index is kept first. Works on any shape.
    """
    if alpha < 0:
        raise ParameterError("alpha must be non-negative")
    v = np.asarray(values, dtype=np.float64)
    flat = v.ravel()
    if alpha >= flat.size:
        return v.copy()
    out = np.zeros_like(flat)
    if alpha > 0:
        keep = np.argsort(-np.abs(flat), kind="stable")[:alpha]
        out[keep] = flat[keep]
    return out.reshape(v.shape)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SparsityPlan:
    """Per-layer nonzero budgets for the weight matrices (biases are dense)."""

    budgets: tuple[int, ...]
    rate: float
    weights_only: bool = True

    @classmethod
    def uniform(cls, model: NetworkModel, rate: float) -> "SparsityPlan":
        """alpha_l = max(1, round(n_l / rate)) for every layer."""
        if not (rate >= 1.0 and math.isfinite(rate)):
            raise ConfigError(f"pruning rate must be a finite number >= 1, got {rate}", "sparsity.rate")
        return cls(tuple(max(1, round_half_up(l.weight.size / rate)) for l in model.layers), float(rate))

    def check(self, model: NetworkModel) -> None:
        if len(self.budgets) != len(model.layers):
            raise ConfigError(f"plan has {len(self.budgets)} budgets for {len(model.layers)} layers")
        for i, (a, layer) in enumerate(zip(self.budgets, model.layers)):
            if not 1 <= a <= layer.weight.size:
                raise ConfigError(f"layer {i}: budget {a} outside [1, {layer.weight.size}]")


@dataclass
class AdmmState:
    theta_prime: list[np.ndarray]
    duals: list[np.ndarray]
    rho: list[float]
    admm_iter: int = 0

    @classmethod
    def init(cls, model: NetworkModel, plan: SparsityPlan, rho: float = 0.01) -> "AdmmState":
        """theta' = projection of the current weights, zero duals."""
        if not 0 < rho <= 1:
            raise ParameterError("rho must lie in (0, 1]")
        return cls([project_l0(l.weight, a) for l, a in zip(model.layers, plan.budgets)],
                   [np.zeros_like(l.weight) for l in model.layers],
                   [float(rho)] * len(model.layers))

    def copy(self) -> "AdmmState":
        return AdmmState([t.copy() for t in self.theta_prime], [u.copy() for u in self.duals],
                         list(self.rho), self.admm_iter)


def feasibility_gap(model: NetworkModel, state: AdmmState) -> float:
    """sum_l ||W_l - W'_l||_2"""
    return float(sum(np.linalg.norm(l.weight - t) for l, t in zip(model.layers, state.theta_prime)))


@dataclass(frozen=True)
class PruneMask:
    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(np.asarray(m, dtype=np.uint8) for m in self.masks))
        for m in self.masks:
            if np.any(m > 1):
                raise ParameterError("mask entries must be 0 or 1")

    @property
    def popcounts(self) -> list[int]:
        return [int(m.sum()) for m in self.masks]

    def check(self, model: NetworkModel) -> None:
        if len(self.masks) != len(model.layers):
            raise ShapeError(f"mask has {len(self.masks)} layers, model has {len(model.layers)}")
        for i, (m, l) in enumerate(zip(self.masks, model.layers)):
            if m.shape != l.weight.shape:
                raise ShapeError(f"layer {i}: mask shape {m.shape} != weight shape {l.weight.shape}")

    def apply(self, model: NetworkModel) -> NetworkModel:
        self.check(model)
        for m, l in zip(self.masks, model.layers):
            l.weight[m == 0] = 0.0
        return model


def extract_mask(model: NetworkModel, plan: SparsityPlan) -> PruneMask:
    return PruneMask(tuple((project_l0(l.weight, a) != 0).astype(np.uint8)
                           for l, a in zip(model.layers, plan.budgets)))


@dataclass(frozen=True)
class PruneSchedule:
    admm_epochs: int = 50
    finetune_epochs: int = 20
    epochs_per_admm_iter: int = 3
    rho_init: float = 0.01
    rho_growth: float = 1.35
    rho_cap: float = 1.0
    lr_prune: float = 0.0005
    lr_finetune: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    scheduler: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        for f in ("admm_epochs", "finetune_epochs", "epochs_per_admm_iter"):
            if getattr(self, f) < 1:
                raise ConfigError("must be at least 1", f"schedule.{f}")
        if not self.rho_growth > 1:
            raise ConfigError("must exceed 1", "schedule.rho_growth")
        if not 0 < self.rho_init <= self.rho_cap <= 1:
            raise ConfigError("need 0 < rho_init <= rho_cap <= 1", "schedule.rho_cap")
        if self.scheduler not in ("cosine", "constant"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}", "schedule.scheduler")
        if self.lr_prune < 0 or self.lr_finetune < 0:
            raise ConfigError("learning rates must be non-negative", "schedule")

    def batch_plan(self) -> BatchPlan:
        return BatchPlan(self.batch_size, self.seed, drop_last=True)


def learning_rate(base: float, epoch: int, total: int, scheduler: str = "cosine") -> float:
    """Per-epoch cosine annealing; ``epoch`` counts from 1."""
    if scheduler == "constant" or total <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / total))


@dataclass
class TeacherSignal:
    """Teacher model plus its logits cached over the training set."""

    model: Optional[NetworkModel]
    cached: Optional[np.ndarray] = None

    @classmethod
    def for_dataset(cls, teacher: Optional[NetworkModel], data: Dataset) -> "TeacherSignal":
        if teacher is None:
            return cls(None)
        return cls(teacher, forward(teacher, data.inputs).logits)

    def logits(self, idx, x, replaced=None):
        if self.model is None:
            return None
        out = self.cached[idx] if self.cached is not None else forward(self.model, x).logits
        if replaced is not None and len(replaced):
            out = out.copy()
            out[replaced] = forward(self.model, x[replaced]).logits
        return out


@dataclass
class MixConfig:
    ratio: float = 0.0
    attack: AttackConfig = field(default_factory=lambda: AttackConfig("pgd", 0.3, 0.01, 10, random_start=True))


def mix_ratio_batch(batch: np.ndarray, labels: np.ndarray, p: float, model: NetworkModel,
                    attack_cfg: AttackConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Replace a uniform floor(p * n)-subset of the batch by adversarial examples
    against ``model``. Returns the mixed batch and the replaced row indices."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError("mix ratio must lie in [0, 1]")
    n = batch.shape[0]
    m = int(math.floor(p * n))
    if m == 0:
        return batch, np.empty(0, dtype=np.int64)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    out = batch.copy()
    out[rows] = attack(model, batch[rows], labels[rows], attack_cfg, rng).inputs
    return out, rows


def train_epoch(model: NetworkModel, optimizer: SGD, data: Dataset, teacher: TeacherSignal,
                weights: LossWeights, plan: BatchPlan, epoch: int, lr: float,
                state: Optional[AdmmState] = None, masks: Optional[Sequence[np.ndarray]] = None,
                mix: Optional[MixConfig] = None, measure: bool = False) -> LossBreakdown:
    """One pass of SGD on the pruning objective; returns the mean breakdown."""
    parts = []
    rng = np.random.default_rng([plan.seed, epoch, 1])
    for x, y, idx in batches(data, plan, epoch):
        replaced = None
        if mix is not None and mix.ratio > 0:
            x, replaced = mix_ratio_batch(x, y, mix.ratio, model, mix.attack, rng)
        t = teacher.logits(idx, x, replaced)
        b, grads = pwoa_loss(model, x, y, t, weights, state, measure=measure)
        if not math.isfinite(b.total):
            raise NumericError(f"non-finite loss in epoch {epoch}")
        optimizer.step(model, grads, lr, masks)
        parts.append(b)
    return LossBreakdown.mean(parts)


def evaluate_epoch_losses(model: NetworkModel, data: Dataset, teacher: TeacherSignal,
                          weights: LossWeights, plan: BatchPlan, state: Optional[AdmmState] = None,
                          measure: bool = False) -> LossBreakdown:
    """Mean breakdown over one pass of the epoch-0 batches without updating."""
    parts = []
    for x, y, idx in batches(data, plan, 0):
        parts.append(pwoa_loss(model, x, y, teacher.logits(idx, x), weights, state,
                               measure=measure, need_grad=False)[0])
    return LossBreakdown.mean(parts)


EpochHook = Callable[[int, LossBreakdown], Optional[LossWeights]]


def admm_iteration(model: NetworkModel, state: AdmmState, plan: SparsityPlan, data: Dataset,
                   teacher: TeacherSignal, weights: LossWeights, sched: PruneSchedule, *,
                   optimizer: SGD, first_epoch: int = 1, n_epochs: Optional[int] = None,
                   mix: Optional[MixConfig] = None, on_epoch: Optional[EpochHook] = None,
                   measure: bool = False) -> tuple[NetworkModel, AdmmState, LossWeights]:
    """Primal SGD epochs on L_PwoA + L_ADMM, then projection, dual ascent and
    rho growth. ``on_epoch`` may return new loss weights (auto-tuning); the
    possibly-updated weights are returned."""
    n_epochs = sched.epochs_per_admm_iter if n_epochs is None else n_epochs
    bp = sched.batch_plan()
    for e in range(first_epoch, first_epoch + n_epochs):
        lr = learning_rate(sched.lr_prune, e, sched.admm_epochs, sched.scheduler)
        b = train_epoch(model, optimizer, data, teacher, weights, bp, e, lr, state, mix=mix, measure=measure)
        if on_epoch is not None:
            weights = on_epoch(e, b) or weights
    admm_update(model, state, plan, sched)
    return model, state, weights


def admm_update(model: NetworkModel, state: AdmmState, plan: SparsityPlan, sched: PruneSchedule) -> AdmmState:
    """theta' <- Pi(theta + u); u <- u + theta - theta'; rho <- min(cap, growth * rho)."""
    for i, (layer, a) in enumerate(zip(model.layers, plan.budgets)):
        state.theta_prime[i] = project_l0(layer.weight + state.duals[i], a)
        state.duals[i] = state.duals[i] + (layer.weight - state.theta_prime[i])
        state.rho[i] = min(sched.rho_cap, state.rho[i] * sched.rho_growth)
    state.admm_iter += 1
    return state


def masked_finetune(model: NetworkModel, mask: PruneMask, data: Dataset, teacher: TeacherSignal,
                    weights: LossWeights, sched: PruneSchedule, *, first_epoch: int = 1,
                    mix: Optional[MixConfig] = None,
                    on_epoch: Optional[Callable[[int, LossBreakdown], None]] = None) -> NetworkModel:
    """SGD with gradients multiplied by the mask; pruned weights stay exactly zero."""
    mask.apply(model)
    opt = SGD(model, sched.momentum, sched.weight_decay)
    bp = sched.batch_plan()
    for k in range(1, sched.finetune_epochs + 1):
        e = first_epoch + k - 1
        lr = learning_rate(sched.lr_finetune, k, sched.finetune_epochs, sched.scheduler)
        b = train_epoch(model, opt, data, teacher, weights, bp, e, lr, masks=mask.masks, mix=mix)
        if on_epoch is not None:
            on_epoch(e, b)
    return model
