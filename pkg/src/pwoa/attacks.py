"""White-box l_inf evasion attacks: FGSM, PGD^m and PGD on the CW margin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ParameterError
from .losses import ce_loss
from .nn import NetworkModel, backward, forward

ATTACK_KINDS = ("fgsm", "pgd", "cw_pgd")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    radius: float = 0.3
    step_size: float = 0.01
    steps: int = 10
    random_start: bool = False
    clamp: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.radius <= 1.0:
            raise ParameterError("radius must lie in [0, 1]")
        if self.kind == "fgsm":
            # a single full-radius step
            object.__setattr__(self, "steps", 1)
            object.__setattr__(self, "step_size", self.radius)
        elif self.radius > 0 and not 0 < self.step_size <= 2 * self.radius:
            raise ParameterError("step_size must lie in (0, 2 * radius]")
        if self.steps < 1:
            raise ParameterError("steps must be at least 1")
        lo, hi = self.clamp
        if not lo < hi:
            raise ParameterError("clamp box must satisfy lo < hi")


@dataclass
class AdvBatch:
    inputs: np.ndarray
    success: np.ndarray
    labels: np.ndarray


def cw_margin_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``max_{j != y} z_j - z_y``; positive means misclassified."""
    n, k = logits.shape
    if k < 2:
        raise ParameterError("CW margin needs at least two classes")
    y = labels.argmax(axis=1)
    rows = np.arange(n)
    others = np.where(labels.astype(bool), -np.inf, logits)
    j = others.argmax(axis=1)
    margin = logits[rows, j] - logits[rows, y]
    grad = np.zeros_like(logits)
    grad[rows, j] = 1.0 / n
    grad[rows, y] -= 1.0 / n
    return float(margin.mean()), grad


def input_gradient(model: NetworkModel, x: np.ndarray, labels: np.ndarray, loss: str = "ce") -> tuple[float, np.ndarray]:
    trace = forward(model, x)
    value, g = (cw_margin_loss if loss == "cw" else ce_loss)(trace.logits, labels)
    return value, backward(model, trace, g, want_input_grad=True, want_param_grads=False).inputs


def _project(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    x = np.clip(x, x0 - cfg.radius, x0 + cfg.radius)
    return np.clip(x, *cfg.clamp)


def _result(model, x_adv, labels) -> AdvBatch:
    pred = forward(model, x_adv).logits.argmax(axis=1)
    return AdvBatch(x_adv, pred != labels.argmax(axis=1), labels)


def fgsm(model: NetworkModel, batch: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> AdvBatch:
    if cfg.kind != "fgsm":
        raise ParameterError("fgsm() needs an fgsm config")
    _, g = input_gradient(model, batch, labels)
    x = np.clip(batch + cfg.radius * np.sign(g), *cfg.clamp)
    return _result(model, x, labels)


def pgd(model: NetworkModel, batch: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
        rng: Optional[np.random.Generator] = None) -> AdvBatch:
    if cfg.kind not in ("pgd", "cw_pgd"):
        raise ParameterError("pgd() needs a pgd or cw_pgd config")
    loss = "cw" if cfg.kind == "cw_pgd" else "ce"
    x0 = batch
    x = x0
    if cfg.random_start:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        x = np.clip(x0 + rng.uniform(-cfg.radius, cfg.radius, size=x0.shape), *cfg.clamp)
    for _ in range(cfg.steps):
        _, g = input_gradient(model, x, labels, loss)
        x = _project(x + cfg.step_size * np.sign(g), x0, cfg)
    return _result(model, x, labels)


def attack(model: NetworkModel, batch: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
           rng: Optional[np.random.Generator] = None) -> AdvBatch:
    if cfg.kind == "fgsm":
        return fgsm(model, batch, labels, cfg)
    return pgd(model, batch, labels, cfg, rng)


def evaluate_attack(model: NetworkModel, dataset: Dataset, cfg: AttackConfig,
                    batch_size: int = 500) -> tuple[float, float]:
    """Accuracy (percent) and mean cross-entropy on attacked inputs."""
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    correct = 0
    loss = 0.0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        adv = attack(model, x, y, cfg, rng)
        correct += int(np.sum(~adv.success))
        loss += ce_loss(forward(model, adv.inputs).logits, y)[0] * x.shape[0]
    return 100.0 * correct / len(dataset), loss / len(dataset)


def robust_accuracy(model: NetworkModel, dataset: Dataset, cfg: AttackConfig, batch_size: int = 500) -> float:
    return evaluate_attack(model, dataset, cfg, batch_size)[0]
