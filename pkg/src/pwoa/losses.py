"""Cross-entropy, distillation, HBaR and ADMM proximal losses and their sum.

The pruning objective is ``lambda_kd * L_D + L_H`` (plus an optional
``lambda_ce * L_CE``), augmented during the ADMM stage by the proximal term
``sum_l rho_l / 2 * ||W_l - W'_l + U_l||_F^2`` on layer weights (biases are
never constrained).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .data import check_one_hot
from .errors import ConfigError, ParameterError, ShapeError
from .hsic import hbar_terms
from .nn import GradientSet, NetworkModel, backward, forward, log_softmax_tempered

if TYPE_CHECKING:
    from .admm import AdmmState


@dataclass(frozen=True)
class LossWeights:
    lambda_kd: float = 0.0
    lambda_x: float = 0.0
    lambda_y: float = 0.0
    lambda_ce: float = 0.0
    tau: float = 30.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError("tau must be positive")
        for f in ("lambda_kd", "lambda_x", "lambda_y", "lambda_ce"):
            v = getattr(self, f)
            if not (v >= 0 and math.isfinite(v)):
                raise ParameterError(f"{f} must be finite and non-negative")


# per-dataset presets for the pruning objective
LOSS_PRESETS = {
    "mnist": LossWeights(lambda_kd=10.0, lambda_x=4e-4, lambda_y=1e-4, tau=30.0),
    "cifar10-like": LossWeights(lambda_kd=10.0, lambda_x=2e-5, lambda_y=1e-4, tau=30.0),
    "cifar100-like": LossWeights(lambda_kd=1000.0, lambda_x=5e-7, lambda_y=2.5e-6, tau=30.0),
}
HBAR_RATIOS = {"mnist": (4.0, 1.0), "cifar10-like": (1.0, 5.0), "cifar100-like": (1.0, 5.0)}


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values. ``ce``, ``kd`` and the HSIC sums are unweighted;
    ``hbar`` and ``admm`` already carry their weights."""

    total: float = 0.0
    ce: float = 0.0
    kd: float = 0.0
    hbar: float = 0.0
    admm: float = 0.0
    hsic_x: float = 0.0
    hsic_y: float = 0.0

    @staticmethod
    def mean(items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return LossBreakdown()
        return LossBreakdown(**{f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(LossBreakdown)})


def ce_loss(logits: np.ndarray, labels_onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``(softmax - labels) / n``."""
    if logits.shape != labels_onehot.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {labels_onehot.shape}")
    check_one_hot(labels_onehot)
    n = logits.shape[0]
    logp = log_softmax_tempered(logits, 1.0)
    loss = -float(np.sum(labels_onehot * logp)) / n
    return loss, (np.exp(logp) - labels_onehot) / n


def kd_loss(student_logits: np.ndarray, teacher_logits: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """tau^2 * mean KL(teacher^tau || student^tau); teacher is a constant."""
    if not tau > 0:
        raise ParameterError("tau must be positive")
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(f"student {student_logits.shape} vs teacher {teacher_logits.shape}")
    n = student_logits.shape[0]
    logp_s = log_softmax_tempered(student_logits, tau)
    logp_t = log_softmax_tempered(teacher_logits, tau)
    p_t = np.exp(logp_t)
    kl = float(np.sum(p_t * (logp_t - logp_s)))
    # d/dz_s of tau^2 KL = tau * (p_s - p_t)
    grad = tau * (np.exp(logp_s) - p_t) / n
    return tau * tau * kl / n, grad


def admm_proximal_loss(model: NetworkModel, state: "AdmmState") -> tuple[float, GradientSet]:
    if len(state.theta_prime) != len(model.layers):
        raise ShapeError("ADMM state does not match the model's layer count")
    value = 0.0
    gw = []
    for layer, tp, u, rho in zip(model.layers, state.theta_prime, state.duals, state.rho):
        if tp.shape != layer.weight.shape or u.shape != layer.weight.shape:
            raise ShapeError("ADMM state shapes do not match the model")
        r = layer.weight - tp + u
        value += 0.5 * rho * float(np.sum(r * r))
        gw.append(rho * r)
    return value, GradientSet(gw, [np.zeros_like(l.bias) for l in model.layers])


def pwoa_loss(model: NetworkModel, batch: np.ndarray, labels: np.ndarray,
              teacher_logits: Optional[np.ndarray], weights: LossWeights,
              state: Optional["AdmmState"] = None, measure: bool = False,
              need_grad: bool = True) -> tuple[LossBreakdown, Optional[GradientSet]]:
    """All active terms from one forward and one backward pass.

    ``measure`` forces the unweighted HSIC sums to be evaluated even when the
    HBaR weights are zero (used by :func:`autotune_lambdas`).
    """
    if weights.lambda_kd > 0 and teacher_logits is None:
        raise ConfigError("distillation weight is positive but no teacher logits were given")
    trace = forward(model, batch)
    logits = trace.logits
    g_logits = np.zeros_like(logits)

    ce, g = ce_loss(logits, labels)
    if weights.lambda_ce:
        g_logits += weights.lambda_ce * g

    kd = 0.0
    if teacher_logits is not None:
        kd, g = kd_loss(logits, teacher_logits, weights.tau)
        if weights.lambda_kd:
            g_logits += weights.lambda_kd * g

    hb = hbar_terms(trace, batch, labels, weights.lambda_x, weights.lambda_y,
                    need_grad=need_grad, measure=measure)

    admm = 0.0
    admm_grads = None
    if state is not None:
        admm, admm_grads = admm_proximal_loss(model, state)

    total = weights.lambda_ce * ce + weights.lambda_kd * kd + hb.value + admm
    breakdown = LossBreakdown(total=total, ce=ce, kd=kd, hbar=hb.value, admm=admm,
                              hsic_x=float(sum(hb.hsic_x)), hsic_y=float(sum(hb.hsic_y)))
    if not need_grad:
        return breakdown, None
    grads = backward(model, trace, g_logits, False, hb.z_grads)
    if admm_grads is not None:
        grads = grads + admm_grads
    return breakdown, grads


def autotune_lambdas(epoch1: LossBreakdown, dataset_ratio: tuple[float, float],
                     base: LossWeights, admm_to_kd: float = 10.0, kd_to_hbar: float = 10.0,
                     clip: Optional[float] = None) -> LossWeights:
    """Pick lambda_kd so L_ADMM / (lambda_kd L_D) = 10, then scale the HBaR
    weights at the fixed ratio so (lambda_kd L_D) / |L_H| = 10.

    ``epoch1`` must hold unweighted ``kd`` and HSIC sums and the ``admm``
    term measured at the end of the first epoch. Degenerate measurements
    fall back to ``base`` with a warning.

    With ``clip`` set, lambda_kd is confined to
    ``[base.lambda_kd / clip, base.lambda_kd * clip]`` (with a warning when the
    bound is active) before the HBaR weights are derived from it. A student
    that starts as a copy of its teacher has L_D close to 0 after one epoch,
    so the unclipped ratio can be orders of magnitude beyond what SGD at the
    preset learning rate tolerates.
    """
    rx, ry = dataset_ratio
    vals = (epoch1.kd, epoch1.admm, epoch1.hsic_x, epoch1.hsic_y)
    if not all(math.isfinite(v) for v in vals) or epoch1.kd <= 0 or epoch1.admm <= 0:
        warnings.warn("cannot auto-tune lambdas from epoch-1 losses; keeping manual weights", RuntimeWarning)
        return base
    lam = epoch1.admm / (admm_to_kd * epoch1.kd)
    if clip is not None and base.lambda_kd > 0:
        if not clip >= 1:
            raise ParameterError("autotune clip factor must be at least 1")
        lo, hi = base.lambda_kd / clip, base.lambda_kd * clip
        if not lo <= lam <= hi:
            warnings.warn(f"auto-tuned lambda {lam:.4g} clipped to [{lo:.4g}, {hi:.4g}]", RuntimeWarning)
            lam = min(max(lam, lo), hi)
    unit_hbar = rx * epoch1.hsic_x - ry * epoch1.hsic_y
    if unit_hbar == 0 or not math.isfinite(unit_hbar):
        warnings.warn("HBaR term is zero at epoch 1; keeping manual HBaR weights", RuntimeWarning)
        return replace(base, lambda_kd=lam)
    c = lam * epoch1.kd / (kd_to_hbar * abs(unit_hbar))
    return replace(base, lambda_kd=lam, lambda_x=c * rx, lambda_y=c * ry)
