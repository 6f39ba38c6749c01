"""Kernel matrices, the biased empirical HSIC and the HBaR penalty.

HSIC(X, Y) = tr(K_X H K_Y H) / (n - 1)^2 with H = I - 11^T / n.

Gradients w.r.t. a layer output Z flow through the Gaussian kernel on Z:
with A the (scaled, centered) kernel of the other variable and
G = -A * K_Z / (2 sigma^2), dHSIC/dz_i = 4 sum_j G_ij (z_i - z_j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EstimatorError, ParameterError, ShapeError
from .nn import ForwardTrace, GradientSet, NetworkModel, backward

SIGMA_SCALE = 5.0


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ParameterError(f"unknown kernel {self.kind!r}")
        if self.kind == "gaussian" and not (self.sigma is not None and self.sigma > 0):
            raise ParameterError("gaussian kernel needs sigma > 0")

    @classmethod
    def gaussian_for_dim(cls, d: int, scale: float = SIGMA_SCALE) -> "KernelSpec":
        """sigma = scale * sqrt(d)."""
        return cls("gaussian", scale * np.sqrt(d))


LINEAR = KernelSpec("linear")


def sq_distances(batch: np.ndarray) -> np.ndarray:
    x = batch - batch.mean(axis=0)
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    d = np.maximum((d + d.T) / 2.0, 0.0)
    np.fill_diagonal(d, 0.0)
    return d


def kernel_matrix(batch: np.ndarray, spec: KernelSpec) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("kernel input must be 2-D (n, d)")
    if x.shape[0] < 2:
        raise EstimatorError("HSIC needs at least two samples")
    if spec.kind == "linear":
        k = x @ x.T
        return (k + k.T) / 2.0
    return np.exp(-sq_distances(x) / (2.0 * spec.sigma ** 2))


def center(k: np.ndarray) -> np.ndarray:
    """H K H without forming H."""
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def hsic_empirical(kx: np.ndarray, ky: np.ndarray) -> float:
    if kx.shape != ky.shape or kx.ndim != 2 or kx.shape[0] != kx.shape[1]:
        raise ShapeError(f"kernel shapes {kx.shape} and {ky.shape} do not match")
    n = kx.shape[0]
    if n < 2:
        raise EstimatorError("HSIC needs at least two samples")
    # tr(Kx H Ky H) = <H Kx H, Ky> for symmetric Ky
    return float(np.sum(center(kx) * ky) / (n - 1) ** 2)


def hsic(x: np.ndarray, y: np.ndarray, spec_x: KernelSpec, spec_y: KernelSpec) -> float:
    return hsic_empirical(kernel_matrix(x, spec_x), kernel_matrix(y, spec_y))


@dataclass
class HbarTerms:
    value: float
    hsic_x: list[float] = field(default_factory=list)
    hsic_y: list[float] = field(default_factory=list)
    z_grads: list[np.ndarray] = field(default_factory=list)


def default_specs(batch_x: np.ndarray) -> tuple[KernelSpec, KernelSpec]:
    """Gaussian kernel for X (sigma = 5 sqrt(d_X)) and linear for one-hot Y."""
    return KernelSpec.gaussian_for_dim(batch_x.shape[1]), LINEAR


def hbar_terms(trace: ForwardTrace, batch_x: np.ndarray, batch_y: np.ndarray,
               lambda_x: float, lambda_y: float,
               spec_x: Optional[KernelSpec] = None, spec_y: Optional[KernelSpec] = None,
               sigma_scale: float = SIGMA_SCALE, need_grad: bool = True,
               measure: bool = False) -> HbarTerms:
    """lambda_x * sum_l HSIC(X, Z_l) - lambda_y * sum_l HSIC(Y, Z_l) and dValue/dZ_l.

    With both weights zero the HSIC values are skipped (reported as 0)
    unless ``measure`` is set.
    """
    if lambda_x < 0 or lambda_y < 0:
        raise ParameterError("HBaR weights must be non-negative")
    n = batch_x.shape[0]
    if n < 2:
        raise EstimatorError("HSIC needs at least two samples")
    hidden = trace.hidden
    if lambda_x == 0 and lambda_y == 0 and not measure:
        return HbarTerms(0.0, [0.0] * len(hidden), [0.0] * len(hidden), [np.zeros_like(z) for z in hidden])
    dx, dy = default_specs(batch_x)
    ax = center(kernel_matrix(batch_x, spec_x or dx)) / (n - 1) ** 2
    ay = center(kernel_matrix(batch_y, spec_y or dy)) / (n - 1) ** 2
    a = lambda_x * ax - lambda_y * ay
    out = HbarTerms(0.0)
    for z in hidden:
        sigma = sigma_scale * np.sqrt(z.shape[1])
        kz = np.exp(-sq_distances(z) / (2.0 * sigma ** 2))
        hx = float(np.sum(ax * kz))
        hy = float(np.sum(ay * kz))
        out.hsic_x.append(hx)
        out.hsic_y.append(hy)
        out.value += lambda_x * hx - lambda_y * hy
        if need_grad and (lambda_x or lambda_y):
            g = -(a * kz) / (2.0 * sigma ** 2)
            out.z_grads.append(4.0 * (g.sum(axis=1, keepdims=True) * z - g @ z))
        elif need_grad:
            out.z_grads.append(np.zeros_like(z))
    return out


def hsic_penalty(model: NetworkModel, trace: ForwardTrace, batch_x: np.ndarray, batch_y: np.ndarray,
                 lambda_x: float, lambda_y: float,
                 spec_x: Optional[KernelSpec] = None,
                 spec_y: Optional[KernelSpec] = None) -> tuple[float, GradientSet]:
    """HBaR penalty value and its gradient w.r.t. the model parameters."""
    terms = hbar_terms(trace, batch_x, batch_y, lambda_x, lambda_y, spec_x, spec_y)
    grads = backward(model, trace, np.zeros_like(trace.logits), False, terms.z_grads)
    return terms.value, grads
