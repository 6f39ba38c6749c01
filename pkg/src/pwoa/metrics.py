"""Accuracy, HSIC-plane points and the per-epoch trace CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import EstimatorError, FormatError, ParameterError
from .hsic import LINEAR, KernelSpec, hsic_empirical, kernel_matrix
from .nn import NetworkModel, forward

STAGES = ("admm", "finetune")
LOSS_COLUMNS = ("loss_total", "loss_kd", "loss_hbar", "loss_admm")
TAIL_COLUMNS = LOSS_COLUMNS + ("hsic_xz", "hsic_yz", "feas_gap")


def natural_accuracy(model: NetworkModel, dataset: Dataset, batch_size: int = 1000) -> float:
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        correct += int(np.sum(forward(model, x).logits.argmax(axis=1) == y.argmax(axis=1)))
    return 100.0 * correct / len(dataset)


def hsic_plane_point(model: NetworkModel, batch_x: np.ndarray, batch_y: np.ndarray) -> tuple[float, float]:
    """(HSIC(X, Z_L), HSIC(Y, Z_L)) for the last hidden representation Z_L.

    Gaussian kernels with sigma = 5 sqrt(d) on X and Z_L, linear on one-hot Y.
    """
    if batch_x.shape[0] < 2:
        raise EstimatorError("HSIC needs at least two samples")
    z = forward(model, batch_x).last_hidden
    kz = kernel_matrix(z, KernelSpec.gaussian_for_dim(z.shape[1]))
    kx = kernel_matrix(batch_x, KernelSpec.gaussian_for_dim(batch_x.shape[1]))
    ky = kernel_matrix(batch_y, LINEAR)
    return hsic_empirical(kx, kz), hsic_empirical(ky, kz)


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    natural_acc: float
    robust_acc: dict[str, float] = field(default_factory=dict)
    loss_total: float = 0.0
    loss_kd: float = 0.0
    loss_hbar: float = 0.0
    loss_admm: float = 0.0
    hsic_xz: float = 0.0
    hsic_yz: float = 0.0
    feas_gap: float = 0.0

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ParameterError(f"unknown stage {self.stage!r}")
        for name, v in [("natural_acc", self.natural_acc)] + [(f"{k}_acc", v) for k, v in self.robust_acc.items()]:
            if not 0.0 <= v <= 100.0:
                raise ParameterError(f"{name}={v} outside [0, 100]")
        for name in TAIL_COLUMNS:
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} is not finite")


def trace_header(attacks: Sequence[str]) -> list[str]:
    return ["epoch", "stage", "natural_acc"] + [f"{a}_acc" for a in attacks] + list(TAIL_COLUMNS)


def _fmt(v: float) -> str:
    return f"{v:.17e}"


def write_trace_csv(records: Sequence[EpochRecord], path) -> None:
    if not records:
        raise ParameterError("no records to write")
    attacks = list(records[0].robust_acc)
    last: dict[str, int] = {}
    for r in records:
        r.validate()
        if list(r.robust_acc) != attacks:
            raise ParameterError("all records must report the same attacks")
        if r.stage in last and r.epoch <= last[r.stage]:
            raise ParameterError(f"epoch {r.epoch} does not increase within stage {r.stage!r}")
        last[r.stage] = r.epoch
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(attacks))
        for r in records:
            w.writerow([str(r.epoch), r.stage, _fmt(r.natural_acc)]
                       + [_fmt(r.robust_acc[a]) for a in attacks]
                       + [_fmt(getattr(r, c)) for c in TAIL_COLUMNS])


def read_trace_csv(path) -> list[EpochRecord]:
    """Parse a trace CSV; malformed content raises FormatError naming the line."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty trace", line=1)
    header = rows[0]
    n_att = len(header) - 3 - len(TAIL_COLUMNS)
    attacks = [h[:-4] for h in header[3:3 + max(n_att, 0)]]
    if n_att < 0 or header != trace_header(attacks) or not all(h.endswith("_acc") for h in header[3:3 + n_att]):
        raise FormatError(f"{path}:1: unexpected header", line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            vals = [float(v) for v in row[2:]]
            rec = EpochRecord(int(row[0]), row[1], vals[0], dict(zip(attacks, vals[1:1 + n_att])),
                              *vals[1 + n_att:])
            rec.validate()
        except (ValueError, ParameterError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}", line=lineno) from None
        out.append(rec)
    return out
