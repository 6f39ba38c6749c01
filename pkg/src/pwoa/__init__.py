"""Pruning adversarially robust networks by ADMM with self-distillation and an HSIC bottleneck."""

__version__ = "0.1.0"
