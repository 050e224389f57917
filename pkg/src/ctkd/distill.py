"""Lattice-level knowledge-distillation loss and the combined training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore
from .diffcore import DimensionError, Tensor


class DistillError(Exception):
    pass


@dataclass
class DistillationConfig:
    alpha: float = 0.02
    temperature: float = 1.0

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DistillError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.temperature <= 0:
            raise DistillError(f"temperature must be positive, got {self.temperature}")


@dataclass
class LossBreakdown:
    transducer_loss: float
    kd_loss: float
    total: float


def kd_loss(teacher_log_probs: np.ndarray, student_log_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """KL divergence from student to teacher, summed over every lattice node.

    Returns the loss and its gradient w.r.t. the student log-probabilities;
    the teacher is treated as a constant.
    """
    t_lp = np.asarray(teacher_log_probs, dtype=np.float64)
    s_lp = np.asarray(student_log_probs, dtype=np.float64)
    if t_lp.shape != s_lp.shape:
        raise DimensionError(f"teacher lattice {t_lp.shape} vs student lattice {s_lp.shape}")
    t_p = np.exp(t_lp)
    loss = float(np.sum(t_p * (t_lp - s_lp)))
    grad = -t_p
    return max(loss, 0.0), grad


def kd_loss_node(teacher_log_probs: np.ndarray, student_lattice: Tensor) -> Tensor:
    """Scalar KD loss tensor differentiable w.r.t. the student lattice."""
    loss, grad = kd_loss(teacher_log_probs, student_lattice.data)

    def bwd(g):
        return (g * grad,)

    return diffcore.custom_node("kd_loss", (student_lattice,), loss, bwd)


def total_loss(transducer_loss: float, kd_loss_value: float, config: DistillationConfig) -> LossBreakdown:
    config.validate()
    total = (1.0 - config.alpha) * transducer_loss + config.alpha * kd_loss_value
    return LossBreakdown(transducer_loss=transducer_loss, kd_loss=kd_loss_value, total=total)
