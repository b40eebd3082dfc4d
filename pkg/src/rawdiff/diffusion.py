"""Stateless diffusion algebra: forward corruption and the one-step DDIM update.

All operations are elementwise and work on any array type supporting scalar
multiplication and addition (numpy arrays or torch tensors).  Conditioning
never enters here: the denoiser output ``eps_hat`` is consumed opaquely, so an
analytic oracle denoiser drives exactly the same code path as the learned one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .schedule import DiffusionSchedule


def _check_t(t: int, schedule: DiffusionSchedule) -> None:
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside schedule range 1..{schedule.T}")


def _check_shapes(*arrays) -> None:
    shapes = {tuple(a.shape) for a in arrays if a is not None}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


@dataclass
class StepInputs:
    """Everything one reverse step consumes. ``noise`` absent means zero."""

    x_t: object
    eps_hat: object
    t: int
    noise: Optional[object] = None

    def __post_init__(self):
        _check_shapes(self.x_t, self.eps_hat, self.noise)


def diffuse(x0, t: int, eps, schedule: DiffusionSchedule):
    """Forward corruption: sqrt(alpha_t) * x0 + sqrt(1 - alpha_t) * eps."""
    _check_t(t, schedule)
    _check_shapes(x0, eps)
    a = float(schedule.alpha[t])
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def predict_x0(x_t, eps_hat, t: int, schedule: DiffusionSchedule):
    """Clean-image estimate: (x_t - sqrt(1 - alpha_t) * eps_hat) / sqrt(alpha_t)."""
    _check_t(t, schedule)
    _check_shapes(x_t, eps_hat)
    a = float(schedule.alpha[t])
    return (x_t - math.sqrt(1.0 - a) * eps_hat) / math.sqrt(a)


def residual_term(eps_hat, t: int, schedule: DiffusionSchedule):
    """Direction-to-x_t term: sqrt(1 - alpha_{t-1} - sigma_t^2) * eps_hat."""
    _check_t(t, schedule)
    radicand = 1.0 - float(schedule.alpha[t - 1]) - float(schedule.sigma[t]) ** 2
    if radicand < 0.0:
        if radicand < -1e-12:
            raise ValueError(f"negative radicand {radicand} at t={t}")
        radicand = 0.0
    return math.sqrt(radicand) * eps_hat


def ddim_step(inputs: StepInputs, schedule: DiffusionSchedule):
    """One reverse step: sqrt(alpha_{t-1}) * x0_hat + residual + sigma_t * noise.

    With sigma_t = 0 the update is a deterministic function of (x_t, eps_hat, t).
    """
    t = inputs.t
    _check_t(t, schedule)
    x0_hat = predict_x0(inputs.x_t, inputs.eps_hat, t, schedule)
    out = math.sqrt(float(schedule.alpha[t - 1])) * x0_hat + residual_term(inputs.eps_hat, t, schedule)
    sig = float(schedule.sigma[t])
    if sig > 0.0 and inputs.noise is not None:
        out = out + sig * inputs.noise
    return out
