"""Diffusion noise schedule: cumulative signal-retention alphas and per-step sigmas."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Immutable schedule shared by the forward process, sampler and trainer.

    ``alpha`` has length T+1 with ``alpha[0] == 1`` (the t=0 boundary); entries
    1..T are strictly decreasing in (0, 1).  ``sigma`` is stored with the same
    length so that ``sigma[t]`` is the noise scale of step t; ``sigma[0]`` is a
    padding zero and never used.
    """

    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        validate_schedule(self)

    def sqrt_alpha(self, t: int) -> float:
        return math.sqrt(float(self.alpha[t]))

    def sqrt_one_minus_alpha(self, t: int) -> float:
        return math.sqrt(1.0 - float(self.alpha[t]))


def validate_schedule(s: DiffusionSchedule) -> None:
    if s.T < 1:
        raise ValueError(f"T must be >= 1, got {s.T}")
    if s.alpha.shape != (s.T + 1,):
        raise ValueError(f"alpha must have length T+1={s.T + 1}, got {s.alpha.shape}")
    if s.sigma.shape != (s.T + 1,):
        raise ValueError(f"sigma must have length T+1={s.T + 1}, got {s.sigma.shape}")
    if s.alpha[0] != 1.0:
        raise ValueError("alpha[0] must be exactly 1")
    if np.any(s.alpha[1:] <= 0.0) or np.any(s.alpha[1:] > 1.0):
        raise ValueError("alpha[1:] must lie in (0, 1]")
    if np.any(np.diff(s.alpha) >= 0.0):
        raise ValueError("alpha must be strictly decreasing")
    if np.any(s.sigma < 0.0):
        raise ValueError("sigma must be nonnegative")
    if s.eta < 0.0:
        raise ValueError("eta must be nonnegative")
    # radicand of the residual term must stay real
    radicand = 1.0 - s.alpha[:-1] - s.sigma[1:] ** 2
    if np.any(radicand < -1e-12):
        raise ValueError("schedule violates 1 - alpha[t-1] - sigma[t]^2 >= 0")
    if s.eta == 0.0 and np.any(s.sigma != 0.0):
        raise ValueError("eta = 0 requires all sigma = 0")


def sigma_from_eta(alpha: np.ndarray, eta: float) -> np.ndarray:
    """Per-step noise scales from the stochasticity knob.

    sigma_t = eta * sqrt((1 - alpha[t-1]) / (1 - alpha[t])) * sqrt(1 - alpha[t] / alpha[t-1])

    Returns a vector of the same length as ``alpha`` with a leading padding
    zero, so ``result[t]`` is sigma_t for t in 1..T.  eta = 0 yields exact
    zeros (deterministic implicit sampling).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    T = len(alpha) - 1
    sigma = np.zeros(T + 1)
    if eta == 0.0:
        return sigma
    prev, cur = alpha[:-1], alpha[1:]
    sigma[1:] = eta * np.sqrt((1.0 - prev) / (1.0 - cur)) * np.sqrt(1.0 - cur / prev)
    radicand = 1.0 - prev - sigma[1:] ** 2
    if np.any(radicand < -1e-12):
        raise ValueError("sigma violates the residual-term constraint")
    return sigma


def make_schedule(T: int, beta_min: float = 0.02, beta_max: float = 0.35,
                  eta: float = 0.0) -> DiffusionSchedule:
    """Linear-beta cumulative-product schedule.

    alpha[t] = prod_{s=1..t} (1 - beta_s) with beta linearly spaced from
    beta_min to beta_max over T steps.  Defaults are tuned for short chains
    (T around 50): alpha[T] ends below 1e-3 so the reverse chain can start
    from a standard-normal draw.
    """
    if T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    beta = np.linspace(beta_min, beta_max, T)
    alpha = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    sigma = sigma_from_eta(alpha, eta)
    return DiffusionSchedule(T=T, alpha=alpha, sigma=sigma, eta=eta)


def schedule_to_csv(schedule: DiffusionSchedule, path) -> None:
    """Dump (t, alpha, sigma) rows for inspection."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha", "sigma"])
        for t in range(schedule.T + 1):
            w.writerow([t, repr(float(schedule.alpha[t])), repr(float(schedule.sigma[t]))])
