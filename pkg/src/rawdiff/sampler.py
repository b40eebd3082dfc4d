"""Reverse-generation loop: iterate the one-step DDIM update from t = T down
to 1 while maintaining the recursive clean-estimate condition (tmc channel:
the denoiser's previous clean-image estimate fed back into the next step)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .condition import ConditionOutput
from .diffusion import StepInputs, ddim_step, predict_x0
from .net import DenoiserUNet
from .schedule import DiffusionSchedule

# (x_t, cond, tmc_or_None, t) -> eps_hat, all numpy rank-4 arrays
DenoiseFn = Callable[[np.ndarray, np.ndarray, Optional[np.ndarray], int], np.ndarray]


@dataclass
class SampleTrace:
    """Full reverse trajectory, recorded top-down: states[0] is x_T,
    states[-1] is the returned x_0; tmc_sequence[i] is mu_bar at step T-i."""

    states: List[np.ndarray] = field(default_factory=list)
    tmc_sequence: List[np.ndarray] = field(default_factory=list)
    seed: int = 0


def torch_denoiser(model: DenoiserUNet) -> DenoiseFn:
    """Adapter exposing a torch model as a pure numpy denoise function."""
    dtype = next(model.parameters()).dtype

    def fn(x_t, cond, tmc, t):
        with torch.no_grad():
            out = model(
                torch.from_numpy(np.ascontiguousarray(x_t)).to(dtype),
                torch.from_numpy(np.ascontiguousarray(cond)).to(dtype),
                None if tmc is None else torch.from_numpy(np.ascontiguousarray(tmc)).to(dtype),
                t)
        return out.numpy()

    return fn


def sample(denoise_fn: DenoiseFn, condition: ConditionOutput, schedule: DiffusionSchedule,
           seed: int, tmc_enabled: bool = True, tmc_init: str = "condition",
           capture_trace: bool = False, batch: int = 1,
           ) -> Tuple[np.ndarray, Optional[SampleTrace]]:
    """Run the conditional reverse chain and return x_0 (plus the trace).

    The TMC slot entering step T is the condition image by default ("condition"),
    or zeros ("zeros") for comparison; each subsequent step receives the previous
    step's clean-image estimate.  With the TMC disabled the denoiser is called
    without the extra channel.  All stochasticity (x_T and any sigma_t noise)
    comes from a generator seeded with ``seed``, so eta = 0 runs are bitwise
    reproducible.
    """
    if tmc_init not in ("condition", "zeros"):
        raise ValueError(f"unknown tmc_init {tmc_init!r}")
    cond = np.asarray(condition.image, dtype=np.float64)
    if cond.ndim == 3:
        cond = cond[None]
    if cond.ndim != 4:
        raise ValueError(f"condition image must be rank 3 or 4, got shape {cond.shape}")
    if batch > 1 and cond.shape[0] == 1:
        cond = np.repeat(cond, batch, axis=0)
    shape = cond.shape

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    mu_bar = cond.copy() if tmc_init == "condition" else np.zeros(shape)

    trace = SampleTrace(seed=seed) if capture_trace else None
    if trace is not None:
        trace.states.append(x.copy())

    for t in range(schedule.T, 0, -1):
        eps_hat = denoise_fn(x, cond, mu_bar if tmc_enabled else None, t)
        if eps_hat.shape != x.shape:
            raise ValueError(f"denoiser returned shape {eps_hat.shape}, expected {x.shape}")
        mu_bar = predict_x0(x, eps_hat, t, schedule)
        noise = rng.standard_normal(shape) if schedule.sigma[t] > 0 else None
        x = ddim_step(StepInputs(x_t=x, eps_hat=eps_hat, t=t, noise=noise), schedule)
        if trace is not None:
            trace.states.append(x.copy())
            if tmc_enabled:
                trace.tmc_sequence.append(mu_bar.copy())

    return x, trace


def sample_model(model: DenoiserUNet, condition: ConditionOutput, schedule: DiffusionSchedule,
                 seed: int, **kwargs) -> Tuple[np.ndarray, Optional[SampleTrace]]:
    """Convenience wrapper: sample with a torch denoiser, inferring the TMC flag
    from the architecture and checking shape agreement up front."""
    if schedule.T != model.T:
        raise ValueError(f"schedule T={schedule.T} does not match model T={model.T}")
    cond = np.asarray(condition.image)
    ch = cond.shape[0] if cond.ndim == 3 else cond.shape[1]
    if ch != model.config.out_channels:
        raise ValueError(
            f"condition has {ch} channels, model expects {model.config.out_channels}")
    kwargs.setdefault("tmc_enabled", model.config.tmc_enabled)
    return sample(torch_denoiser(model), condition, schedule, seed, **kwargs)
