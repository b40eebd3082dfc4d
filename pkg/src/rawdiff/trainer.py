"""Joint optimization of the denoiser and the Raw condition network under the
noise-prediction objective, with ADAM, cosine warm restarts (SGDR),
checkpointing and deterministic resume."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import data as data_mod
from .condition import PiRaw, pack_bayer, RawFrame
from .net import (CHECKPOINT_VERSION, DenoiserUNet, flatten_parameters,
                  load_flat_parameters)
from .schedule import DiffusionSchedule

TRAIN_CKPT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    steps: int = 2000
    sgdr_period: int = 500
    sgdr_mult: int = 2
    tmc_mode: str = "unrolled_depth1"  # teacher_forced | unrolled_depth1 | disabled
    seed: int = 0
    checkpoint_every: int = 1000
    lr_min: float = 0.0

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.sgdr_period, self.sgdr_mult) <= 0:
            raise ValueError("lr, batch_size and SGDR parameters must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.tmc_mode not in ("teacher_forced", "unrolled_depth1", "disabled"):
            raise ValueError(f"unknown tmc_mode {self.tmc_mode!r}")


def sgdr_lr(step: int, lr0: float, period: int, mult: int, lr_min: float = 0.0) -> float:
    """Closed-form cosine-annealing learning rate with warm restarts.

    Cycle k has length period * mult**k; within a cycle of length L at offset c
    the rate is lr_min + 0.5 * (lr0 - lr_min) * (1 + cos(pi * c / L)).
    """
    cycle_len = period
    offset = step
    while offset >= cycle_len:
        offset -= cycle_len
        cycle_len *= mult
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * offset / cycle_len))


def _per_item_coeff(values: np.ndarray, t_batch: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    coeff = values[t_batch]
    return torch.from_numpy(coeff).to(like.dtype).reshape(-1, 1, 1, 1)


def _forward_tmc(model: DenoiserUNet, x0: torch.Tensor, cond: torch.Tensor,
                 eps2: torch.Tensor, t_batch: np.ndarray,
                 schedule: DiffusionSchedule, mode: str) -> Optional[torch.Tensor]:
    """Produce the mu_bar channel fed to the denoiser at step t.

    teacher_forced: the ground truth x0 substitutes for the model's own
    estimate at every step.  unrolled_depth1: one extra gradient-free denoiser
    call at t+1 (itself teacher-forced) whose clean-image estimate becomes the
    condition; items already at t = T fall back to x0.
    """
    if mode == "disabled":
        return None
    if mode == "teacher_forced":
        return x0
    T = schedule.T
    t_up = np.minimum(t_batch + 1, T)
    sa = np.sqrt(schedule.alpha)
    s1a = np.sqrt(1.0 - schedule.alpha)
    with torch.no_grad():
        x_up = _per_item_coeff(sa, t_up, x0) * x0 + _per_item_coeff(s1a, t_up, x0) * eps2
        eps_hat = model(x_up, cond, x0, t_up.tolist())
        mu_bar = (x_up - _per_item_coeff(s1a, t_up, x0) * eps_hat) / _per_item_coeff(sa, t_up, x0)
        # items at the top of the chain are teacher-forced
        at_top = torch.from_numpy(t_batch == T).reshape(-1, 1, 1, 1)
        mu_bar = torch.where(at_top, x0, mu_bar)
    return mu_bar


def training_step(model: DenoiserUNet, pi_model: Optional[PiRaw], x0: torch.Tensor,
                  cond_input: torch.Tensor, schedule: DiffusionSchedule,
                  config: TrainConfig, optimizer: torch.optim.Optimizer,
                  np_rng: np.random.Generator, torch_gen: torch.Generator,
                  step: int) -> float:
    """One optimization step; returns the scalar loss.

    ``cond_input`` is the packed Raw stack (B, 4, h, w) when pi_model is given,
    otherwise the already-resolved sRGB condition (identity path).
    """
    batch = x0.shape[0]
    t_batch = np_rng.integers(1, schedule.T + 1, size=batch)
    eps = torch.randn(x0.shape, generator=torch_gen, dtype=x0.dtype)
    eps2 = torch.randn(x0.shape, generator=torch_gen, dtype=x0.dtype)

    cond = pi_model(cond_input) if pi_model is not None else cond_input

    sa = np.sqrt(schedule.alpha)
    s1a = np.sqrt(1.0 - schedule.alpha)
    x_t = _per_item_coeff(sa, t_batch, x0) * x0 + _per_item_coeff(s1a, t_batch, x0) * eps

    mu_bar = _forward_tmc(model, x0, cond.detach() if pi_model is not None else cond,
                          eps2, t_batch, schedule, config.tmc_mode)
    eps_hat = model(x_t, cond, mu_bar, t_batch.tolist())
    loss = torch.mean((eps - eps_hat) ** 2)

    if not torch.isfinite(loss):
        pnorm = float(torch.linalg.vector_norm(
            torch.cat([p.detach().reshape(-1) for p in model.parameters()])))
        raise RuntimeError(
            f"non-finite loss at step {step} (t draw {t_batch.tolist()}, "
            f"parameter norm {pnorm:.3e})")

    lr = sgdr_lr(step, config.lr, config.sgdr_period, config.sgdr_mult, config.lr_min)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


# --- dataset loading ---------------------------------------------------------

@dataclass
class TrainArrays:
    """In-memory toy dataset: targets and per-sample condition inputs."""

    x0: np.ndarray          # (N, C, H, W) ground truth sRGB
    cond: np.ndarray        # (N, C, H, W) sRGB condition or (N, 4, h, w) packed Raw
    raw_condition: bool


def load_training_arrays(manifest: data_mod.DatasetManifest, root, split: str = "train",
                         condition: str = "srgb") -> TrainArrays:
    """Flatten a manifest split into arrays: one sample per (scene, low-light
    entry) pair, targets from the x1 ground truth."""
    root = Path(root)
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"manifest has no {split!r} records")
    xs, cs = [], []
    for rec in records:
        gt = data_mod.load_png(root / next(g.srgb_path for g in rec.ground_truth if g.zoom == 1))
        for ll in rec.low_light:
            xs.append(gt)
            if condition == "srgb":
                cs.append(data_mod.load_png(root / ll.srgb_path))
            elif condition == "raw":
                plane = data_mod.load_raw_plane(root / ll.raw_path, ll.raw_shape,
                                                manifest.bit_depth, manifest.black_level,
                                                manifest.white_level)
                cs.append(pack_bayer(RawFrame(data=plane)))
            else:
                raise ValueError(f"unknown condition {condition!r}")
    return TrainArrays(x0=np.stack(xs), cond=np.stack(cs), raw_condition=(condition == "raw"))


# --- checkpointing and the fit loop ------------------------------------------

def _adam_state_arrays(optimizer: torch.optim.Optimizer) -> dict:
    arrays = {}
    i = 0
    for group in optimizer.param_groups:
        for p in group["params"]:
            st = optimizer.state.get(p, {})
            if st:
                arrays[f"m_{i}"] = st["exp_avg"].double().numpy()
                arrays[f"v_{i}"] = st["exp_avg_sq"].double().numpy()
                arrays[f"n_{i}"] = np.asarray(float(st["step"]))
            i += 1
    return arrays


def _restore_adam_state(optimizer: torch.optim.Optimizer, arrays: dict, dtype) -> None:
    i = 0
    for group in optimizer.param_groups:
        for p in group["params"]:
            if f"m_{i}" in arrays:
                optimizer.state[p] = {
                    "step": torch.tensor(float(arrays[f"n_{i}"])),
                    "exp_avg": torch.from_numpy(arrays[f"m_{i}"]).to(dtype).reshape(p.shape),
                    "exp_avg_sq": torch.from_numpy(arrays[f"v_{i}"]).to(dtype).reshape(p.shape),
                }
            i += 1


def save_train_checkpoint(path, model: DenoiserUNet, pi_model: Optional[PiRaw],
                          optimizer: torch.optim.Optimizer, step: int,
                          config: TrainConfig, np_rng: np.random.Generator,
                          torch_gen: torch.Generator) -> None:
    header = {
        "version": TRAIN_CKPT_VERSION,
        "net_version": CHECKPOINT_VERSION,
        "T": model.T,
        "config": asdict(model.config),
        "train_config": asdict(config),
        "step": step,
        "has_pi": pi_model is not None,
        "pi_init": None if pi_model is None else {
            "in_channels": pi_model.in_channels, "out_channels": pi_model.out_channels,
            "upsample_zoom": pi_model.upsample_zoom},
        "np_rng_state": np_rng.bit_generator.state,
    }
    arrays = {"params": flatten_parameters(model),
              "torch_gen_state": torch_gen.get_state().numpy()}
    if pi_model is not None:
        arrays["pi_params"] = flatten_parameters(pi_model)
    arrays.update(_adam_state_arrays(optimizer))
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_train_checkpoint(path, dtype=torch.float32):
    """Rebuild (model, pi_model, config, step, rng states, adam arrays)."""
    from .net import DenoiserConfig
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]))
        if header["version"] != TRAIN_CKPT_VERSION:
            raise ValueError(f"unsupported training checkpoint version {header['version']}")
        cfg = DenoiserConfig(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in header["config"].items()})
        model = DenoiserUNet(cfg, T=header["T"]).to(dtype)
        load_flat_parameters(model, z["params"])
        pi_model = None
        if header["has_pi"]:
            pi_model = PiRaw(**header["pi_init"]).to(dtype)
            load_flat_parameters(pi_model, z["pi_params"])
        config = TrainConfig(**header["train_config"])
        adam_arrays = {k: z[k] for k in z.files if k[0] in "mvn" and "_" in k}
        torch_gen_state = z["torch_gen_state"]
        np_rng_state = header["np_rng_state"]
        step = header["step"]
    return model, pi_model, config, step, np_rng_state, torch_gen_state, adam_arrays


def fit(model: DenoiserUNet, pi_model: Optional[PiRaw], arrays: TrainArrays,
        schedule: DiffusionSchedule, config: TrainConfig, out_dir,
        resume_from=None) -> Path:
    """Run the optimization loop; returns the final checkpoint path.

    Emits ``loss.csv`` with rows (step, loss, lr) and periodic checkpoints.
    Resuming from a checkpoint continues bitwise-identically to an
    uninterrupted run with the same seed.
    """
    if (config.tmc_mode == "disabled") == model.config.tmc_enabled:
        raise ValueError("tmc_mode 'disabled' requires (and is required by) a "
                         "tmc_enabled=false architecture")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = next(model.parameters()).dtype

    params = list(model.parameters()) + ([] if pi_model is None else list(pi_model.parameters()))
    optimizer = torch.optim.Adam(params, lr=config.lr,
                                 betas=(config.adam_beta1, config.adam_beta2),
                                 eps=config.adam_eps)
    np_rng = np.random.default_rng(config.seed)
    torch_gen = torch.Generator().manual_seed(config.seed)
    start = 0
    if resume_from is not None:
        _m, _p, _cfg, start, np_state, tg_state, adam_arrays = load_train_checkpoint(
            resume_from, dtype=dtype)
        load_flat_parameters(model, flatten_parameters(_m))
        if pi_model is not None and _p is not None:
            load_flat_parameters(pi_model, flatten_parameters(_p))
        np_rng.bit_generator.state = np_state
        torch_gen.set_state(torch.from_numpy(tg_state))
        _restore_adam_state(optimizer, adam_arrays, dtype)

    x0_all = torch.from_numpy(arrays.x0).to(dtype)
    cond_all = torch.from_numpy(arrays.cond).to(dtype)
    n = x0_all.shape[0]

    loss_path = out_dir / "loss.csv"
    mode = "a" if (resume_from is not None and loss_path.exists()) else "w"
    ckpt_path = out_dir / "checkpoint.npz"
    with open(loss_path, mode, newline="") as fh:
        if mode == "w":
            fh.write("step,loss,lr\n")
        for step in range(start, config.steps):
            idx = np_rng.integers(0, n, size=config.batch_size)
            loss = training_step(model, pi_model if arrays.raw_condition else None,
                                 x0_all[idx], cond_all[idx], schedule, config,
                                 optimizer, np_rng, torch_gen, step)
            lr = sgdr_lr(step, config.lr, config.sgdr_period, config.sgdr_mult, config.lr_min)
            fh.write(f"{step},{loss!r},{lr!r}\n")
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_train_checkpoint(ckpt_path, model, pi_model, optimizer,
                                      step + 1, config, np_rng, torch_gen)
    save_train_checkpoint(ckpt_path, model, pi_model, optimizer,
                          config.steps, config, np_rng, torch_gen)
    return ckpt_path
