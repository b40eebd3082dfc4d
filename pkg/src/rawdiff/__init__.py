"""Conditional DDIM restoration of low-light Raw sensor images with a
recursive clean-estimate conditioning channel, plus a synthetic Bayer
degradation pipeline."""

from .schedule import DiffusionSchedule, make_schedule, sigma_from_eta
from .diffusion import StepInputs, ddim_step, diffuse, predict_x0, residual_term
from .net import DenoiserConfig, DenoiserUNet, time_embedding
from .condition import (ConditionOutput, PiRaw, RawFrame, bicubic_upsample,
                        pack_bayer, pi_raw, pi_srgb, unpack_bayer)
from .sampler import SampleTrace, sample, sample_model, torch_denoiser
from .trainer import (TrainConfig, fit, load_training_arrays, sgdr_lr,
                      training_step)
from .metrics import MetricReport, psnr_y, rgb_to_y, ssim_y

__all__ = [
    "DiffusionSchedule", "make_schedule", "sigma_from_eta",
    "StepInputs", "ddim_step", "diffuse", "predict_x0", "residual_term",
    "DenoiserConfig", "DenoiserUNet", "time_embedding",
    "ConditionOutput", "PiRaw", "RawFrame", "bicubic_upsample",
    "pack_bayer", "pi_raw", "pi_srgb", "unpack_bayer",
    "SampleTrace", "sample", "sample_model", "torch_denoiser",
    "TrainConfig", "fit", "load_training_arrays", "sgdr_lr", "training_step",
    "MetricReport", "psnr_y", "rgb_to_y", "ssim_y",
]
