"""Noise-predicting U-Net: ConvNext-style blocks with additive time
conditioning, linear-attention residual blocks, sinusoidal time embedding.

The network consumes the channel-wise concatenation [x_t | cond | tmc]
(tmc channels only when the architecture enables them) and returns an
estimate of the injected noise with x_t's shape.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    out_channels: int = 1
    base_channels: int = 16
    channel_multipliers: tuple = (1, 2, 4)
    time_embed_dim: int = 32
    tmc_enabled: bool = True

    @property
    def in_channels(self) -> int:
        # fixed concatenation layout [x_t | cond | tmc]
        return self.out_channels * (3 if self.tmc_enabled else 2)

    def __post_init__(self):
        if self.out_channels < 1 or self.base_channels < 1 or self.time_embed_dim < 1:
            raise ValueError("channel widths must be positive")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        mults = tuple(self.channel_multipliers)
        if any(b > a for a, b in zip(mults[1:], mults[:-1])):
            raise ValueError("channel multipliers must be nondecreasing")
        object.__setattr__(self, "channel_multipliers", mults)


def time_embedding(t: int, dim: int, T: int) -> np.ndarray:
    """Sinusoidal embedding of step t, interleaved [sin, cos] pairs over a
    geometric frequency grid omega_k = 10000^(-2k/dim).  Entries lie in [-1, 1];
    t = 0 maps to sines 0 and cosines 1."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside 0..{T}")
    k = np.arange(dim // 2)
    omega = 10000.0 ** (-2.0 * k / dim)
    emb = np.empty(dim)
    emb[0::2] = np.sin(t * omega)
    emb[1::2] = np.cos(t * omega)
    return emb


class ConvNextBlock(nn.Module):
    """7x7 depthwise conv, norm, pointwise expand (GELU), pointwise contract,
    residual skip; the time embedding enters additively after the spatial conv."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, expand: int = 2):
        super().__init__()
        self.spatial = nn.Conv2d(in_ch, in_ch, 7, padding=3, groups=in_ch)
        self.time_mlp = nn.Sequential(nn.GELU(), nn.Linear(time_dim, in_ch))
        self.norm = nn.GroupNorm(1, in_ch)
        self.pw_expand = nn.Conv2d(in_ch, out_ch * expand, 1)
        self.pw_contract = nn.Conv2d(out_ch * expand, out_ch, 1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, t_emb):
        h = self.spatial(x)
        h = h + self.time_mlp(t_emb)[:, :, None, None]
        h = self.norm(h)
        h = self.pw_contract(F.gelu(self.pw_expand(h)))
        return h + self.skip(x)


class LinearAttentionBlock(nn.Module):
    """Pre-normalized linear attention with 1x1 q/k/v and output projections,
    residual addition; spatial shape preserved."""

    def __init__(self, ch: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.head_dim = max(ch // heads, 8)
        inner = self.heads * self.head_dim
        self.norm = nn.GroupNorm(1, ch)
        self.to_qkv = nn.Conv2d(ch, inner * 3, 1, bias=False)
        self.to_out = nn.Conv2d(inner, ch, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        qkv = self.to_qkv(self.norm(x)).chunk(3, dim=1)
        q, k, v = (t.reshape(b, self.heads, self.head_dim, h * w) for t in qkv)
        q = q.softmax(dim=-2) * (self.head_dim ** -0.5)
        k = k.softmax(dim=-1)
        ctx = torch.einsum("bhdn,bhen->bhde", k, v)
        out = torch.einsum("bhde,bhdn->bhen", ctx, q)
        out = out.reshape(b, -1, h, w)
        return x + self.to_out(out)


class DenoiserUNet(nn.Module):
    """The epsilon-predictor; see module docstring for the input layout."""

    def __init__(self, config: DenoiserConfig, T: int = 50):
        super().__init__()
        self.config = config
        self.T = T
        cm = config.channel_multipliers
        widths = [config.base_channels * m for m in cm]
        td = config.time_embed_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(td, td * 2), nn.GELU(), nn.Linear(td * 2, td))
        self.stem = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, w in enumerate(widths):
            prev = widths[i - 1] if i else widths[0]
            self.down_blocks.append(ConvNextBlock(prev, w, td))
            self.downsamples.append(
                nn.Conv2d(w, w, 3, stride=2, padding=1) if i < len(widths) - 1 else nn.Identity())

        mid = widths[-1]
        self.mid_block1 = ConvNextBlock(mid, mid, td)
        self.mid_attn = LinearAttentionBlock(mid)
        self.mid_block2 = ConvNextBlock(mid, mid, td)

        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for i in reversed(range(len(widths) - 1)):
            self.upsamples.append(nn.ConvTranspose2d(widths[i + 1], widths[i], 4, stride=2, padding=1))
            self.up_blocks.append(ConvNextBlock(widths[i] * 2, widths[i], td))

        self.out_norm = nn.GroupNorm(1, widths[0])
        self.head = nn.Conv2d(widths[0], config.out_channels, 3, padding=1)

    def _embed(self, t, batch: int, like: torch.Tensor) -> torch.Tensor:
        td = self.config.time_embed_dim
        if isinstance(t, int):
            t = [t] * batch
        emb = np.stack([time_embedding(int(ti), td, self.T) for ti in t])
        return self.time_mlp(torch.from_numpy(emb).to(dtype=like.dtype, device=like.device))

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor,
                tmc: Optional[torch.Tensor], t) -> torch.Tensor:
        cfg = self.config
        if (tmc is not None) != cfg.tmc_enabled:
            raise ValueError("tmc input must be present iff the architecture enables it")
        parts = [x_t, cond] + ([tmc] if tmc is not None else [])
        for p in parts:
            if p.shape[-2:] != x_t.shape[-2:]:
                raise ValueError("inputs must be spatially congruent")
            if p.shape[1] != cfg.out_channels:
                raise ValueError(
                    f"every input carries {cfg.out_channels} channels, got {p.shape[1]}")
        h = self.stem(torch.cat(parts, dim=1))
        t_emb = self._embed(t, x_t.shape[0], x_t)

        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, t_emb)
            skips.append(h)
            h = down(h)

        h = self.mid_block2(self.mid_attn(self.mid_block1(h, t_emb)), t_emb)

        skips.pop()  # the deepest skip equals the mid input; drop it
        for up, block in zip(self.upsamples, self.up_blocks):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), t_emb)

        return self.head(F.gelu(self.out_norm(h)))


# --- flat-parameter serialization -------------------------------------------

def flatten_parameters(model: nn.Module) -> np.ndarray:
    """Deterministic flat view of all parameters (state-dict order)."""
    return torch.cat([p.detach().double().reshape(-1) for p in model.parameters()]).numpy()


def load_flat_parameters(model: nn.Module, flat: np.ndarray) -> None:
    expected = sum(p.numel() for p in model.parameters())
    if flat.size != expected:
        raise ValueError(f"parameter payload has {flat.size} values, model needs {expected}")
    vec = torch.from_numpy(np.asarray(flat, dtype=np.float64))
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            p.copy_(vec[offset:offset + n].reshape(p.shape).to(p.dtype))
            offset += n


def save_checkpoint(path, model: DenoiserUNet, extra: Optional[dict] = None) -> None:
    """Checkpoint = config header + flat parameter payload + format version."""
    header = {
        "version": CHECKPOINT_VERSION,
        "T": model.T,
        "config": asdict(model.config),
    }
    arrays = {"params": flatten_parameters(model)}
    if extra:
        for key, val in extra.items():
            arrays[f"extra_{key}"] = np.asarray(val)
        header["extra_keys"] = sorted(extra.keys())
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, dtype=torch.float64):
    """Rebuild the model (and any extra payload) from a checkpoint file."""
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        cfg = DenoiserConfig(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in header["config"].items()
                                if k != "in_channels"})
        model = DenoiserUNet(cfg, T=header["T"]).to(dtype)
        load_flat_parameters(model, z["params"])
        extra = {k: z[f"extra_{k}"] for k in header.get("extra_keys", [])}
    return model, extra
