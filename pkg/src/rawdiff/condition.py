"""Condition pathway: Bayer packing, Raw-to-sRGB network with a gamma output
layer, the identity path for sRGB conditions, and resolution reconciliation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn


@dataclass(frozen=True)
class RawFrame:
    """Black-level-normalized single-plane mosaic, fixed RGGB layout."""

    data: np.ndarray
    pattern: str = "RGGB"

    def __post_init__(self):
        if self.pattern != "RGGB":
            raise ValueError(f"unsupported CFA pattern {self.pattern!r}; only RGGB")
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise ValueError(f"mosaic must be 2-D, got shape {d.shape}")
        if d.shape[0] % 2 or d.shape[1] % 2:
            raise ValueError(f"mosaic dimensions must be even, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("mosaic contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("mosaic values must lie in [0, 1]")


@dataclass
class ConditionOutput:
    """What the sampler concatenates: an image at target resolution, plus the
    effective gamma when the Raw network produced it (None on the identity path)."""

    image: np.ndarray
    gamma: Optional[float] = None


def pack_bayer(raw: RawFrame) -> np.ndarray:
    """Pack each 2x2 RGGB block into 4 channels [R, G(row0), G(row1), B].

    Lossless: ``unpack_bayer`` inverts it bitwise.
    """
    d = raw.data
    return np.stack([
        d[0::2, 0::2],  # R
        d[0::2, 1::2],  # G, even rows
        d[1::2, 0::2],  # G, odd rows
        d[1::2, 1::2],  # B
    ])


def unpack_bayer(packed: np.ndarray) -> RawFrame:
    """Inverse of pack_bayer."""
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise ValueError(f"expected (4, H/2, W/2), got {packed.shape}")
    h, w = packed.shape[1] * 2, packed.shape[2] * 2
    out = np.empty((h, w), dtype=packed.dtype)
    out[0::2, 0::2] = packed[0]
    out[0::2, 1::2] = packed[1]
    out[1::2, 0::2] = packed[2]
    out[1::2, 1::2] = packed[3]
    return RawFrame(data=out)


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys bicubic kernel (a = -0.5, the common Catmull-Rom-like choice)."""
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax <= 1.0
    m2 = (ax > 1.0) & (ax < 2.0)
    out[m1] = (a + 2) * ax[m1] ** 3 - (a + 3) * ax[m1] ** 2 + 1
    out[m2] = a * ax[m2] ** 3 - 5 * a * ax[m2] ** 2 + 8 * a * ax[m2] - 4 * a
    return out


def _bicubic_1d(values: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Separable bicubic resample along one axis with edge clamping.

    Output sample i reads input coordinate (i + 0.5) * in/out - 0.5.
    """
    in_len = values.shape[axis]
    coords = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(coords).astype(int)
    frac = coords - base
    moved = np.moveaxis(values, axis, 0)
    acc = np.zeros((out_len,) + moved.shape[1:], dtype=np.float64)
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, in_len - 1)
        w = _cubic_kernel(frac - k)
        acc += w.reshape((-1,) + (1,) * (moved.ndim - 1)) * moved[idx]
    return np.moveaxis(acc, 0, axis)


def bicubic_upsample(image: np.ndarray, target_hw: Tuple[int, int]) -> np.ndarray:
    """Deterministic bicubic resize of a (C, H, W) image to target_hw."""
    th, tw = target_hw
    out = _bicubic_1d(image.astype(np.float64), th, axis=1)
    return _bicubic_1d(out, tw, axis=2)


def pi_srgb(image: np.ndarray, target_hw: Tuple[int, int]) -> ConditionOutput:
    """Identity condition path for sRGB inputs; bicubic upsampling reconciles
    resolution when the condition is smaller than the target."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W), got {image.shape}")
    if tuple(image.shape[1:]) == tuple(target_hw):
        return ConditionOutput(image=image, gamma=None)
    th, tw = target_hw
    if th < image.shape[1] or tw < image.shape[2]:
        raise ValueError(f"target {target_hw} smaller than input {image.shape[1:]}")
    return ConditionOutput(image=bicubic_upsample(image, target_hw), gamma=None)


def _inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class GammaOutputLayer(nn.Module):
    """Final activation y = sigmoid(z) ** (1 / gamma) with a learnable,
    softplus-reparameterized positive gamma (initialized near 2.2)."""

    def __init__(self, init_gamma: float = 2.2):
        super().__init__()
        self.raw_gamma = nn.Parameter(torch.tensor(_inverse_softplus(init_gamma)))

    @property
    def gamma(self) -> torch.Tensor:
        return nn.functional.softplus(self.raw_gamma)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        squashed = torch.sigmoid(z)
        return squashed ** (1.0 / self.gamma)


class PiRaw(nn.Module):
    """Learnable Raw-to-sRGB mapper: packed 4-channel mosaic in, 3-channel
    (or 1-channel for mono sensors) image at ``2 * upsample_zoom`` times the
    packed resolution out.  Upsampling is learned (transposed convolutions in
    the decoder); the last layer integrates the gamma correction."""

    def __init__(self, in_channels: int = 4, out_channels: int = 3,
                 width: int = 16, upsample_zoom: int = 1, init_gamma: float = 2.2):
        super().__init__()
        if upsample_zoom < 1 or upsample_zoom & (upsample_zoom - 1):
            raise ValueError(f"upsample_zoom must be a power of two, got {upsample_zoom}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.upsample_zoom = upsample_zoom
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
        )
        # packed frame sits at half the mosaic resolution: one fixed x2 stage
        # restores it, extra stages cover the super-resolution zoom factor
        n_up = 1 + int(round(math.log2(upsample_zoom)))
        ups = []
        for _ in range(n_up):
            ups += [nn.ConvTranspose2d(width, width, 4, stride=2, padding=1), nn.SiLU()]
        self.decoder = nn.Sequential(*ups)
        self.head = nn.Conv2d(width, out_channels, 3, padding=1)
        self.gamma_layer = GammaOutputLayer(init_gamma)

    def forward(self, packed: torch.Tensor) -> torch.Tensor:
        if packed.ndim != 4 or packed.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, h, w), got {tuple(packed.shape)}")
        z = self.head(self.decoder(self.encoder(packed)))
        return self.gamma_layer(z)

    @property
    def effective_gamma(self) -> float:
        return float(self.gamma_layer.gamma.detach())


def pi_raw(model: PiRaw, packed: np.ndarray, target_hw: Tuple[int, int]) -> ConditionOutput:
    """Run the Raw condition network on one packed frame; numpy in, numpy out."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != model.in_channels:
        raise ValueError(f"expected ({model.in_channels}, h, w), got {packed.shape}")
    th, tw = target_hw
    if th < packed.shape[1] or tw < packed.shape[2]:
        raise ValueError(f"target {target_hw} smaller than packed input {packed.shape[1:]}")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.from_numpy(packed).to(dtype)[None])[0]
    if tuple(out.shape[1:]) != (th, tw):
        raise ValueError(
            f"network produced {tuple(out.shape[1:])}, target {target_hw}; "
            "upsample_zoom does not match the requested resolution")
    return ConditionOutput(image=out.numpy(), gamma=model.effective_gamma)
