"""Synthetic paired-data pipeline: sensor degradation forward model
(under-exposure, ISO-scaled shot/read noise, RGGB mosaic, quantization, toy
ISP) plus the ground-truth construction operators (robust mean, intensity and
spatial alignment) and degradation analyses."""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from PIL import Image

from .condition import RawFrame
from .metrics import PSNR_CAP_DB, psnr_y, ssim_y

MANIFEST_VERSION = 1
RAW_BITS = 14
SRGB_BITS = 8
DEFAULT_SIGMA_G = 0.04
DEFAULT_LAMBDA_P = 0.001


# --- records and manifest ----------------------------------------------------

@dataclass
class LowLightEntry:
    ev: float
    iso: int
    raw_path: str
    srgb_path: str
    raw_shape: Tuple[int, int]


@dataclass
class GroundTruthEntry:
    zoom: int
    srgb_path: str


@dataclass
class SceneRecord:
    scene_id: str
    low_light: List[LowLightEntry]
    ground_truth: List[GroundTruthEntry]
    split: str = "train"


@dataclass
class DatasetManifest:
    records: List[SceneRecord]
    channels: int = 3
    bit_depth: int = RAW_BITS
    black_level: int = 0
    white_level: int = 2**RAW_BITS - 1
    seed: int = 0
    format_version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [r.scene_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("scene ids must be unique")

    def split_records(self, split: str) -> List[SceneRecord]:
        return [r for r in self.records if r.split == split]


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "format_version": manifest.format_version,
        "channels": manifest.channels,
        "bit_depth": manifest.bit_depth,
        "black_level": manifest.black_level,
        "white_level": manifest.white_level,
        "seed": manifest.seed,
        "records": [asdict(r) for r in manifest.records],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_manifest(path) -> DatasetManifest:
    doc = json.loads(Path(path).read_text())
    if doc["format_version"] != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {doc['format_version']}")
    records = []
    for r in doc["records"]:
        records.append(SceneRecord(
            scene_id=r["scene_id"],
            split=r["split"],
            low_light=[LowLightEntry(ev=e["ev"], iso=e["iso"], raw_path=e["raw_path"],
                                     srgb_path=e["srgb_path"],
                                     raw_shape=tuple(e["raw_shape"]))
                       for e in r["low_light"]],
            ground_truth=[GroundTruthEntry(zoom=g["zoom"], srgb_path=g["srgb_path"])
                          for g in r["ground_truth"]],
        ))
    return DatasetManifest(records=records, channels=doc["channels"],
                           bit_depth=doc["bit_depth"], black_level=doc["black_level"],
                           white_level=doc["white_level"], seed=doc["seed"])


# --- low-level I/O -----------------------------------------------------------

def save_raw_plane(path, normalized: np.ndarray, bit_depth: int = RAW_BITS) -> None:
    """16-bit little-endian binary plane; values are pre-quantized [0,1] floats."""
    levels = 2**bit_depth - 1
    codes = np.round(np.clip(normalized, 0.0, 1.0) * levels).astype("<u2")
    codes.tofile(path)


def load_raw_plane(path, shape: Tuple[int, int], bit_depth: int = RAW_BITS,
                   black_level: int = 0, white_level: Optional[int] = None) -> np.ndarray:
    if white_level is None:
        white_level = 2**bit_depth - 1
    codes = np.fromfile(path, dtype="<u2").reshape(shape)
    return np.clip((codes.astype(np.float64) - black_level) / (white_level - black_level), 0.0, 1.0)


def save_png(path, image: np.ndarray) -> None:
    """8-bit PNG from a (1|3, H, W) [0,1] image; round-half-to-even quantization."""
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0


# --- degradation forward model -----------------------------------------------

def quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Uniform quantization to 2^bits levels over [0,1], round-half-to-even."""
    levels = 2**bits - 1
    return np.round(np.clip(x, 0.0, 1.0) * levels) / levels


def mosaic_rggb(rgb: np.ndarray) -> np.ndarray:
    """Subsample a (3, H, W) image onto a single RGGB mosaic plane."""
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {rgb.shape}")
    _, h, w = rgb.shape
    if h % 2 or w % 2:
        raise ValueError("mosaic requires even dimensions")
    out = np.empty((h, w), dtype=rgb.dtype)
    out[0::2, 0::2] = rgb[0, 0::2, 0::2]
    out[0::2, 1::2] = rgb[1, 0::2, 1::2]
    out[1::2, 0::2] = rgb[1, 1::2, 0::2]
    out[1::2, 1::2] = rgb[2, 1::2, 1::2]
    return out


def _normalized_conv(values: np.ndarray, mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # normalized convolution keeps constants exact, including at borders
    num = cv2.filter2D(values * mask, -1, kernel, borderType=cv2.BORDER_CONSTANT)
    den = cv2.filter2D(mask, -1, kernel, borderType=cv2.BORDER_CONSTANT)
    return num / den


def demosaic_bilinear(raw: RawFrame) -> np.ndarray:
    """Bilinear demosaic of an RGGB mosaic to (3, H, W)."""
    d = raw.data.astype(np.float64)
    h, w = d.shape
    rows, cols = np.mgrid[0:h, 0:w]
    masks = {
        "r": ((rows % 2 == 0) & (cols % 2 == 0)).astype(np.float64),
        "g": ((rows + cols) % 2 == 1).astype(np.float64),
        "b": ((rows % 2 == 1) & (cols % 2 == 1)).astype(np.float64),
    }
    k_rb = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])
    k_g = np.array([[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]])
    r = _normalized_conv(d, masks["r"], k_rb)
    g = _normalized_conv(d, masks["g"], k_g)
    b = _normalized_conv(d, masks["b"], k_rb)
    return np.stack([r, g, b])


def f_isp(raw: RawFrame, wb_gains: Sequence[float] = (1.0, 1.0, 1.0),
          gamma: float = 2.2) -> np.ndarray:
    """Toy ISP: bilinear demosaic, white-balance gains, clamp, power-law gamma."""
    gains = np.asarray(wb_gains, dtype=np.float64)
    if gains.shape != (3,) or np.any(gains <= 0):
        raise ValueError(f"wb_gains must be 3 positive reals, got {wb_gains}")
    rgb = demosaic_bilinear(raw) * gains[:, None, None]
    return np.clip(rgb, 0.0, 1.0) ** (1.0 / gamma)


def apply_gamma(linear: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    return np.clip(linear, 0.0, 1.0) ** (1.0 / gamma)


def sensor_noise_std(signal: np.ndarray, iso: int, sigma_g: float = DEFAULT_SIGMA_G,
                     lambda_p: float = DEFAULT_LAMBDA_P) -> np.ndarray:
    """Heteroscedastic shot+read noise: var = lambda_p * signal * g + (sigma_g * g)^2
    with ISO gain g = iso / 100."""
    g = iso / 100.0
    return np.sqrt(lambda_p * np.clip(signal, 0.0, None) * g + (sigma_g * g) ** 2)


def area_downscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downscale of (C, H, W) by an integer factor."""
    if factor == 1:
        return image
    c, h, w = image.shape
    if h % factor or w % factor:
        raise ValueError(f"size {h}x{w} not divisible by {factor}")
    return image.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def synth_scene(clean_hr: np.ndarray, ev_levels: Sequence[float], iso: int,
                zooms: Sequence[int], rng: np.random.Generator, scene_id: str,
                out_dir, noise: bool = True, sigma_g: float = DEFAULT_SIGMA_G,
                lambda_p: float = DEFAULT_LAMBDA_P) -> SceneRecord:
    """Render one scene: per-zoom noise-free 0 EV ground truth plus, at the base
    (zoom 1) resolution, one degraded Raw/sRGB pair per EV level.

    ``clean_hr`` is (C, H, W) at max(zooms) times the base capture resolution;
    zoom is the super-resolution factor of each ground-truth render relative to
    the Raw capture.  C = 3 runs the full Bayer path; C = 1 emulates a
    monochrome sensor (no mosaic, the ISP reduces to the gamma curve).
    """
    clean_hr = np.asarray(clean_hr, dtype=np.float64)
    if clean_hr.min() < 0.0 or clean_hr.max() > 1.0:
        raise ValueError("clean_hr must be normalized to [0, 1]")
    if any(ev > 0 for ev in ev_levels):
        raise ValueError("EV offsets must be <= 0")
    channels = clean_hr.shape[0]
    if channels not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {channels}")
    zooms = sorted(zooms)
    max_zoom = zooms[-1]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    gt_entries = []
    for z in zooms:
        gt_linear = area_downscale(clean_hr, max_zoom // z)
        gt_srgb = apply_gamma(gt_linear)
        path = f"{scene_id}_gt_x{z}.png"
        save_png(out_dir / path, quantize(gt_srgb, SRGB_BITS))
        gt_entries.append(GroundTruthEntry(zoom=z, srgb_path=path))

    radiance = area_downscale(clean_hr, max_zoom)
    ll_entries = []
    for ev in ev_levels:
        exposed = radiance * 2.0**ev
        if noise:
            std = sensor_noise_std(exposed, iso, sigma_g, lambda_p)
            exposed = exposed + std * rng.standard_normal(exposed.shape)
        if channels == 3:
            plane = mosaic_rggb(exposed)
        else:
            plane = exposed[0]
        plane = quantize(plane, RAW_BITS)
        raw_path = f"{scene_id}_ev{ev:+.1f}.raw"
        save_raw_plane(out_dir / raw_path, plane)
        if channels == 3:
            srgb = f_isp(RawFrame(data=plane))
        else:
            srgb = apply_gamma(plane[None])
        srgb_path = f"{scene_id}_ev{ev:+.1f}.png"
        save_png(out_dir / srgb_path, quantize(srgb, SRGB_BITS))
        ll_entries.append(LowLightEntry(ev=float(ev), iso=int(iso), raw_path=raw_path,
                                        srgb_path=srgb_path, raw_shape=plane.shape))

    return SceneRecord(scene_id=scene_id, low_light=ll_entries, ground_truth=gt_entries)


def scene_rng(seed: int, scene_id: str) -> np.random.Generator:
    """Per-scene stream so parallel and serial generation agree bitwise."""
    return np.random.default_rng([seed, zlib.crc32(scene_id.encode())])


# --- procedural toy corpus ---------------------------------------------------

def generate_toy_corpus(n: int, size: int, channels: int, seed: int) -> List[np.ndarray]:
    """Smooth procedural textures and shapes in [0, 1]; zero downloads needed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(n):
        chans = []
        for _c in range(channels):
            kind = rng.integers(3)
            if kind == 0:  # oriented sinusoid over a gradient
                fx, fy = rng.uniform(0.5, 3.0, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                img = 0.5 + 0.3 * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
                img += 0.15 * (xx - 0.5)
            elif kind == 1:  # gaussian blobs
                img = np.full((size, size), rng.uniform(0.1, 0.4))
                for _ in range(rng.integers(2, 5)):
                    cx, cy = rng.uniform(0.1, 0.9, size=2)
                    s = rng.uniform(0.08, 0.25)
                    amp = rng.uniform(0.2, 0.6)
                    img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s**2))
            else:  # soft-edged rectangle on a ramp
                img = 0.2 + 0.4 * yy
                x0, y0 = rng.uniform(0.1, 0.5, size=2)
                w, h = rng.uniform(0.2, 0.4, size=2)
                inside = (xx > x0) & (xx < x0 + w) & (yy > y0) & (yy < y0 + h)
                img = np.where(inside, img + rng.uniform(0.2, 0.5), img)
            chans.append(img)
        images.append(np.clip(np.stack(chans), 0.0, 1.0))
    return images


def build_dataset(out_dir, n_scenes: int, size: int, channels: int,
                  ev_levels: Sequence[float], iso: int, zooms: Sequence[int],
                  seed: int, noise: bool = True, sigma_g: float = DEFAULT_SIGMA_G,
                  lambda_p: float = DEFAULT_LAMBDA_P,
                  val_fraction: float = 0.0, test_fraction: float = 0.25,
                  ) -> DatasetManifest:
    """Synthesize a full manifest from the procedural corpus. ``size`` is the
    base capture resolution; clean sources are rendered at size * max(zoom)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hr_size = size * max(zooms)
    corpus = generate_toy_corpus(n_scenes, hr_size, channels, seed)
    n_test = int(round(n_scenes * test_fraction))
    n_val = int(round(n_scenes * val_fraction))
    records = []
    for i, clean in enumerate(corpus):
        sid = f"scene{i:04d}"
        rec = synth_scene(clean, ev_levels, iso, zooms, scene_rng(seed, sid), sid,
                          out_dir, noise=noise, sigma_g=sigma_g, lambda_p=lambda_p)
        if i >= n_scenes - n_test:
            rec.split = "test"
        elif i >= n_scenes - n_test - n_val:
            rec.split = "val"
        records.append(rec)
    manifest = DatasetManifest(records=records, channels=channels, seed=seed)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# --- ground-truth construction operators -------------------------------------

def robust_mean(stack: Sequence[np.ndarray], clip_sigma: float = 2.5,
                iters: int = 3) -> np.ndarray:
    """Iterative sigma-clipped per-pixel mean over a stack of congruent images."""
    if len(stack) < 2:
        raise ValueError("need at least 2 images")
    if clip_sigma <= 0:
        raise ValueError("clip_sigma must be positive")
    arr = np.stack([np.asarray(s, dtype=np.float64) for s in stack])
    if any(s.shape != stack[0].shape for s in stack):
        raise ValueError("stack images must share one shape")
    keep = np.ones(arr.shape, dtype=bool)
    for _ in range(iters):
        n = keep.sum(axis=0)
        mean = np.where(n > 0, (arr * keep).sum(axis=0) / np.maximum(n, 1), arr.mean(axis=0))
        var = np.where(n > 0, ((arr - mean) ** 2 * keep).sum(axis=0) / np.maximum(n, 1), 0.0)
        std = np.sqrt(var)
        # zero spread: keep everything (all samples agree)
        keep = (np.abs(arr - mean) <= clip_sigma * std) | (std == 0.0)
    n = keep.sum(axis=0)
    return np.where(n > 0, (arr * keep).sum(axis=0) / np.maximum(n, 1), arr.mean(axis=0))


def intensity_align(j_m: np.ndarray, mu_m: float, mu_1: float) -> np.ndarray:
    """Shift image intensities so their mean moves from mu_m to mu_1."""
    return j_m - mu_m + mu_1


def center_crop(image: np.ndarray, fraction: float = 1.0) -> np.ndarray:
    """Crop (C, H, W) to the central ``fraction`` of each spatial dimension."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return image
    _, h, w = image.shape
    ch, cw = max(1, int(round(h * fraction))), max(1, int(round(w * fraction)))
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[:, top:top + ch, left:left + cw]


def _to_gray_u8(image: np.ndarray) -> np.ndarray:
    gray = image.mean(axis=0) if image.ndim == 3 else image
    return np.clip(gray * 255.0, 0, 255).astype(np.uint8)


@dataclass
class AlignResult:
    aligned: np.ndarray
    translation: Tuple[float, float]  # (dx, dy) applied to the moving image
    rotation: float = 0.0             # radians
    scale: float = 1.0
    method: str = "sift"
    ok: bool = True
    diagnostics: str = ""


def spatial_align(moving: np.ndarray, reference: np.ndarray,
                  min_matches: int = 8) -> AlignResult:
    """Register ``moving`` onto ``reference`` with a similarity transform.

    Keypoint descriptors + RANSAC consensus when enough matches exist, else a
    phase-correlation translation fallback.  Failure to align is reported, not
    raised."""
    if moving.shape != reference.shape:
        raise ValueError(f"shape mismatch: {moving.shape} vs {reference.shape}")
    mov8, ref8 = _to_gray_u8(moving), _to_gray_u8(reference)
    h, w = mov8.shape

    sift = cv2.SIFT_create()
    kp_m, des_m = sift.detectAndCompute(mov8, None)
    kp_r, des_r = sift.detectAndCompute(ref8, None)
    if des_m is not None and des_r is not None and len(kp_m) >= 4 and len(kp_r) >= 4:
        matcher = cv2.BFMatcher(cv2.NORM_L2)
        pairs = matcher.knnMatch(des_m, des_r, k=2)
        good = [m for m, n in (p for p in pairs if len(p) == 2) if m.distance < 0.75 * n.distance]
        if len(good) >= min_matches:
            src = np.float32([kp_m[m.queryIdx].pt for m in good]).reshape(-1, 1, 2)
            dst = np.float32([kp_r[m.trainIdx].pt for m in good]).reshape(-1, 1, 2)
            M, inliers = cv2.estimateAffinePartial2D(src, dst, method=cv2.RANSAC,
                                                     ransacReprojThreshold=2.0)
            if M is not None and inliers is not None and int(inliers.sum()) >= 4:
                aligned = np.stack([
                    cv2.warpAffine(ch.astype(np.float64), M, (w, h),
                                   flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
                    for ch in np.atleast_3d(moving.reshape(-1, h, w))])
                scale = float(np.hypot(M[0, 0], M[1, 0]))
                rot = float(np.arctan2(M[1, 0], M[0, 0]))
                return AlignResult(aligned=aligned.reshape(moving.shape),
                                   translation=(float(M[0, 2]), float(M[1, 2])),
                                   rotation=rot, scale=scale, method="sift",
                                   ok=True, diagnostics=f"{int(inliers.sum())} inliers")

    # fallback: translation only via phase correlation
    (dx, dy), response = cv2.phaseCorrelate(mov8.astype(np.float64) / 255.0,
                                            ref8.astype(np.float64) / 255.0)
    M = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    aligned = np.stack([
        cv2.warpAffine(ch.astype(np.float64), M, (w, h),
                       flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        for ch in np.atleast_3d(moving.reshape(-1, h, w))])
    ok = response > 0.05
    return AlignResult(aligned=aligned.reshape(moving.shape), translation=(dx, dy),
                       method="phase_correlation", ok=ok,
                       diagnostics=f"response={response:.3f}" + ("" if ok else " (weak)"))


def build_ground_truth(stack: Sequence[np.ndarray], reference: Optional[np.ndarray] = None,
                       crop_fraction: float = 1.0, mu_target: Optional[float] = None,
                       clip_sigma: float = 2.5, iters: int = 3) -> np.ndarray:
    """Compose the ground-truth path: robust mean over the ISP'd stack, center
    crop, intensity shift to the reference mean, spatial alignment."""
    j = robust_mean([center_crop(s, crop_fraction) for s in stack], clip_sigma, iters)
    if mu_target is not None:
        j = intensity_align(j, float(j.mean()), mu_target)
    if reference is not None:
        j = spatial_align(j, center_crop(reference, crop_fraction)).aligned
    return j


# --- degradation analyses ----------------------------------------------------

def gradient_histogram(image: np.ndarray, bins: int) -> np.ndarray:
    """Pooled horizontal/vertical forward-difference gradients, histogrammed
    over [-1, 1] and normalized to sum 1."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    image = np.asarray(image, dtype=np.float64)
    gx = np.diff(image, axis=-1).ravel()
    gy = np.diff(image, axis=-2).ravel()
    hist, _ = np.histogram(np.concatenate([gx, gy]), bins=bins, range=(-1.0, 1.0))
    return hist / hist.sum()


def _gt_lookup(manifest: DatasetManifest, record: SceneRecord, root: Path) -> np.ndarray:
    for g in record.ground_truth:
        if g.zoom == 1:
            return load_png(root / g.srgb_path)
    raise ValueError(f"scene {record.scene_id} has no x1 ground truth")


def degradation_report(manifest: DatasetManifest, root) -> List[Dict]:
    """Per-EV mean PSNR/SSIM of the degraded sRGB against the x1 ground truth."""
    root = Path(root)
    acc: Dict[float, List[Tuple[float, float]]] = {}
    for rec in manifest.records:
        try:
            gt = _gt_lookup(manifest, rec, root)
        except (ValueError, FileNotFoundError) as exc:
            print(f"skipping scene {rec.scene_id}: {exc}")
            continue
        for ll in rec.low_light:
            deg = load_png(root / ll.srgb_path)
            acc.setdefault(ll.ev, []).append((psnr_y(deg, gt), ssim_y(deg, gt)))
    rows = []
    for ev in sorted(acc, reverse=True):
        vals = np.array(acc[ev])
        rows.append({"ev": ev, "psnr": float(vals[:, 0].mean()),
                     "ssim": float(vals[:, 1].mean()), "n": len(vals)})
    return rows


def stats_mu_sigma(manifest: DatasetManifest, root) -> List[Dict]:
    """Per-EV mean and standard deviation of pixel intensities on the 0-255 scale."""
    root = Path(root)
    acc: Dict[float, List[np.ndarray]] = {}
    for rec in manifest.records:
        for ll in rec.low_light:
            acc.setdefault(ll.ev, []).append(load_png(root / ll.srgb_path).ravel())
    rows = []
    for ev in sorted(acc, reverse=True):
        px = np.concatenate(acc[ev]) * 255.0
        rows.append({"ev": ev, "mu": float(px.mean()), "sigma": float(px.std())})
    return rows


def write_csv(rows: List[Dict], path, columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
