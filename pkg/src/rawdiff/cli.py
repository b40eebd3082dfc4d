"""Batch entry points: dataset synthesis, training (with ablations), sampling,
evaluation and degradation analysis.

Every run is reconstructible from its resolved config plus seed; the resolved
config is archived next to the outputs.  Commands exit nonzero with a
single-line ``ERROR:<code>: message`` on validation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .condition import ConditionOutput, PiRaw, RawFrame, pack_bayer, pi_raw, pi_srgb
from .net import DenoiserConfig, DenoiserUNet
from .sampler import sample_model
from .schedule import make_schedule, schedule_to_csv
from .trainer import (TrainConfig, fit, load_train_checkpoint, load_training_arrays)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _read_config_file(path) -> dict:
    """Plain-text key/value config: one ``key = value`` per line, '#' comments."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config-parse", f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _archive_config(args: argparse.Namespace, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in sorted(vars(args).items())
             if k not in ("func", "config") and v is not None]
    (out_dir / "resolved_config.txt").write_text("\n".join(lines) + "\n")


def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _schedule_from_args(args):
    return make_schedule(args.T, args.beta_min, args.beta_max, args.eta)


def _add_schedule_args(p):
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--beta-min", type=float, default=0.02)
    p.add_argument("--beta-max", type=float, default=0.35)
    p.add_argument("--eta", type=float, default=0.0)


# --- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    _archive_config(args, out)
    manifest = data_mod.build_dataset(
        out, n_scenes=args.scenes, size=args.size, channels=args.channels,
        ev_levels=_float_list(args.ev_levels), iso=args.iso,
        zooms=_int_list(args.zooms), seed=args.seed, noise=not args.no_noise,
        sigma_g=args.sigma_g, lambda_p=args.lambda_p,
        val_fraction=args.val_fraction, test_fraction=args.test_fraction)
    n_ll = sum(len(r.low_light) for r in manifest.records)
    print(f"wrote {len(manifest.records)} scenes, {n_ll} low-light samples -> "
          f"{out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    _archive_config(args, out)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliError("missing-manifest", f"manifest not found: {manifest_path}")
    manifest = data_mod.load_manifest(manifest_path)
    root = manifest_path.parent

    if args.condition == "raw" and manifest.channels != 3:
        raise CliError("bad-condition", "raw condition requires a 3-channel (Bayer) dataset")
    tmc_enabled = args.ablate != "no-tmc"
    net_cfg = DenoiserConfig(out_channels=manifest.channels,
                             base_channels=args.base_channels,
                             channel_multipliers=tuple(_int_list(args.channel_mult)),
                             time_embed_dim=args.time_embed_dim,
                             tmc_enabled=tmc_enabled)
    torch.manual_seed(args.seed)  # deterministic parameter init under the run seed
    model = DenoiserUNet(net_cfg, T=args.T)
    pi_model = None
    if args.condition == "raw":
        pi_model = PiRaw(in_channels=4, out_channels=manifest.channels, upsample_zoom=1)

    schedule = _schedule_from_args(args)
    schedule_to_csv(schedule, out / "schedule.csv")
    arrays = load_training_arrays(manifest, root, split="train", condition=args.condition)
    config = TrainConfig(lr=args.lr, batch_size=args.batch_size, steps=args.steps,
                         sgdr_period=args.sgdr_period, sgdr_mult=args.sgdr_mult,
                         tmc_mode="disabled" if not tmc_enabled else args.tmc_mode,
                         seed=args.seed, checkpoint_every=args.checkpoint_every)
    ckpt = fit(model, pi_model, arrays, schedule, config, out,
               resume_from=args.resume)
    print(f"checkpoint -> {ckpt}")
    return 0


def _condition_for_entry(manifest, root, entry, condition: str, pi_model, target_hw):
    if condition == "srgb":
        return pi_srgb(data_mod.load_png(root / entry.srgb_path), target_hw)
    plane = data_mod.load_raw_plane(root / entry.raw_path, entry.raw_shape,
                                    manifest.bit_depth, manifest.black_level,
                                    manifest.white_level)
    return pi_raw(pi_model, pack_bayer(RawFrame(data=plane)), target_hw)


def cmd_sample(args) -> int:
    out = Path(args.out)
    _archive_config(args, out)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError("missing-checkpoint", f"checkpoint not found: {ckpt_path}")
    model, pi_model, _cfg, _step, _, _, _ = load_train_checkpoint(ckpt_path)
    model.eval()
    condition = args.condition if args.condition else ("raw" if pi_model is not None else "srgb")
    if condition == "raw" and pi_model is None:
        raise CliError("bad-condition", "checkpoint has no Raw condition network")

    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliError("missing-manifest", f"manifest not found: {manifest_path}")
    manifest = data_mod.load_manifest(manifest_path)
    root = manifest_path.parent
    records = manifest.split_records(args.split)
    if not records:
        raise CliError("empty-split", f"no records in split {args.split!r}")

    schedule = make_schedule(model.T, args.beta_min, args.beta_max, args.eta)
    count = 0
    for rec in records:
        gt_entry = next(g for g in rec.ground_truth if g.zoom == 1)
        target_hw = data_mod.load_png(root / gt_entry.srgb_path).shape[1:]
        for entry in rec.low_light:
            cond = _condition_for_entry(manifest, root, entry, condition, pi_model, target_hw)
            x0, trace = sample_model(model, cond, schedule, seed=args.seed,
                                     capture_trace=args.trace)
            name = f"{rec.scene_id}_ev{entry.ev:+.1f}_restored.png"
            data_mod.save_png(out / name, x0[0])
            if trace is not None:
                tdir = out / f"{rec.scene_id}_ev{entry.ev:+.1f}_trace"
                tdir.mkdir(exist_ok=True)
                for i, state in enumerate(trace.states):
                    data_mod.save_png(tdir / f"x_{schedule.T - i:03d}.png",
                                      np.clip(state[0], 0.0, 1.0))
            count += 1
    print(f"wrote {count} restorations -> {out}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    _archive_config(args, out)
    manifest_path = Path(args.manifest)
    manifest = data_mod.load_manifest(manifest_path)
    root = manifest_path.parent
    outputs = Path(args.outputs)
    rows = []
    for rec in manifest.split_records(args.split):
        gt = data_mod.load_png(root / next(g.srgb_path for g in rec.ground_truth if g.zoom == 1))
        for entry in rec.low_light:
            img_path = outputs / f"{rec.scene_id}_ev{entry.ev:+.1f}_restored.png"
            if not img_path.exists():
                print(f"skipping missing output {img_path}")
                continue
            img = data_mod.load_png(img_path)
            rows.append({"scene_id": rec.scene_id, "ev": entry.ev, "iso": entry.iso,
                         "zoom": 1, "method": args.method,
                         "psnr": data_mod.psnr_y(img, gt), "ssim": data_mod.ssim_y(img, gt),
                         "lpips": "", "dists": "", "fid": ""})
    if not rows:
        raise CliError("no-pairs", "no evaluable output/ground-truth pairs found")
    out.mkdir(parents=True, exist_ok=True)
    data_mod.write_csv(rows, out / "eval.csv",
                       ["scene_id", "ev", "iso", "zoom", "method", "psnr", "ssim",
                        "lpips", "dists", "fid"])
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    print(f"evaluated {len(rows)} pairs, mean PSNR-Y {mean_psnr:.2f} dB -> {out / 'eval.csv'}")
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out)
    _archive_config(args, out)
    manifest_path = Path(args.manifest)
    manifest = data_mod.load_manifest(manifest_path)
    root = manifest_path.parent

    deg = data_mod.degradation_report(manifest, root)
    data_mod.write_csv(deg, out / "degradation.csv", ["ev", "psnr", "ssim", "n"])
    stats = data_mod.stats_mu_sigma(manifest, root)
    data_mod.write_csv(stats, out / "stats.csv", ["ev", "mu", "sigma"])

    # pooled gradient histogram per EV level (synthetic proxy noise only; real
    # sensor noise is known to depart from this model)
    by_ev = {}
    for rec in manifest.records:
        for entry in rec.low_light:
            img = data_mod.load_png(root / entry.srgb_path)
            by_ev.setdefault(entry.ev, []).append(img)
    bins = args.bins
    centers = np.linspace(-1.0, 1.0, bins + 1)
    centers = 0.5 * (centers[:-1] + centers[1:])
    rows = []
    for i in range(bins):
        row = {"bin_center": float(centers[i])}
        for ev, imgs in sorted(by_ev.items(), reverse=True):
            hist = np.mean([data_mod.gradient_histogram(im, bins) for im in imgs], axis=0)
            row[f"ev{ev:+.1f}"] = float(hist[i])
        rows.append(row)
    cols = ["bin_center"] + [f"ev{ev:+.1f}" for ev in sorted(by_ev, reverse=True)]
    data_mod.write_csv(rows, out / "gradient_histograms.csv", cols)
    print(f"analysis CSVs -> {out}")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rawdiff")
    parser.add_argument("--config", help="plain-text key/value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a paired low-light dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=16)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--ev-levels", default="-2,-4,-6")
    p.add_argument("--iso", type=int, default=800)
    p.add_argument("--zooms", default="1")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--sigma-g", type=float, default=data_mod.DEFAULT_SIGMA_G)
    p.add_argument("--lambda-p", type=float, default=data_mod.DEFAULT_LAMBDA_P)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the conditional denoiser")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition", choices=("srgb", "raw"), default="srgb")
    p.add_argument("--ablate", choices=("none", "no-tmc"), default="none")
    p.add_argument("--tmc-mode", choices=("teacher_forced", "unrolled_depth1"),
                   default="unrolled_depth1")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--sgdr-period", type=int, default=500)
    p.add_argument("--sgdr-mult", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--channel-mult", default="1,2,4")
    p.add_argument("--time-embed-dim", type=int, default=32)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--resume")
    _add_schedule_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run the reverse chain on a manifest split")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition", choices=("srgb", "raw"))
    p.add_argument("--trace", action="store_true")
    p.add_argument("--beta-min", type=float, default=0.02)
    p.add_argument("--beta-max", type=float, default=0.35)
    p.add_argument("--eta", type=float, default=0.0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score restorations against ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outputs", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--method", default="ours")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="degradation statistics and histograms")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, remaining = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.config:
        try:
            overrides = _read_config_file(args.config)
        except FileNotFoundError:
            print(f"ERROR:missing-config: config file not found: {args.config}",
                  file=sys.stderr)
            return 2
        except CliError as exc:
            print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
            return 2
        # splice config entries in right after the subcommand so argparse does
        # the type conversion; flags given on the command line come later and win
        tokens = [f"--{key.replace('_', '-')}={val}" for key, val in overrides.items()]
        sub_idx = argv.index(args.command)
        argv = argv[:sub_idx + 1] + tokens + argv[sub_idx + 1:]
        try:
            args, remaining = parser.parse_known_args(argv)
        except SystemExit:
            print(f"ERROR:config-value: invalid value in {args.config}", file=sys.stderr)
            return 2
    if remaining:
        print(f"ERROR:unknown-args: {' '.join(remaining)}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"ERROR:invalid-input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
