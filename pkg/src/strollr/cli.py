"""Command-line front end.

Subcommands: denoise, inpaint, mri, mri-sim, psnr.  Configuration precedence
is built-in presets < config file (key = value lines) < flags.  Every output
is accompanied by a flat key = value manifest for reproducibility.

Exit codes: 0 success, 1 usage/configuration error, 2 I/O or format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import mri
from .denoise import default_config as denoise_defaults, denoise as run_denoise
from .inpaint import (default_config as inpaint_defaults, fill_thresholds,
                      inpaint as run_inpaint, random_mask)
from .config import ConfigurationError, PatchGeometry, SolverConfig
from .engine import NumericalError
from .imgio import ImageIOError, load_image, load_mask, save_image, save_mask
from .metrics import psnr

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

GEOM_KEYS = {
    "patch_side": int, "depth": int, "match_count": int,
    "window_side": int, "stride": int, "boundary": str,
}
SOLVER_KEYS = {
    "gamma_fidelity": float, "gamma_sparse": float, "gamma_lowrank": float,
    "lam": float, "theta": float, "iterations": int, "delta": float,
    "psi": float, "seed": int, "workers": int, "chunk_size": int,
    "deterministic": bool,
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):   # argparse defaults to exit code 2
        raise UsageError(message)


def parse_config_file(path: str) -> dict:
    """Read `key = value` lines; '#' starts a comment."""
    settings: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                settings[key] = value
    except OSError as exc:
        raise ImageIOError(f"cannot read config file {path}: {exc}")
    return settings


def _coerce(key: str, value, kind):
    if kind is bool and isinstance(value, str):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: cannot parse boolean {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: cannot parse {value!r} as {kind.__name__}")


def apply_settings(cfg: SolverConfig, settings: dict) -> SolverConfig:
    """Layer string/typed settings over a base configuration."""
    geom_kw = {
        "side": cfg.geom.side, "depth": cfg.geom.depth,
        "match_count": cfg.geom.match_count, "window_side": cfg.geom.window_side,
        "stride": cfg.geom.stride, "boundary": cfg.geom.boundary,
    }
    solver_kw = {}
    for key, value in settings.items():
        if value is None:
            continue
        if key in GEOM_KEYS:
            name = "side" if key == "patch_side" else key
            geom_kw[name] = _coerce(key, value, GEOM_KEYS[key])
        elif key in SOLVER_KEYS:
            solver_kw[key] = _coerce(key, value, SOLVER_KEYS[key])
        else:
            raise UsageError(f"unknown configuration key {key!r}")
    try:
        geom = PatchGeometry(**geom_kw)
        return cfg.with_overrides(geom=geom, **solver_kw)
    except ConfigurationError as exc:
        raise UsageError(str(exc))


def gather_flag_settings(args) -> dict:
    keys = list(GEOM_KEYS) + list(SOLVER_KEYS)
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def resolve_config(base: SolverConfig, args) -> SolverConfig:
    cfg = base
    env = os.environ.get("STROLLR_THREADS")
    if env:   # fallback layer below config file and flags
        cfg = cfg.with_overrides(workers=_coerce("STROLLR_THREADS", env, int))
    if getattr(args, "config", None):
        cfg = apply_settings(cfg, parse_config_file(args.config))
    cfg = apply_settings(cfg, gather_flag_settings(args))
    return cfg


def add_common_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", dest="workers", type=int, default=None,
                   help="worker threads (STROLLR_THREADS is the fallback)")
    p.add_argument("--deterministic", dest="deterministic", action="store_const",
                   const=True, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--patch-side", dest="patch_side", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--match-count", dest="match_count", type=int, default=None)
    p.add_argument("--window-side", dest="window_side", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--boundary", choices=("interior", "wrap"), default=None)
    p.add_argument("--gamma-fidelity", dest="gamma_fidelity", type=float, default=None)
    p.add_argument("--gamma-sparse", dest="gamma_sparse", type=float, default=None)
    p.add_argument("--gamma-lowrank", dest="gamma_lowrank", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--psi", type=float, default=None)
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")


def manifest_entries(cfg: SolverConfig) -> dict:
    g = cfg.geom
    return {
        "patch_side": g.side, "n": g.n, "match_count": g.match_count,
        "depth": g.depth, "window_side": g.window_side, "stride": g.stride,
        "boundary": g.boundary, "iterations": cfg.iterations,
        "gamma_fidelity": cfg.gamma_fidelity, "gamma_sparse": cfg.gamma_sparse,
        "gamma_lowrank": cfg.gamma_lowrank, "lam": cfg.lam, "theta": cfg.theta,
        "delta": cfg.delta, "psi": cfg.psi, "seed": cfg.seed,
        "workers": cfg.workers, "chunk_size": cfg.chunk_size,
        "deterministic": cfg.deterministic,
    }


def write_manifest(output_path: str, entries: dict) -> None:
    path = output_path + ".manifest"
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {value}\n")


def collect_times(records: list) -> dict:
    totals: dict[str, float] = {}
    for rec in records:
        for step, seconds in rec.seconds.items():
            totals[step] = totals.get(step, 0.0) + seconds
    return {f"time_{k}_s": round(v, 3) for k, v in totals.items()}


def _log(args):
    return None if args.quiet else sys.stderr


def _sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def cmd_denoise(args) -> int:
    if args.sigma is None or args.sigma <= 0:
        raise UsageError("denoising requires --sigma > 0")
    noisy = load_image(args.input, force_gray=args.gray)
    base = denoise_defaults(args.sigma)
    cfg = resolve_config(base, args)
    records: list = []
    t0 = time.perf_counter()
    out = run_denoise(noisy, args.sigma, cfg=cfg, log=_log(args), records=records)
    wall = time.perf_counter() - t0
    save_image(args.output, out)
    entries = {"command": "denoise", "input": args.input, "output": args.output,
               "sigma": args.sigma, **manifest_entries(cfg),
               **collect_times(records), "time_total_s": round(wall, 3)}
    if args.reference:
        ref = load_image(args.reference, force_gray=args.gray)
        value = psnr(ref, out)
        entries["psnr_db"] = f"{value:.4f}"
        print(f"PSNR: {value:.2f} dB")
    write_manifest(args.output, entries)
    return EXIT_OK


def cmd_inpaint(args) -> int:
    observed = load_image(args.input, force_gray=True)
    if args.mask:
        mask = load_mask(args.mask)
    elif args.keep:
        seed = args.seed if args.seed is not None else 0
        mask = random_mask(observed.shape, args.keep, seed=seed)
    else:
        raise UsageError("inpainting needs --mask FILE or --keep RATIO")
    keep_fraction = float(mask.mean())
    base = inpaint_defaults(keep_fraction)
    if args.sigma:
        base.gamma_fidelity = 0.1 / (args.sigma * args.sigma)
    cfg = fill_thresholds(resolve_config(base, args), keep_fraction)
    records: list = []
    t0 = time.perf_counter()
    out = run_inpaint(observed, mask, noise_sigma=args.sigma, cfg=cfg,
                     log=_log(args), records=records)
    wall = time.perf_counter() - t0
    save_image(args.output, out)
    if args.save_mask:
        save_mask(args.save_mask, mask)
    entries = {"command": "inpaint", "input": args.input, "output": args.output,
               "mask": args.mask or f"random(keep={args.keep})",
               "keep_fraction": f"{keep_fraction:.6f}",
               "mask_sha256": _sha256(mask),
               "noise_sigma": args.sigma or 0.0,
               "variant": "noisy" if args.sigma else "noiseless",
               **manifest_entries(cfg),
               **collect_times(records), "time_total_s": round(wall, 3)}
    if args.reference:
        ref = load_image(args.reference, force_gray=True)
        value = psnr(ref, out)
        entries["psnr_db"] = f"{value:.4f}"
        print(f"PSNR: {value:.2f} dB")
    write_manifest(args.output, entries)
    return EXIT_OK


def cmd_mri(args) -> int:
    mask = load_mask(args.mask)
    ks = mri.load_kspace(args.kspace, mask)
    ratio = mask.size / max(1, int(mask.sum()))
    theta0 = args.theta0 if args.theta0 is not None else mri.theta0_for(args.preset, ratio)
    base = mri.default_config(theta0)
    cfg = resolve_config(base, args)
    records: list = []
    t0 = time.perf_counter()
    out = mri.reconstruct_mri(ks, cfg=cfg, log=_log(args), records=records)
    wall = time.perf_counter() - t0
    magnitude = np.abs(out)
    save_image(args.output, 255.0 * magnitude)
    entries = {"command": "mri", "kspace": args.kspace, "mask": args.mask,
               "output": args.output, "preset": args.preset, "theta0": theta0,
               "undersampling_ratio": f"{ratio:.4f}",
               **manifest_entries(cfg),
               **collect_times(records), "time_total_s": round(wall, 3)}
    if args.reference:
        ref = load_image(args.reference, force_gray=True)
        scale = ref.max() if ref.max() > 0 else 1.0
        value = psnr(ref / scale, magnitude, peak=1.0)
        entries["psnr_db"] = f"{value:.4f}"
        print(f"PSNR: {value:.2f} dB")
    write_manifest(args.output, entries)
    return EXIT_OK


def cmd_mri_sim(args) -> int:
    ref = load_image(args.input, force_gray=True)
    scale = ref.max() if ref.max() > 0 else 1.0
    normalized = ref / scale
    seed = args.seed if args.seed is not None else 0
    if args.mask:
        mask = load_mask(args.mask)
    else:
        mask = mri.make_mask(args.mask_kind, normalized.shape, args.ratio, seed=seed)
    ks = mri.simulate_kspace(normalized, mask)
    mri.save_kspace(args.kspace_out, ks)
    save_mask(args.mask_out, mask)
    entries = {"command": "mri-sim", "input": args.input,
               "kspace_out": args.kspace_out, "mask_out": args.mask_out,
               "mask_kind": args.mask if args.mask else args.mask_kind,
               "ratio": args.ratio, "seed": seed,
               "intensity_scale": f"{scale:.6f}",
               "samples": len(ks.samples), "mask_sha256": _sha256(mask)}
    write_manifest(args.kspace_out, entries)
    return EXIT_OK


def cmd_psnr(args) -> int:
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    print(f"{psnr(a, b, peak=args.peak):.2f}")
    return EXIT_OK


def _accept_inert_run_flags(p: argparse.ArgumentParser) -> None:
    """Uniform flags on subcommands whose work is single-pass and exact."""
    p.add_argument("--threads", dest="workers", type=int, default=None)
    p.add_argument("--deterministic", action="store_const", const=True, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="strollr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="remove Gaussian noise from an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p.add_argument("--reference", help="clean image for PSNR reporting")
    p.add_argument("--gray", action="store_true", help="force grayscale processing")
    add_common_options(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("inpaint", help="fill missing pixels")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mask", help="mask image, nonzero = available pixel")
    p.add_argument("--keep", type=float, help="generate a uniform random mask "
                   "keeping this fraction of pixels (with --seed)")
    p.add_argument("--save-mask", dest="save_mask", help="write the used mask here")
    p.add_argument("--sigma", type=float, default=None,
                   help="noise level of the available pixels (0/absent: noiseless)")
    p.add_argument("--reference")
    add_common_options(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("mri", help="reconstruct an image from undersampled k-space")
    p.add_argument("--kspace", required=True, help="STKS sample file")
    p.add_argument("--mask", required=True, help="sampling mask image")
    p.add_argument("--output", required=True)
    p.add_argument("--preset", choices=("anatomical", "phantom"), default="anatomical")
    p.add_argument("--theta0", type=float, default=None,
                   help="override the preset base threshold")
    p.add_argument("--reference")
    add_common_options(p)
    p.set_defaults(func=cmd_mri)

    p = sub.add_parser("mri-sim", help="simulate k-space data from an image")
    p.add_argument("--input", required=True)
    p.add_argument("--kspace-out", dest="kspace_out", required=True)
    p.add_argument("--mask-out", dest="mask_out", required=True)
    p.add_argument("--mask", help="use an existing mask image instead of generating")
    p.add_argument("--mask-kind", dest="mask_kind", default="random2d",
                   choices=("cartesian", "random2d", "pseudo_radial"))
    p.add_argument("--ratio", type=float, default=4.0, help="undersampling ratio")
    p.add_argument("--seed", type=int, default=None)
    _accept_inert_run_flags(p)
    p.set_defaults(func=cmd_mri_sim)

    p = sub.add_parser("psnr", help="peak signal-to-noise ratio between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--peak", type=float, default=255.0)
    p.add_argument("--seed", type=int, default=None)
    _accept_inert_run_flags(p)
    p.set_defaults(func=cmd_psnr)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, mri.KSpaceFormatError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:   # e.g. mismatched image dimensions
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
