"""STROLLR-style image recovery: learned unitary 3D sparsifying transform
combined with low-rank approximation of block-matched patch groups."""

from .config import INTERIOR, WRAP, ConfigurationError, PatchGeometry, SolverConfig
from .denoise import denoise, default_config as denoise_config
from .engine import run
from .inpaint import inpaint, random_mask, default_config as inpaint_config
from .metrics import psnr
from .mri import (KSpaceData, load_kspace, make_mask, reconstruct_mri,
                  save_kspace, simulate_kspace, zero_filled)

__all__ = [
    "INTERIOR", "WRAP", "ConfigurationError", "PatchGeometry", "SolverConfig",
    "denoise", "denoise_config", "inpaint", "inpaint_config", "random_mask",
    "psnr", "run", "KSpaceData", "load_kspace", "make_mask", "reconstruct_mri",
    "save_kspace", "simulate_kspace", "zero_filled",
]
