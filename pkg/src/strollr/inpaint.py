"""Missing-pixel inpainting: masked-diagonal sensing with a noisy closed form
and a hard-constraint variant for noise-free measurements."""

from __future__ import annotations

import numpy as np

from .config import INTERIOR, ConfigurationError, PatchGeometry, SolverConfig
from .engine import Backend, run
from .patches import as_channels

# sparsity weight anchors: (available-pixel fraction, lambda)
LAMBDA_ANCHORS = ((0.2, 20.0), (0.3, 12.0), (0.5, 5.0))


def default_lambda(keep_fraction: float) -> float:
    """Sparsity weight for a keep ratio, linearly interpolated between the
    published anchor points and clamped to their range."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigurationError("keep fraction must lie in (0, 1]")
    xs = [a[0] for a in LAMBDA_ANCHORS]
    ys = [a[1] for a in LAMBDA_ANCHORS]
    lam = float(np.interp(keep_fraction, xs, ys))
    return float(np.clip(lam, 5.0, 20.0))


def default_config(keep_fraction: float | None = None, **overrides) -> SolverConfig:
    """Standard inpainting configuration; theta stays unset and is derived
    from the final lam as lam * (sqrt(n) + sqrt(M)) when the solver starts,
    so overriding lam keeps the pair consistent."""
    geom = overrides.pop("geom", None) or PatchGeometry(
        side=6, depth=8, match_count=80, window_side=30, boundary=INTERIOR)
    cfg = SolverConfig(geom=geom, gamma_fidelity=1.0, gamma_sparse=1.0,
                       gamma_lowrank=1.0, iterations=150)
    if keep_fraction is not None:
        cfg.lam = default_lambda(keep_fraction)
    return cfg.with_overrides(**overrides) if overrides else cfg


def fill_thresholds(cfg: SolverConfig, keep_fraction: float) -> SolverConfig:
    """Resolve missing lam/theta for a given availability ratio."""
    if cfg.lam is None:
        cfg.lam = default_lambda(keep_fraction)
    if cfg.theta is None:
        cfg.theta = cfg.lam * (np.sqrt(cfg.geom.n) + np.sqrt(cfg.geom.match_count))
    return cfg


def random_mask(shape: tuple[int, int], keep_fraction: float, seed: int = 0) -> np.ndarray:
    """Uniform random pixel mask keeping round(keep * H * W) pixels."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigurationError("keep fraction must lie in (0, 1]")
    h, w = shape
    p = h * w
    keep = int(round(keep_fraction * p))
    keep = max(1, keep)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(p, size=keep, replace=False)
    mask = np.zeros(p, dtype=bool)
    mask[chosen] = True
    return mask.reshape(h, w)


def inpaint_update_noisy(b: np.ndarray, z: np.ndarray, y: np.ndarray,
                         mask: np.ndarray, gamma_fidelity: float) -> np.ndarray:
    """Pixel-wise solve of (gamma_F Phi + diag(b)) x = gamma_F Phi y + z."""
    y3 = as_channels(y)
    m3 = mask[:, :, None].astype(np.float64)
    denom = gamma_fidelity * m3 + (b[:, :, None] if b.ndim == 2 else b)
    if np.any(denom <= 0):
        raise ConfigurationError("missing pixel not covered by any patch group")
    return (gamma_fidelity * m3 * y3 + z) / denom


def inpaint_update_noiseless(b: np.ndarray, z: np.ndarray, y: np.ndarray,
                             mask: np.ndarray) -> np.ndarray:
    """Hard-constraint solve: keep available pixels, average deposits elsewhere."""
    y3 = as_channels(y)
    b2 = b if b.ndim == 2 else b[:, :, 0]
    missing = ~mask
    if np.any(b2[missing] <= 0):
        raise ConfigurationError("missing pixel not covered by any patch group")
    out = y3.copy()
    fill = z / np.where(b2 > 0, b2, 1.0)[:, :, None]
    out[missing] = fill[missing]
    return out


class InpaintBackend(Backend):
    def __init__(self, observed: np.ndarray, mask: np.ndarray, cfg: SolverConfig,
                 noise_sigma: float | None = None):
        y = as_channels(np.asarray(observed, dtype=np.float64)).copy()
        if mask.shape != y.shape[:2]:
            raise ConfigurationError(
                f"mask shape {mask.shape} does not match image {y.shape[:2]}")
        if not mask.any():
            raise ConfigurationError("mask leaves no available pixels")
        self.y = y
        self.mask = mask.astype(bool)
        self.cfg = cfg
        self.noiseless = noise_sigma is None or noise_sigma == 0
        if cfg.lam is None or cfg.theta is None:
            raise ConfigurationError("inpainting needs lam and theta in the config")

    def initial_image(self) -> np.ndarray:
        # the measurement leaves missing pixels undefined; start them at the
        # mean of the available ones so block matching sees a complete image
        x0 = self.y.copy()
        for ch in range(x0.shape[2]):
            fill = x0[:, :, ch][self.mask].mean()
            x0[:, :, ch][~self.mask] = fill
        return x0

    def thresholds(self, iteration: int) -> tuple[float, float]:
        return float(self.cfg.lam), float(self.cfg.theta)

    def reconstruct(self, aggregator) -> np.ndarray:
        b, z = aggregator.normal_terms(self.cfg.gamma_sparse, self.cfg.gamma_lowrank)
        if self.noiseless:
            return inpaint_update_noiseless(b, z, self.y, self.mask)
        return inpaint_update_noisy(b, z, self.y, self.mask, self.cfg.gamma_fidelity)

    def fidelity(self, x: np.ndarray) -> float:
        if self.noiseless:
            return 0.0
        diff = (x - self.y) * self.mask[:, :, None]
        return self.cfg.gamma_fidelity * float(np.vdot(diff, diff).real)


def inpaint(observed: np.ndarray, mask: np.ndarray, noise_sigma: float | None = None,
            cfg: SolverConfig | None = None, log=None,
            records: list | None = None) -> np.ndarray:
    """Fill missing pixels of a grayscale image; mask is True where observed."""
    if cfg is None:
        cfg = default_config(float(mask.mean()))
        if noise_sigma:
            cfg.gamma_fidelity = 0.1 / (noise_sigma * noise_sigma)
    cfg = fill_thresholds(cfg, float(mask.mean()))
    backend = InpaintBackend(observed, mask, cfg, noise_sigma=noise_sigma)
    out = run(backend, cfg, log=log, records=records)
    return out[:, :, 0] if np.ndim(observed) == 2 else out
