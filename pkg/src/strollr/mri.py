"""Compressed-sensing MRI: undersampled unitary Fourier sensing.

Reference patches wrap around the image borders, so every pixel belongs to
the same number (n) of patches and the normal matrix diagonalizes in k-space.
Patches appearing in several matched groups are averaged by their appearance
counts before aggregation, which keeps the frequency-domain update exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import WRAP, ConfigurationError, PatchGeometry, SolverConfig
from .engine import Backend, run
from .patches import deposit_many

_MAGIC = b"STKS"
_VERSION = 1
_HEADER = "<4sIIII"   # magic, version, height, width, sample count
HEADER_SIZE = struct.calcsize(_HEADER)


class KSpaceFormatError(ValueError):
    """Malformed k-space file; messages carry the offending byte offset."""


@dataclass
class KSpaceData:
    samples: np.ndarray    # (q,) complex, raster order of mask-true frequencies
    mask: np.ndarray       # (H, W) bool, True where sampled

    def __post_init__(self) -> None:
        if self.samples.shape != (int(self.mask.sum()),):
            raise ConfigurationError(
                f"sample count {self.samples.shape} does not match mask "
                f"({int(self.mask.sum())} sampled frequencies)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def fft2_ortho(x: np.ndarray) -> np.ndarray:
    return np.fft.fft2(x, norm="ortho")


def ifft2_ortho(x: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(x, norm="ortho")


def forward_fg(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT restricted to the sampled frequencies."""
    if x.shape != mask.shape:
        raise ValueError(f"image shape {x.shape} does not match mask {mask.shape}")
    return fft2_ortho(x)[mask]


def adjoint_fg(samples: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero-filled inverse: conjugate transpose of forward_fg."""
    spectrum = np.zeros(mask.shape, dtype=np.complex128)
    spectrum[mask] = samples
    return ifft2_ortho(spectrum)


def zero_filled(ks: KSpaceData) -> np.ndarray:
    return adjoint_fg(ks.samples, ks.mask)


def upsampled_spectrum(ks: KSpaceData) -> np.ndarray:
    """G y: samples placed at their k-space locations, zeros elsewhere."""
    spectrum = np.zeros(ks.shape, dtype=np.complex128)
    spectrum[ks.mask] = ks.samples
    return spectrum


def make_mask(kind: str, shape: tuple[int, int], ratio: float, seed: int = 0) -> np.ndarray:
    """Sampling mask with roughly H*W/ratio True entries, DC always sampled.

    cartesian      full rows, chosen uniformly at random
    random2d       frequencies chosen uniformly without replacement
    pseudo_radial  diametric lines through DC at evenly spaced angles,
                   rasterized to the nearest grid point (deterministic)
    """
    h, w = shape
    p = h * w
    if ratio < 1:
        raise ConfigurationError("undersampling ratio must be >= 1")
    if ratio > p:
        raise ConfigurationError(f"ratio {ratio} exceeds the number of frequencies {p}")
    target = max(1, int(round(p / ratio)))
    rng = np.random.default_rng(seed)

    if kind == "cartesian":
        n_rows = max(1, int(round(h / ratio)))
        rows = {0}
        remaining = [r for r in range(h) if r != 0]
        extra = rng.choice(len(remaining), size=max(0, n_rows - 1), replace=False)
        rows.update(remaining[i] for i in extra)
        mask = np.zeros((h, w), dtype=bool)
        mask[sorted(rows), :] = True
        return mask

    if kind == "random2d":
        mask = np.zeros(p, dtype=bool)
        mask[0] = True  # DC
        others = rng.choice(p - 1, size=max(0, target - 1), replace=False) + 1
        mask[others] = True
        return mask.reshape(h, w)

    if kind == "pseudo_radial":
        return _pseudo_radial_mask(shape, target)

    raise ConfigurationError(f"unknown mask kind {kind!r}")


def _radial_line(shape: tuple[int, int], angle: float) -> np.ndarray:
    """Flat centered-grid indices of one diametric line through DC, ordered
    inner to outer (may contain duplicates from rounding)."""
    h, w = shape
    ch, cw = h // 2, w // 2
    radius = int(np.ceil(np.hypot(h, w) / 2)) + 1
    steps = np.arange(0.5, radius, 0.5)
    t = np.empty(1 + 2 * len(steps))
    t[0] = 0.0
    t[1::2] = steps
    t[2::2] = -steps
    rr = np.rint(ch + t * np.sin(angle)).astype(int)
    cc = np.rint(cw + t * np.cos(angle)).astype(int)
    ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    return rr[ok] * w + cc[ok]


def _pseudo_radial_mask(shape: tuple[int, int], target: int) -> np.ndarray:
    """Union of evenly spaced diametric lines; the last line is trimmed from
    its outer end so the sample count lands exactly on the target."""
    h, w = shape
    p = h * w
    centered = np.zeros(p, dtype=bool)
    count = 0
    for k in range(360):
        if count >= target:
            break
        for idx in _radial_line(shape, np.pi * k / 360.0):
            if not centered[idx]:
                centered[idx] = True
                count += 1
                if count == target:
                    break
    if count < target:
        # near-full sampling exceeds what the line family covers; grow by radius
        rr, cc = np.unravel_index(np.arange(p), (h, w))
        r2 = (rr - h // 2) ** 2 + (cc - w // 2) ** 2
        for idx in np.lexsort((np.arange(p), r2)):
            if not centered[idx]:
                centered[idx] = True
                count += 1
                if count == target:
                    break
    return np.fft.ifftshift(centered.reshape(h, w))


def simulate_kspace(reference: np.ndarray, mask: np.ndarray) -> KSpaceData:
    """Noise-free k-space samples of a real-valued magnitude image."""
    if np.iscomplexobj(reference):
        raise ValueError("simulate_kspace expects a real-valued magnitude image")
    ref = np.asarray(reference, dtype=np.float64)
    return KSpaceData(samples=forward_fg(ref.astype(np.complex128), mask), mask=mask)


def save_kspace(path: str, ks: KSpaceData) -> None:
    h, w = ks.shape
    header = struct.pack(_HEADER, _MAGIC, _VERSION, h, w, len(ks.samples))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ks.samples, dtype="<c16").tobytes())


def load_kspace(path: str, mask: np.ndarray) -> KSpaceData:
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise KSpaceFormatError(f"{path}: truncated header at byte {len(header)}")
        magic, version, h, w, q = struct.unpack(_HEADER, header)
        if magic != _MAGIC:
            raise KSpaceFormatError(f"{path}: bad magic {magic!r} at byte 0")
        if version != _VERSION:
            raise KSpaceFormatError(f"{path}: unsupported version {version} at byte 4")
        body = fh.read()
    expected = 16 * q
    if len(body) != expected:
        raise KSpaceFormatError(
            f"{path}: expected {expected} sample bytes, found {len(body)} at byte {HEADER_SIZE}")
    if mask.shape != (h, w):
        raise KSpaceFormatError(
            f"{path}: mask shape {mask.shape} does not match header ({h}, {w})")
    if int(mask.sum()) != q:
        raise KSpaceFormatError(
            f"{path}: header says {q} samples but mask has {int(mask.sum())} at byte 12")
    samples = np.frombuffer(body, dtype="<c16").astype(np.complex128)
    return KSpaceData(samples=samples, mask=mask)


class MriAggregator:
    """Appearance-count-normalized aggregation over wrap-around patches."""

    def __init__(self, groups):
        geom = groups.geom
        if geom.boundary != WRAP:
            raise ConfigurationError("MRI aggregation requires wrap-around patches")
        grid = groups.grid
        h, w = grid.shape
        self.groups = groups
        self.p = h * w
        n = geom.n
        self.acc_sparse = np.zeros((self.p, n), dtype=np.complex128)
        self.acc_lowrank = np.zeros((self.p, n), dtype=np.complex128)
        self.count_lowrank = np.bincount(groups.members.ravel(), minlength=self.p)
        self.count_sparse = np.bincount(groups.members[:, :geom.depth].ravel(),
                                        minlength=self.p)
        if self.count_lowrank.min() < 1 or self.count_sparse.min() < 1:
            raise ConfigurationError("wrap-around coverage failed: uncovered patch")

    def _scatter(self, acc: np.ndarray, members: np.ndarray, blocks: np.ndarray) -> None:
        b, n, m = blocks.shape
        restored = blocks + self.groups.patch_means[members].transpose(0, 2, 1)
        ids = members.ravel()
        vals = restored.transpose(0, 2, 1).reshape(b * m, n)
        for j in range(n):
            acc[:, j] += np.bincount(ids, weights=vals[:, j].real, minlength=self.p)
            acc[:, j] += 1j * np.bincount(ids, weights=vals[:, j].imag, minlength=self.p)

    def add_lowrank(self, members: np.ndarray, blocks: np.ndarray) -> None:
        self._scatter(self.acc_lowrank, members, blocks)

    def add_sparse(self, members: np.ndarray, blocks: np.ndarray) -> None:
        depth = self.groups.geom.depth
        self._scatter(self.acc_sparse, members[:, :depth], blocks)

    def averaged(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-patch averaged sparse and low-rank approximants (p, n)."""
        u_avg = self.acc_sparse / self.count_sparse[:, None]
        d_avg = self.acc_lowrank / self.count_lowrank[:, None]
        return u_avg, d_avg


def average_approximants(aggregator: MriAggregator) -> tuple[np.ndarray, np.ndarray]:
    return aggregator.averaged()


def mri_image_update(ks: KSpaceData, u_avg: np.ndarray, d_avg: np.ndarray,
                     geom: PatchGeometry, grid, gamma_sparse: float,
                     gamma_lowrank: float) -> np.ndarray:
    """Closed-form frequency-domain solve of the count-normalized update."""
    h, w = ks.shape
    n = geom.n
    scale = n * (gamma_sparse + gamma_lowrank)
    if scale == 0 and not ks.mask.all():
        raise ConfigurationError("zero regularizer weights leave unsampled "
                                 "frequencies undetermined")
    acc = np.zeros((h, w, 1), dtype=np.complex128)
    combo = (gamma_sparse * u_avg + gamma_lowrank * d_avg)[:, :, None]
    deposit_many(acc, grid.pixel_indices, combo)
    z = upsampled_spectrum(ks) + fft2_ortho(acc[:, :, 0])
    b_diag = ks.mask.astype(np.float64) + scale
    return ifft2_ortho(z / b_diag)


class MriBackend(Backend):
    complex_valued = True

    def __init__(self, ks: KSpaceData, cfg: SolverConfig):
        if cfg.geom.boundary != WRAP:
            raise ConfigurationError("MRI reconstruction requires wrap-around patches")
        if cfg.lam is None or cfg.theta is None:
            raise ConfigurationError("MRI reconstruction needs lam and theta")
        self.ks = ks
        self.cfg = cfg

    def initial_image(self) -> np.ndarray:
        return zero_filled(self.ks)[:, :, None]

    def thresholds(self, iteration: int) -> tuple[float, float]:
        return float(self.cfg.lam), float(self.cfg.theta)

    def make_aggregator(self, groups):
        return MriAggregator(groups)

    def reconstruct(self, aggregator: MriAggregator) -> np.ndarray:
        u_avg, d_avg = aggregator.averaged()
        x = mri_image_update(self.ks, u_avg, d_avg, self.cfg.geom,
                             aggregator.groups.grid, self.cfg.gamma_sparse,
                             self.cfg.gamma_lowrank)
        return x[:, :, None]

    def fidelity(self, x: np.ndarray) -> float:
        diff = forward_fg(x[:, :, 0], self.ks.mask) - self.ks.samples
        return float(np.vdot(diff, diff).real)


def theta0_for(preset: str, ratio: float) -> float:
    """Base threshold by image class and undersampling ratio."""
    if preset == "anatomical":
        return 0.02 if ratio <= 5 else 0.05
    if preset == "phantom":
        return 0.05
    raise ConfigurationError(f"unknown MRI preset {preset!r}")


def default_config(theta0: float, **overrides) -> SolverConfig:
    geom = overrides.pop("geom", None) or PatchGeometry(
        side=6, depth=8, match_count=36, window_side=30, boundary=WRAP)
    cfg = SolverConfig(geom=geom, gamma_fidelity=1.0, gamma_sparse=1e-6,
                       gamma_lowrank=1e-6, iterations=100,
                       lam=theta0 / 2.0, theta=theta0)
    return cfg.with_overrides(**overrides) if overrides else cfg


def reconstruct_mri(ks: KSpaceData, cfg: SolverConfig | None = None,
                    preset: str = "anatomical", theta0: float | None = None,
                    log=None, records: list | None = None) -> np.ndarray:
    """Reconstruct a complex image from undersampled k-space samples.

    Intensities are assumed normalized to about [0, 1]; the fixed thresholds
    are calibrated for that scale.
    """
    if cfg is None:
        if theta0 is None:
            ratio = ks.mask.size / max(1, int(ks.mask.sum()))
            theta0 = theta0_for(preset, ratio)
        cfg = default_config(theta0)
    backend = MriBackend(ks, cfg)
    out = run(backend, cfg, log=log, records=records)
    return out[:, :, 0]
