"""Patch extraction and deposit operators.

Images are numpy arrays of shape (H, W) or (H, W, C), float64 or complex128.
A patch is vectorized in column-lexicographic order (rows vary fastest), one
n-vector per channel.  Patches are indexed by the raster order of their
top-left pixel over the valid start positions: all of them for wrap-around
boundary, only fully interior ones otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import WRAP, ConfigurationError, PatchGeometry


def as_channels(img: np.ndarray) -> np.ndarray:
    """View an (H, W) or (H, W, C) image as (H, W, C)."""
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim == 3:
        return img
    raise ValueError(f"expected a 2D or 3D image, got shape {img.shape}")


def start_positions(extent: int, side: int, stride: int, boundary: str) -> np.ndarray:
    """Valid patch start coordinates along one axis."""
    if boundary == WRAP:
        return np.arange(0, extent, stride)
    last = extent - side
    if last < 0:
        raise ConfigurationError(f"patch side {side} exceeds image extent {extent}")
    return np.arange(0, last + 1, stride)


@dataclass
class PatchGrid:
    """Precomputed pixel indices of every stride-1 patch of one image shape.

    pixel_indices[k, j] is the flat (row-major) pixel id of entry j of patch k,
    with j running down the patch columns.  Built once per (shape, geometry)
    and reused across solver iterations.
    """

    shape: tuple[int, int]
    geom: PatchGeometry
    rows: np.ndarray = field(init=False)
    cols: np.ndarray = field(init=False)
    pixel_indices: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        h, w = self.shape
        g = self.geom
        self.rows = start_positions(h, g.side, 1, g.boundary)
        self.cols = start_positions(w, g.side, 1, g.boundary)
        offs = np.arange(g.n)
        dr = offs % g.side
        dc = offs // g.side
        rr = self.rows[:, None] + dr[None, :]   # (n_rows, n)
        cc = self.cols[:, None] + dc[None, :]
        if g.boundary == WRAP:
            rr %= h
            cc %= w
        self.pixel_indices = (
            (rr * w)[:, None, :] + cc[None, :, :]
        ).reshape(-1, g.n).astype(np.int32)

    @property
    def count(self) -> int:
        return self.pixel_indices.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    def index_of(self, row: int, col: int) -> int:
        """Patch id of the patch starting at (row, col)."""
        n_cols = len(self.cols)
        ir = np.searchsorted(self.rows, row)
        ic = np.searchsorted(self.cols, col)
        if ir >= len(self.rows) or ic >= n_cols or self.rows[ir] != row or self.cols[ic] != col:
            raise IndexError(f"({row}, {col}) is not a valid patch start")
        return int(ir * n_cols + ic)


def patch_matrix(img: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """All patches of the image as an (N, n, C) array."""
    img3 = as_channels(img)
    h, w, c = img3.shape
    flat = img3.reshape(h * w, c)
    return flat[grid.pixel_indices]           # (N, n, C)


def _check_index(index: int, grid: PatchGrid) -> None:
    if not 0 <= index < grid.count:
        raise IndexError(f"patch index {index} out of range [0, {grid.count})")


def extract_patch(img: np.ndarray, index: int, geom: PatchGeometry) -> np.ndarray:
    """Vectorized patch `index`: shape (n,) for 2D images, (n, C) otherwise."""
    grid = PatchGrid(as_channels(img).shape[:2], geom)
    _check_index(index, grid)
    img3 = as_channels(img)
    flat = img3.reshape(-1, img3.shape[2])
    vec = flat[grid.pixel_indices[index]]     # (n, C)
    return vec[:, 0] if img.ndim == 2 else vec


def deposit_patch(buffer: np.ndarray, index: int, geom: PatchGeometry,
                  values: np.ndarray) -> None:
    """Add a vectorized patch into `buffer` at patch position `index`.

    Overlapping deposits accumulate; this is the adjoint of extract_patch.
    """
    grid = PatchGrid(as_channels(buffer).shape[:2], geom)
    _check_index(index, grid)
    buf3 = as_channels(buffer)
    flat = buf3.reshape(-1, buf3.shape[2])
    vals = values[:, None] if values.ndim == 1 else values
    np.add.at(flat, grid.pixel_indices[index], vals)


def deposit_many(buffer3: np.ndarray, pixel_rows: np.ndarray,
                 values: np.ndarray) -> None:
    """Accumulate many patches at once into an (H, W, C) buffer.

    pixel_rows: (K, n) flat pixel ids; values: (K, n, C).  Summation runs in
    a fixed order (bincount over flat ids), so results do not depend on how
    callers split the work.
    """
    h, w, c = buffer3.shape
    ids = pixel_rows.ravel()
    p = h * w
    flat = buffer3.reshape(p, c)
    for ch in range(c):
        v = values[:, :, ch].ravel()
        if np.iscomplexobj(flat):
            flat[:, ch] += np.bincount(ids, weights=v.real, minlength=p)
            flat[:, ch] += 1j * np.bincount(ids, weights=v.imag, minlength=p)
        else:
            flat[:, ch] += np.bincount(ids, weights=v, minlength=p)


def coverage_counts(grid: PatchGrid, patch_ids: np.ndarray) -> np.ndarray:
    """Per-pixel count of how many of the given patches touch each pixel."""
    h, w = grid.shape
    ids = grid.pixel_indices[patch_ids].ravel()
    return np.bincount(ids, minlength=h * w).reshape(h, w)
