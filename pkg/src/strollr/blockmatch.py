"""Block matching: nearest-patch groups inside a square search window.

Every patch is compared after removing its per-channel mean.  For each
reference patch the M window candidates with the smallest Euclidean distance
to the reference are kept, reference first, remaining members ordered by
ascending distance with ties broken by ascending patch raster index.  The
window is centered on the reference and shifted (never shrunk) at image
borders, so it always holds the same number of candidates; in wrap-around
mode it wraps instead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import WRAP, ConfigurationError, PatchGeometry
from .patches import PatchGrid, as_channels, deposit_many, patch_matrix, start_positions


@dataclass
class MatchedGroup:
    """Matching result for a single reference patch."""

    ref_index: int
    member_indices: np.ndarray   # (M,) patch ids, member_indices[0] == ref_index
    distances: np.ndarray        # (M,) non-decreasing, distances[0] == 0
    means: np.ndarray            # (M, C) removed per-channel means


@dataclass
class GroupSet:
    """Matching results for all reference patches of one image.

    patch_means are frozen at matching time; the solver treats them as
    constants for the rest of the iteration (they are restored onto the
    approximants before aggregation, which keeps the normal matrix diagonal).
    """

    grid: PatchGrid              # stride-1 candidate grid
    geom: PatchGeometry
    channels: int
    ref_ids: np.ndarray          # (N,) candidate-grid ids of the references
    members: np.ndarray          # (N, M)
    distances: np.ndarray        # (N, M)
    patch_means: np.ndarray      # (N_all, C) per-channel mean of every patch
    patches: np.ndarray          # (N_all, n, C) raw patch matrix at match time

    @property
    def count(self) -> int:
        return len(self.ref_ids)

    def group(self, i: int) -> MatchedGroup:
        return MatchedGroup(
            ref_index=int(self.ref_ids[i]),
            member_indices=self.members[i].copy(),
            distances=self.distances[i].copy(),
            means=self.patch_means[self.members[i]].copy(),
        )


def _axis_window(center: np.ndarray, count: int, window: int, wrap: bool) -> np.ndarray:
    """Window of candidate grid indices along one axis, per center index.

    Returns (len(center), w) with w = min(window, count).  The window spans
    floor((window-1)/2) indices before the center.
    """
    w = min(window, count)
    offs = np.arange(w) - (w - 1) // 2
    idx = center[:, None] + offs[None, :]
    if wrap:
        return idx % count
    shift_lo = np.minimum(idx[:, 0], 0)
    shift_hi = np.maximum(idx[:, -1] - (count - 1), 0)
    return idx - shift_lo[:, None] - shift_hi[:, None]


def _demeaned_patches(img: np.ndarray, grid: PatchGrid):
    """(raw patches (N, n, C), demeaned flat (N, n*C), squared norms, means)."""
    p = patch_matrix(img, grid)                  # (N, n, C)
    means = p.mean(axis=1)                       # (N, C)
    p0 = p - means[:, None, :]
    flat = p0.reshape(p0.shape[0], -1)
    norms = np.einsum("ij,ij->i", flat.conj(), flat).real
    return p, flat, norms, means


def reference_positions(shape: tuple[int, int], geom: PatchGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Grid row/column indices of the reference patches (stride applied)."""
    h, w = shape
    rows = start_positions(h, geom.side, geom.stride, geom.boundary)
    cols = start_positions(w, geom.side, geom.stride, geom.boundary)
    return rows, cols


def match_all(img: np.ndarray, geom: PatchGeometry, grid: PatchGrid | None = None,
              workers: int = 1) -> GroupSet:
    """Block-match every reference patch of the image."""
    img3 = as_channels(img)
    shape = img3.shape[:2]
    channels = img3.shape[2]
    if grid is None:
        grid = PatchGrid(shape, geom)
    wrap = geom.boundary == WRAP

    raw, flat, norms, means = _demeaned_patches(img3, grid)
    n_rows, n_cols = grid.grid_shape

    ref_rows, ref_cols = reference_positions(shape, geom)
    # reference grid indices equal their start coordinates on the stride-1 grid
    rwin = _axis_window(ref_rows, n_rows, geom.window_side, wrap)   # (nr, wr)
    cwin = _axis_window(ref_cols, n_cols, geom.window_side, wrap)   # (nc, wc)
    q = rwin.shape[1] * cwin.shape[1]
    m = geom.match_count
    if q < m:
        raise ConfigurationError(
            f"search window holds {q} candidates but match_count M={m}; "
            "use a larger image or a smaller M"
        )

    n_ref = len(ref_rows) * len(ref_cols)
    ref_ids = (ref_rows[:, None] * n_cols + ref_cols[None, :]).ravel()
    members = np.empty((n_ref, m), dtype=np.int32)
    distances = np.empty((n_ref, m), dtype=np.float64)

    # block over reference rows so each block shares one band of candidates;
    # block height capped so the (refs x band) dot-product buffer stays small
    budget = 16_000_000 // max(1, n_cols * n_cols)
    rows_per_block = 1
    while (rows_per_block + 1) * (rows_per_block + 1 + geom.window_side) <= budget:
        rows_per_block += 1
    rows_per_block = min(max(1, rows_per_block), len(ref_rows))
    blocks = [
        slice(i, min(i + rows_per_block, len(ref_rows)))
        for i in range(0, len(ref_rows), rows_per_block)
    ]

    def run_block(bsl: slice) -> None:
        rw = rwin[bsl]                            # (br, wr)
        band_rows = np.unique(rw)
        lookup = np.full(n_rows, -1, dtype=np.int64)
        lookup[band_rows] = np.arange(len(band_rows))
        band_ids = (band_rows[:, None] * n_cols + np.arange(n_cols)[None, :]).ravel()
        band = flat[band_ids]                     # (bandN, n*C)
        lo = bsl.start * len(ref_cols)
        hi = bsl.stop * len(ref_cols)
        block_ref_ids = ref_ids[lo:hi]
        dots = (flat[block_ref_ids].conj() @ band.T).real   # (B, bandN)

        # per-reference candidate slots inside the band and true grid ids
        br = rw.shape[0]
        slot_rows = lookup[rw] * n_cols           # (br, wr)
        slots = (slot_rows[:, None, :, None] + cwin[None, :, None, :])
        cand = (rw[:, None, :, None] * n_cols + cwin[None, :, None, :])
        slots = slots.reshape(br * len(ref_cols), q)
        cand = cand.reshape(br * len(ref_cols), q)

        d = norms[cand] + norms[block_ref_ids][:, None] - 2.0 * np.take_along_axis(dots, slots, axis=1)
        np.maximum(d, 0.0, out=d)
        d[cand == block_ref_ids[:, None]] = np.inf   # reference pinned to slot 0

        if wrap:
            # wrapped windows break the raster ordering of candidate ids
            perm = np.argsort(cand, axis=1)
            cand = np.take_along_axis(cand, perm, axis=1)
            d = np.take_along_axis(d, perm, axis=1)
        order = np.argsort(d, axis=1, kind="stable")[:, : m - 1]

        members[lo:hi, 0] = block_ref_ids
        distances[lo:hi, 0] = 0.0
        if m > 1:
            members[lo:hi, 1:] = np.take_along_axis(cand, order, axis=1)
            distances[lo:hi, 1:] = np.take_along_axis(d, order, axis=1)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_block, blocks))
    else:
        for bsl in blocks:
            run_block(bsl)

    return GroupSet(grid=grid, geom=geom, channels=channels, ref_ids=ref_ids,
                    members=members, distances=distances, patch_means=means,
                    patches=raw)


def block_match(img: np.ndarray, ref_index: int, geom: PatchGeometry) -> MatchedGroup:
    """Match a single reference patch (reference numbering follows geom.stride)."""
    groups = match_all(img, geom)
    if not 0 <= ref_index < groups.count:
        raise IndexError(f"reference index {ref_index} out of range [0, {groups.count})")
    return groups.group(ref_index)


def gather_group_matrices(patches: np.ndarray, patch_means: np.ndarray,
                          members: np.ndarray) -> np.ndarray:
    """Demeaned group matrices (B, n, M*C) for a batch of member-index rows.

    Column m*C + c holds channel c of member m, so the per-member channels
    sit in adjacent columns.
    """
    block = patches[members]                              # (B, M, n, C)
    block = block - patch_means[members][:, :, None, :]
    b, m, n, c = block.shape
    return block.transpose(0, 2, 1, 3).reshape(b, n, m * c)


def vectors_from_matrices(mats: np.ndarray, depth: int, channels: int) -> np.ndarray:
    """First-l-members coding vectors (B, n*l*C) from (B, n, M*C) matrices."""
    b, n, _ = mats.shape
    sub = mats[:, :, : depth * channels]
    return sub.transpose(0, 2, 1).reshape(b, depth * channels * n)


def matrices_from_vectors(vecs: np.ndarray, n: int) -> np.ndarray:
    """Inverse of vectors_from_matrices: (B, d) -> (B, n, d // n)."""
    b, d = vecs.shape
    return vecs.reshape(b, d // n, n).transpose(0, 2, 1)


def group_matrix(img: np.ndarray, group: MatchedGroup, geom: PatchGeometry) -> np.ndarray:
    """Mean-removed matched-group matrix of shape (n, M*C)."""
    img3 = as_channels(img)
    grid = PatchGrid(img3.shape[:2], geom)
    p = patch_matrix(img3, grid)
    means = p.mean(axis=1)
    return gather_group_matrices(p, means, group.member_indices[None, :])[0]


def group_vector_3d(img: np.ndarray, group: MatchedGroup, geom: PatchGeometry) -> np.ndarray:
    """Concatenation of the first l member columns of the group matrix."""
    img3 = as_channels(img)
    mat = group_matrix(img, group, geom)
    return vectors_from_matrices(mat[None], geom.depth, img3.shape[2])[0]


def _deposit_demeaned(blocks: np.ndarray, member_ids: np.ndarray, grid: PatchGrid,
                      channels: int, out: np.ndarray) -> None:
    """Deposit columns after projecting out their means (adjoint of demeaning)."""
    cols = blocks.reshape(blocks.shape[0], -1, channels)   # (n, K, C), channel-minor
    cols = cols - cols.mean(axis=0, keepdims=True)
    vals = cols.transpose(1, 0, 2)                         # (K, n, C)
    deposit_many(out, grid.pixel_indices[member_ids], vals)


def group_matrix_adjoint(mat: np.ndarray, group: MatchedGroup, geom: PatchGeometry,
                         shape: tuple[int, int], channels: int = 1) -> np.ndarray:
    """Adjoint of the mean-removing group-matrix operator."""
    grid = PatchGrid(shape, geom)
    dtype = np.complex128 if np.iscomplexobj(mat) else np.float64
    out = np.zeros((shape[0], shape[1], channels), dtype=dtype)
    _deposit_demeaned(mat, group.member_indices, grid, channels, out)
    return out if channels > 1 else out[:, :, 0]


def group_vector_adjoint(vec: np.ndarray, group: MatchedGroup, geom: PatchGeometry,
                         shape: tuple[int, int], channels: int = 1) -> np.ndarray:
    """Adjoint of the mean-removing 3D-vector operator."""
    mat = matrices_from_vectors(vec[None], geom.n)[0]
    grid = PatchGrid(shape, geom)
    dtype = np.complex128 if np.iscomplexobj(vec) else np.float64
    out = np.zeros((shape[0], shape[1], channels), dtype=dtype)
    _deposit_demeaned(mat, group.member_indices[: geom.depth], grid, channels, out)
    return out if channels > 1 else out[:, :, 0]
