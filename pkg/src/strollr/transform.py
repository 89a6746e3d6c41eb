"""Unitary sparsifying transform: exact sparse coding and closed-form update.

For a unitary W the minimizer of ||W u - a||^2 + lam^2 ||a||_0 is plain hard
thresholding of W u.  The best unitary W for fixed codes solves an orthogonal
Procrustes problem: with K = sum_i u_i a_i^H and full SVD K = S Sigma G^H,
the optimum is W = G S^H.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"STWF"
_KIND_REAL = 0
_KIND_COMPLEX = 1


@dataclass
class SparseCode:
    coefficients: np.ndarray
    nnz: int


def hard_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    """Zero every entry with magnitude strictly below `threshold`."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    values = np.asarray(values)
    return np.where(np.abs(values) < threshold, np.zeros((), dtype=values.dtype), values)


def sparse_code(w: np.ndarray, u: np.ndarray, lam: float) -> SparseCode:
    """Exact transform-domain sparse code of u under unitary w."""
    if w.shape[1] != u.shape[0]:
        raise ValueError(f"dimension mismatch: W is {w.shape}, u has length {u.shape[0]}")
    alpha = hard_threshold(w @ u, lam)
    return SparseCode(coefficients=alpha, nnz=int(np.count_nonzero(alpha)))


def transform_update(pairs, prev: np.ndarray | None = None) -> np.ndarray:
    """Unitary minimizer of sum_i ||W u_i - a_i||^2.

    `pairs` is an iterable of (u, alpha) vectors or a pair of stacked (N, d)
    arrays.  When the cross matrix K vanishes every unitary W is optimal; the
    previous transform (or the identity) is kept so runs stay reproducible.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and hasattr(pairs[0], "ndim"):
        us, alphas = pairs
    else:
        items = list(pairs)
        if not items:
            raise ValueError("transform update needs at least one (u, alpha) pair")
        us = np.stack([u for u, _ in items])
        alphas = np.stack([a for _, a in items])
    k = us.T @ alphas.conj()
    return transform_update_gram(k, prev=prev)


def transform_update_gram(k: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Transform update from the accumulated cross matrix K = sum u_i a_i^H."""
    d = k.shape[0]
    if not np.any(k):
        if prev is not None:
            return prev
        eye = np.eye(d)
        return eye.astype(k.dtype) if np.iscomplexobj(k) else eye
    s, _, gh = np.linalg.svd(k)
    return gh.conj().T @ s.conj().T


def unitarity_defect(w: np.ndarray) -> float:
    """Frobenius distance of W^H W from the identity."""
    d = w.shape[0]
    return float(np.linalg.norm(w.conj().T @ w - np.eye(d)))


def dct_matrix(m: int) -> np.ndarray:
    """Orthonormal DCT-II analysis matrix of size m."""
    j = np.arange(m)
    k = np.arange(m)[:, None]
    mat = np.cos(np.pi * (2 * j + 1) * k / (2 * m))
    mat[0] *= np.sqrt(1.0 / m)
    mat[1:] *= np.sqrt(2.0 / m)
    return mat


def dct3_init(side: int, depth: int, channels: int = 1) -> np.ndarray:
    """Separable orthonormal DCT over a patch group.

    Axis order matches the coding-vector layout: patch rows vary fastest,
    then patch columns, then (for color) the channel, then the group depth.
    """
    w = dct_matrix(side)
    w = np.kron(dct_matrix(side), w)
    if channels > 1:
        w = np.kron(dct_matrix(channels), w)
    return np.kron(dct_matrix(depth), w)


def save_transform(path: str, w: np.ndarray) -> None:
    """Write W row-major with a 16-byte header (magic, size, scalar kind)."""
    complex_kind = np.iscomplexobj(w)
    header = struct.pack("<4sIII", _MAGIC, w.shape[0],
                         _KIND_COMPLEX if complex_kind else _KIND_REAL, 0)
    body = np.ascontiguousarray(w, dtype=np.complex128 if complex_kind else np.float64)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def load_transform(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated transform header at byte {len(header)}")
        magic, dim, kind, _ = struct.unpack("<4sIII", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte 0")
        if kind not in (_KIND_REAL, _KIND_COMPLEX):
            raise ValueError(f"{path}: unknown scalar kind {kind} at byte 8")
        dtype = np.complex128 if kind == _KIND_COMPLEX else np.float64
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != dim * dim:
        raise ValueError(f"{path}: expected {dim * dim} values, found {data.size}")
    return data.reshape(dim, dim).copy()
