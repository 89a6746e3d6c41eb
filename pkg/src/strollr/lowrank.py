"""Rank-penalized approximation of matched-group matrices.

The minimizer of ||U - D||_F^2 + theta^2 * rank(D) is obtained from the full
SVD of U by hard-thresholding the singular values at theta: values >= theta
survive unchanged, smaller ones are zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# singular values this close to the threshold count as retained, so the
# keep-if-equal boundary does not depend on platform rounding
BOUNDARY_SLACK = 1e-12


@dataclass
class LowRankApproximant:
    matrix: np.ndarray
    retained_rank: int
    singular_values: np.ndarray


def _threshold_batch(mats: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched SVD hard-thresholding. mats: (B, n, m)."""
    if not np.all(np.isfinite(mats)):
        raise ValueError("low-rank approximation requires finite input")
    if theta < 0:
        raise ValueError("threshold must be >= 0")
    u, s, vt = np.linalg.svd(mats, full_matrices=False)
    keep = s >= theta - BOUNDARY_SLACK
    ranks = keep.sum(axis=-1)
    if theta == 0.0:
        # nothing can be thresholded; skip the lossy reconstruction
        return mats.copy(), ranks, s
    rmax = int(ranks.max(initial=0))
    if rmax == 0:
        return np.zeros_like(mats), ranks, s
    # surviving components only; columns past each retained rank carry zeros
    s_kept = np.where(keep, s, 0.0)[..., :rmax]
    d = (u[..., :rmax] * s_kept[..., None, :]) @ vt[..., :rmax, :]
    return d, ranks, s


def low_rank_approx(mat: np.ndarray, theta: float) -> LowRankApproximant:
    """Best approximation of `mat` under squared-error plus theta^2 per rank."""
    d, ranks, s = _threshold_batch(np.asarray(mat)[None], theta)
    return LowRankApproximant(matrix=d[0], retained_rank=int(ranks[0]),
                              singular_values=s[0])


def low_rank_batch(mats: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """(approximants, retained ranks) for a stack of group matrices."""
    d, ranks, _ = _threshold_batch(mats, theta)
    return d, ranks
