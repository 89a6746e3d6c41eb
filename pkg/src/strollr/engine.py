"""Block-coordinate descent driver.

One outer iteration freezes the block-matching groups and runs four steps:
(i) low-rank approximation of every group matrix, (ii) exact sparse coding of
every 3D coding vector, (iii) closed-form unitary transform update, and
(iv) the backend-specific image update solving the normal equation.  Each
step exactly minimizes the shared cost over its own variables, so the cost
never increases within an iteration.
"""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .blockmatch import (GroupSet, gather_group_matrices, match_all,
                         matrices_from_vectors, vectors_from_matrices)
from .config import SolverConfig
from .lowrank import low_rank_batch
from .patches import PatchGrid, as_channels, deposit_many, patch_matrix
from .transform import dct3_init, hard_threshold, transform_update_gram, unitarity_defect


class NumericalError(RuntimeError):
    """A solver invariant failed at runtime (e.g. loss of unitarity)."""


def chunk_slices(total: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, total)) for i in range(0, total, size)]


def _bounded_map(pool, fn, items, limit):
    """pool.map with at most `limit` results in flight, yielding in order."""
    pending = deque()
    it = iter(items)
    for item in it:
        pending.append(pool.submit(fn, item))
        if len(pending) > limit:
            yield pending.popleft().result()
    while pending:
        yield pending.popleft().result()


class DepositAggregator:
    """Accumulates patch deposits and coverage counts of the normal equation.

    Approximant blocks arrive mean-removed; the stored per-patch means are
    added back before the deposit.  Coverage counts depend only on the
    groups, so they are computed once up front.
    """

    def __init__(self, groups: GroupSet, dtype=np.float64):
        grid = groups.grid
        h, w = grid.shape
        c = groups.channels
        self.groups = groups
        self.z_sparse = np.zeros((h, w, c), dtype=dtype)
        self.z_lowrank = np.zeros((h, w, c), dtype=dtype)
        depth = groups.geom.depth
        p = h * w
        self.coverage_lowrank = np.bincount(
            grid.pixel_indices[groups.members].ravel(), minlength=p
        ).reshape(h, w).astype(np.float64)
        self.coverage_sparse = np.bincount(
            grid.pixel_indices[groups.members[:, :depth]].ravel(), minlength=p
        ).reshape(h, w).astype(np.float64)

    def _deposit(self, out: np.ndarray, members: np.ndarray, blocks: np.ndarray) -> None:
        b, n, _ = blocks.shape
        m = members.shape[1]
        c = self.groups.channels
        restored = blocks.reshape(b, n, m, c) + self.groups.patch_means[members][:, None, :, :]
        vals = restored.transpose(0, 2, 1, 3).reshape(b * m, n, c)
        deposit_many(out, self.groups.grid.pixel_indices[members.ravel()], vals)

    def add_lowrank(self, members: np.ndarray, blocks: np.ndarray) -> None:
        self._deposit(self.z_lowrank, members, blocks)

    def add_sparse(self, members: np.ndarray, blocks: np.ndarray) -> None:
        depth = self.groups.geom.depth
        self._deposit(self.z_sparse, members[:, :depth], blocks)

    def normal_terms(self, gamma_sparse: float, gamma_lowrank: float):
        """Diagonal b (H, W) and right-hand side z (H, W, C) of B x = z,
        before the backend adds its fidelity terms."""
        b = gamma_sparse * self.coverage_sparse + gamma_lowrank * self.coverage_lowrank
        z = gamma_sparse * self.z_sparse + gamma_lowrank * self.z_lowrank
        return b, z


def assemble_normal_terms(aggregator, cfg: SolverConfig):
    return aggregator.normal_terms(cfg.gamma_sparse, cfg.gamma_lowrank)


class Backend:
    """Application backend: owns the measurement and the image-update step."""

    complex_valued = False

    def initial_image(self) -> np.ndarray:
        raise NotImplementedError

    def thresholds(self, iteration: int) -> tuple[float, float]:
        raise NotImplementedError

    def make_aggregator(self, groups: GroupSet):
        dtype = np.complex128 if self.complex_valued else np.float64
        return DepositAggregator(groups, dtype=dtype)

    def reconstruct(self, aggregator) -> np.ndarray:
        raise NotImplementedError

    def finalize_iteration(self, x_raw: np.ndarray, iteration: int) -> np.ndarray:
        return x_raw

    def fidelity(self, x: np.ndarray) -> float:
        raise NotImplementedError


@dataclass
class IterationResult:
    groups: GroupSet
    lam: float
    theta: float
    alphas: list          # per-chunk (B, d) sparse codes
    lowranks: list | None  # per-chunk (B, n, M*C) approximants when tracking
    ranks: np.ndarray
    aggregator: object
    x_raw: np.ndarray
    w_new: np.ndarray
    seconds: dict


@dataclass
class IterationRecord:
    iteration: int
    lam: float
    theta: float
    seconds: dict
    objective_steps: tuple | None = None


def objective_value(x, w_mat, alphas, lowranks, rank_total: int, groups: GroupSet,
                    lam: float, theta: float, cfg: SolverConfig,
                    fidelity_term: float) -> float:
    """Frozen-group cost at image x: fidelity + sparsity + low-rank penalties.

    alphas and lowranks are per-chunk lists as produced by run_iteration; the
    group means are the frozen constants stored with the groups.
    """
    geom = groups.geom
    c = groups.channels
    p = patch_matrix(as_channels(x), groups.grid)
    slices = chunk_slices(groups.count, cfg.chunk_size)
    sp = 0.0
    lr = 0.0
    nnz = 0
    for sl, a, d in zip(slices, alphas, lowranks):
        u_mat = gather_group_matrices(p, groups.patch_means, groups.members[sl])
        resid = u_mat - d
        lr += float(np.vdot(resid, resid).real)
        u = vectors_from_matrices(u_mat, geom.depth, c)
        r = u @ w_mat.T - a
        sp += float(np.vdot(r, r).real)
        nnz += int(np.count_nonzero(a))
    return (fidelity_term
            + cfg.gamma_sparse * (sp + lam * lam * nnz)
            + cfg.gamma_lowrank * (lr + theta * theta * rank_total))


def run_iteration(x: np.ndarray, w_t: np.ndarray, backend: Backend, cfg: SolverConfig,
                  grid: PatchGrid, iteration: int, keep_lowranks: bool = False) -> IterationResult:
    geom = cfg.geom
    img = as_channels(x)
    c = img.shape[2]
    seconds: dict[str, float] = {}

    lam, theta = backend.thresholds(iteration)

    t0 = time.perf_counter()
    groups = match_all(img, geom, grid=grid, workers=cfg.workers)
    seconds["blockmatch"] = time.perf_counter() - t0

    agg = backend.make_aggregator(groups)
    d_dim = geom.group_dim(c)
    k_dtype = np.complex128 if backend.complex_valued else np.float64
    k_acc = np.zeros((d_dim, d_dim), dtype=k_dtype)
    slices = chunk_slices(groups.count, cfg.chunk_size)
    # retaining all codes costs N * n*l*C doubles; without tracking they are
    # recomputed (bit-identically) in the deposit pass instead
    alphas: list[np.ndarray] | None = [] if keep_lowranks else None
    lowranks: list[np.ndarray] | None = [] if keep_lowranks else None
    ranks = np.zeros(groups.count, dtype=np.int64)

    def code_chunk(sl: slice):
        u_mat = gather_group_matrices(groups.patches, groups.patch_means,
                                      groups.members[sl])
        u = vectors_from_matrices(u_mat, geom.depth, c)
        return u_mat, u, hard_threshold(u @ w_t.T, lam)

    def produce(sl: slice):
        u_mat, u, a = code_chunk(sl)
        d_mat, rk = low_rank_batch(u_mat, theta)
        return sl, d_mat, rk, u, a

    t0 = time.perf_counter()
    if cfg.workers > 1 and len(slices) > 1:
        pool = ThreadPoolExecutor(max_workers=cfg.workers)
        results = _bounded_map(pool, produce, slices, cfg.workers)
    else:
        pool = None
        results = map(produce, slices)
    for sl, d_mat, rk, u, a in results:
        # deposits and the K reduction run in fixed chunk order: results are
        # bit-identical for any worker count
        agg.add_lowrank(groups.members[sl], d_mat)
        k_acc += u.T @ a.conj()
        ranks[sl] = rk
        if keep_lowranks:
            alphas.append(a)
            lowranks.append(d_mat)
    if pool is not None:
        pool.shutdown()
    seconds["lowrank_code"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    w_new = transform_update_gram(k_acc, prev=w_t)
    defect = unitarity_defect(w_new)
    if defect > 1e-10 * d_dim:
        raise NumericalError(f"transform lost unitarity: defect {defect:.3e}")
    seconds["transform"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for idx, sl in enumerate(slices):
        a = alphas[idx] if keep_lowranks else code_chunk(sl)[2]
        u_hat = a @ w_new.conj()
        agg.add_sparse(groups.members[sl], matrices_from_vectors(u_hat, geom.n))
    seconds["sparse_deposit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    x_raw = backend.reconstruct(agg)
    seconds["reconstruct"] = time.perf_counter() - t0

    return IterationResult(groups=groups, lam=lam, theta=theta, alphas=alphas,
                           lowranks=lowranks, ranks=ranks, aggregator=agg,
                           x_raw=x_raw, w_new=w_new, seconds=seconds)


def _emit(log, line: str) -> None:
    if log is None:
        return
    if callable(log):
        log(line)
    else:
        log.write(line + "\n")
        if hasattr(log, "flush"):
            log.flush()


def run(backend: Backend, cfg: SolverConfig, log=None,
        records: list | None = None) -> np.ndarray:
    """Run the full solver and return the reconstructed image (H, W, C)."""
    x = as_channels(backend.initial_image()).copy()
    grid = PatchGrid(x.shape[:2], cfg.geom)
    c = x.shape[2]
    w_t = dct3_init(cfg.geom.side, cfg.geom.depth, c)
    if backend.complex_valued:
        w_t = w_t.astype(np.complex128)
    track = cfg.track_objective
    alphas_prev: list | None = None

    for t in range(1, cfg.iterations + 1):
        res = run_iteration(x, w_t, backend, cfg, grid, t, keep_lowranks=track)
        objective_steps = None
        if track:
            prev = alphas_prev if alphas_prev is not None else [
                np.zeros_like(a) for a in res.alphas
            ]
            rank_total = int(res.ranks.sum())

            def cost(x_eval, w_eval, alpha_list):
                return objective_value(x_eval, w_eval, alpha_list, res.lowranks,
                                       rank_total, res.groups, res.lam, res.theta,
                                       cfg, backend.fidelity(x_eval))

            objective_steps = (
                cost(x, w_t, prev),
                cost(x, w_t, res.alphas),
                cost(x, res.w_new, res.alphas),
                cost(res.x_raw, res.w_new, res.alphas),
            )
        if records is not None:
            records.append(IterationRecord(iteration=t, lam=res.lam, theta=res.theta,
                                           seconds=res.seconds,
                                           objective_steps=objective_steps))
        times = " ".join(f"{k}={v:.3f}s" for k, v in res.seconds.items())
        obj = "" if objective_steps is None else f" objective={objective_steps[-1]:.6e}"
        _emit(log, f"iter={t} lam={res.lam:.4g} theta={res.theta:.4g}{obj} {times}")

        x = backend.finalize_iteration(res.x_raw, t)
        w_t = res.w_new
        alphas_prev = res.alphas
    return x
