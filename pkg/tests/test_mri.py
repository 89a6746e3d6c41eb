"""MRI backend: Fourier operators, masks, aggregation, and the k-space solve."""

import numpy as np
import pytest

from strollr.blockmatch import match_all
from strollr.config import WRAP, ConfigurationError, PatchGeometry, SolverConfig
from strollr.engine import chunk_slices, run_iteration
from strollr.metrics import psnr
from strollr.mri import (KSpaceData, KSpaceFormatError, MriAggregator, MriBackend,
                         adjoint_fg, average_approximants, default_config,
                         forward_fg, load_kspace, make_mask, mri_image_update,
                         reconstruct_mri, save_kspace, simulate_kspace,
                         theta0_for, upsampled_spectrum, zero_filled)
from strollr.patches import PatchGrid, as_channels
from strollr.synthetic import smooth_phantom
from strollr.transform import dct3_init


def wrap_geom(**kw):
    kw.setdefault("side", 3)
    kw.setdefault("depth", 2)
    kw.setdefault("match_count", 4)
    kw.setdefault("window_side", 6)
    kw.setdefault("boundary", WRAP)
    return PatchGeometry(**kw)


class TestFourierOperators:
    def test_full_mask_is_unitary(self, rng):
        x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        mask = np.ones((8, 8), dtype=bool)
        y = forward_fg(x, mask)
        assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-12)

    def test_delta_image_flat_spectrum(self):
        x = np.zeros((8, 8), dtype=np.complex128)
        x[0, 0] = 1.0
        mask = np.ones((8, 8), dtype=bool)
        y = forward_fg(x, mask)
        assert np.allclose(y, 1.0 / 8.0, atol=1e-14)   # 1/sqrt(p)

    def test_adjoint_identity(self, rng):
        mask = rng.random((8, 10)) > 0.5
        mask[0, 0] = True
        for _ in range(25):
            x = rng.standard_normal((8, 10)) + 1j * rng.standard_normal((8, 10))
            y = rng.standard_normal(int(mask.sum())) + 1j * rng.standard_normal(int(mask.sum()))
            lhs = np.vdot(y, forward_fg(x, mask))
            rhs = np.vdot(adjoint_fg(y, mask), x)
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_zero_fill_matches_upsampled_inverse(self, rng):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 2.0, seed=1)
        ks = simulate_kspace(ref, mask)
        direct = np.fft.ifft2(upsampled_spectrum(ks), norm="ortho")
        assert np.allclose(zero_filled(ks), direct, atol=1e-12)


class TestMasks:
    def test_ratio_one_full(self):
        assert make_mask("random2d", (16, 16), 1.0, seed=0).all()
        assert make_mask("cartesian", (16, 16), 1.0, seed=0).all()

    def test_random2d_count_and_dc(self):
        mask = make_mask("random2d", (256, 256), 4.0, seed=9)
        assert abs(int(mask.sum()) - 16384) <= 1
        assert mask[0, 0]

    def test_cartesian_rows(self):
        mask = make_mask("cartesian", (256, 256), 4.0, seed=5)
        rows = mask.any(axis=1)
        assert np.array_equal(mask, np.repeat(rows[:, None], 256, axis=1))
        assert rows.sum() == 64
        assert mask[0, 0]
        again = make_mask("cartesian", (256, 256), 4.0, seed=5)
        assert np.array_equal(mask, again)

    def test_pseudo_radial_count_and_dc(self):
        mask = make_mask("pseudo_radial", (64, 64), 5.0, seed=0)
        assert abs(int(mask.sum()) - round(64 * 64 / 5)) <= 1
        assert mask[0, 0]
        assert np.array_equal(mask, make_mask("pseudo_radial", (64, 64), 5.0, seed=3))

    def test_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            make_mask("random2d", (8, 8), 0.5, seed=0)
        with pytest.raises(ConfigurationError):
            make_mask("random2d", (8, 8), 100.0, seed=0)
        with pytest.raises(ConfigurationError):
            make_mask("spiral", (8, 8), 2.0, seed=0)


class TestSimulate:
    def test_full_mask_round_trip(self):
        ref = smooth_phantom(16)
        mask = np.ones((16, 16), dtype=bool)
        ks = simulate_kspace(ref, mask)
        assert np.allclose(np.abs(zero_filled(ks)), ref, atol=1e-10)

    def test_energy_subset(self, rng):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 3.0, seed=2)
        ks = simulate_kspace(ref, mask)
        assert np.linalg.norm(ks.samples) <= np.linalg.norm(ref) + 1e-12

    def test_undersampled_zero_fill_degrades(self):
        ref = smooth_phantom(32)
        full = simulate_kspace(ref, np.ones((32, 32), dtype=bool))
        sub = simulate_kspace(ref, make_mask("random2d", (32, 32), 4.0, seed=2))
        assert psnr(ref, np.abs(zero_filled(sub)), peak=1.0) < \
            psnr(ref, np.abs(zero_filled(full)), peak=1.0)

    def test_complex_reference_rejected(self):
        with pytest.raises(ValueError):
            simulate_kspace(np.ones((4, 4), dtype=complex),
                            np.ones((4, 4), dtype=bool))


class TestKSpaceFile:
    def test_round_trip(self, tmp_path, rng):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 2.0, seed=4)
        ks = simulate_kspace(ref, mask)
        path = str(tmp_path / "data.stks")
        save_kspace(path, ks)
        loaded = load_kspace(path, mask)
        assert np.array_equal(loaded.samples, ks.samples)

    def test_bad_magic_offset(self, tmp_path):
        path = str(tmp_path / "bad.stks")
        with open(path, "wb") as fh:
            fh.write(b"JUNK" + b"\0" * 16)
        with pytest.raises(KSpaceFormatError, match="byte 0"):
            load_kspace(path, np.ones((2, 2), dtype=bool))

    def test_truncated_body(self, tmp_path):
        ref = smooth_phantom(8)
        mask = np.ones((8, 8), dtype=bool)
        path = str(tmp_path / "short.stks")
        save_kspace(path, simulate_kspace(ref, mask))
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-8])
        with pytest.raises(KSpaceFormatError, match="byte 20"):
            load_kspace(path, mask)

    def test_mask_count_mismatch(self, tmp_path):
        ref = smooth_phantom(8)
        mask = make_mask("random2d", (8, 8), 2.0, seed=0)
        path = str(tmp_path / "m.stks")
        save_kspace(path, simulate_kspace(ref, mask))
        other = np.ones((8, 8), dtype=bool)
        with pytest.raises(KSpaceFormatError):
            load_kspace(path, other)


class TestAggregation:
    def test_averages_match_hash_map_oracle(self, rng):
        img = (rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)))
        geom = wrap_geom()
        groups = match_all(as_channels(img), geom)
        agg = MriAggregator(groups)
        blocks_by_chunk = []
        for sl in chunk_slices(groups.count, 64):
            blocks = (rng.standard_normal((sl.stop - sl.start, geom.n, geom.match_count))
                      + 1j * rng.standard_normal((sl.stop - sl.start, geom.n, geom.match_count)))
            agg.add_lowrank(groups.members[sl], blocks)
            agg.add_sparse(groups.members[sl],
                           blocks[:, :, :geom.depth])
            blocks_by_chunk.append((sl, blocks))
        u_avg, d_avg = average_approximants(agg)

        acc = {}
        acc_sp = {}
        for sl, blocks in blocks_by_chunk:
            for row, g in enumerate(range(sl.start, sl.stop)):
                for j, member in enumerate(groups.members[g]):
                    restored = blocks[row, :, j] + groups.patch_means[int(member), 0]
                    acc.setdefault(int(member), []).append(restored)
                    if j < geom.depth:
                        acc_sp.setdefault(int(member), []).append(restored)
        for k, values in acc.items():
            assert np.allclose(d_avg[k], np.mean(values, axis=0), atol=1e-12)
        for k, values in acc_sp.items():
            assert np.allclose(u_avg[k], np.mean(values, axis=0), atol=1e-12)

    def test_single_appearance_verbatim(self, rng):
        # depth-1 groups: every patch appears exactly once in the sparse branch
        img = rng.standard_normal((12, 12)).astype(complex)
        geom = wrap_geom(depth=1, match_count=1, window_side=3)
        groups = match_all(as_channels(img), geom)
        agg = MriAggregator(groups)
        blocks = rng.standard_normal((groups.count, geom.n, 1)).astype(complex)
        agg.add_sparse(groups.members, blocks)
        agg.add_lowrank(groups.members, blocks)
        u_avg, d_avg = average_approximants(agg)
        expected = blocks[:, :, 0] + groups.patch_means[groups.members[:, 0], 0][:, None]
        assert np.allclose(u_avg[groups.members[:, 0]], expected, atol=1e-12)

    def test_interior_boundary_rejected(self, rng):
        img = rng.standard_normal((12, 12)).astype(complex)
        geom = wrap_geom().__class__(side=3, depth=2, match_count=4, window_side=6)
        groups = match_all(as_channels(img), geom)
        with pytest.raises(ConfigurationError):
            MriAggregator(groups)

    def test_coverage_counts_at_least_one(self, rng):
        img = rng.standard_normal((10, 10)).astype(complex)
        groups = match_all(as_channels(img), wrap_geom())
        agg = MriAggregator(groups)
        assert agg.count_lowrank.min() >= 1
        assert agg.count_sparse.min() >= 1


def dense_mri_solve(ks, u_avg, d_avg, geom, grid, gamma_s, gamma_lr):
    """Dense normal-equation oracle with an explicit DFT matrix."""
    h, w = ks.shape
    p = h * w
    jj, kk = np.meshgrid(np.arange(h), np.arange(h), indexing="ij")
    f_h = np.exp(-2j * np.pi * jj * kk / h) / np.sqrt(h)
    jj, kk = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
    f_w = np.exp(-2j * np.pi * jj * kk / w) / np.sqrt(w)
    f_full = np.kron(f_h, f_w)                      # row-major vectorized 2D DFT
    f_g = f_full[ks.mask.ravel()]

    b_mat = f_g.conj().T @ f_g
    rhs = f_g.conj().T @ ks.samples
    for k in range(p):
        r_mat = np.zeros((geom.n, p))
        r_mat[np.arange(geom.n), grid.pixel_indices[k]] = 1.0
        b_mat += (gamma_s + gamma_lr) * r_mat.T @ r_mat
        rhs += r_mat.T @ (gamma_s * u_avg[k] + gamma_lr * d_avg[k])
    return np.linalg.solve(b_mat, rhs).reshape(h, w)


class TestImageUpdate:
    def test_fully_sampled_tiny_weights(self, rng):
        ref = smooth_phantom(12)
        mask = np.ones((12, 12), dtype=bool)
        ks = simulate_kspace(ref, mask)
        geom = wrap_geom()
        grid = PatchGrid((12, 12), geom)
        u = np.zeros((144, geom.n), dtype=complex)
        out = mri_image_update(ks, u, u, geom, grid, 1e-15, 1e-15)
        assert np.allclose(out, ref, atol=1e-8)

    def test_zero_approximants_leave_unsampled_empty(self, rng):
        ref = smooth_phantom(12)
        mask = make_mask("random2d", (12, 12), 3.0, seed=1)
        ks = simulate_kspace(ref, mask)
        geom = wrap_geom()
        grid = PatchGrid((12, 12), geom)
        zeros = np.zeros((144, geom.n), dtype=complex)
        out = mri_image_update(ks, zeros, zeros, geom, grid, 1e-6, 1e-6)
        spectrum = np.fft.fft2(out, norm="ortho")
        assert np.max(np.abs(spectrum[~mask])) <= 1e-12

    def test_energy_shrink_factor_per_frequency(self):
        ref = smooth_phantom(12)
        mask = make_mask("random2d", (12, 12), 2.0, seed=6)
        ks = simulate_kspace(ref, mask)
        geom = wrap_geom()
        grid = PatchGrid((12, 12), geom)
        gamma = 1e-4
        zeros = np.zeros((144, geom.n), dtype=complex)
        out = mri_image_update(ks, zeros, zeros, geom, grid, gamma, gamma)
        spectrum = np.fft.fft2(out, norm="ortho")
        shrink = 1.0 / (1.0 + 2 * geom.n * gamma)
        assert np.allclose(spectrum[mask], ks.samples * shrink, atol=1e-12)

    def test_matches_dense_normal_equation(self, rng):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 3.0, seed=8)
        ks = simulate_kspace(ref, mask)
        geom = wrap_geom()
        grid = PatchGrid((16, 16), geom)
        u_avg = (rng.standard_normal((256, geom.n))
                 + 1j * rng.standard_normal((256, geom.n))) * 0.05
        d_avg = (rng.standard_normal((256, geom.n))
                 + 1j * rng.standard_normal((256, geom.n))) * 0.05
        gamma_s, gamma_lr = 3e-4, 7e-4
        fast = mri_image_update(ks, u_avg, d_avg, geom, grid, gamma_s, gamma_lr)
        dense = dense_mri_solve(ks, u_avg, d_avg, geom, grid, gamma_s, gamma_lr)
        assert np.linalg.norm(fast - dense) <= 1e-9 * np.linalg.norm(dense)

    def test_zero_weights_with_gaps_rejected(self):
        ref = smooth_phantom(12)
        mask = make_mask("random2d", (12, 12), 2.0, seed=0)
        ks = simulate_kspace(ref, mask)
        geom = wrap_geom()
        grid = PatchGrid((12, 12), geom)
        zeros = np.zeros((144, geom.n), dtype=complex)
        with pytest.raises(ConfigurationError):
            mri_image_update(ks, zeros, zeros, geom, grid, 0.0, 0.0)


class TestReconstruction:
    def test_zero_filled_initialization(self):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 2.0, seed=3)
        ks = simulate_kspace(ref, mask)
        backend = MriBackend(ks, default_config(0.05, geom=wrap_geom()))
        x0 = backend.initial_image()
        assert np.allclose(x0[:, :, 0], adjoint_fg(ks.samples, mask), atol=1e-12)

    def test_normal_equation_residual_each_iteration(self):
        ref = smooth_phantom(16)
        mask = make_mask("random2d", (16, 16), 2.0, seed=3)
        ks = simulate_kspace(ref, mask)
        cfg = default_config(0.05, geom=wrap_geom(), iterations=3, chunk_size=100)
        backend = MriBackend(ks, cfg)
        x = backend.initial_image()
        grid = PatchGrid((16, 16), cfg.geom)
        w = dct3_init(cfg.geom.side, cfg.geom.depth).astype(complex)
        scale = cfg.geom.n * (cfg.gamma_sparse + cfg.gamma_lowrank)
        for t in range(1, 4):
            res = run_iteration(x, w, backend, cfg, grid, t)
            u_avg, d_avg = average_approximants(res.aggregator)
            acc = np.zeros((16, 16, 1), dtype=complex)
            from strollr.patches import deposit_many
            deposit_many(acc, grid.pixel_indices,
                         (cfg.gamma_sparse * u_avg + cfg.gamma_lowrank * d_avg)[:, :, None])
            z = upsampled_spectrum(ks) + np.fft.fft2(acc[:, :, 0], norm="ortho")
            b_diag = mask.astype(float) + scale
            lhs = b_diag * np.fft.fft2(res.x_raw[:, :, 0], norm="ortho")
            assert np.linalg.norm(lhs - z) <= 1e-10 * np.linalg.norm(z)
            x, w = backend.finalize_iteration(res.x_raw, t), res.w_new

    def test_presets(self):
        assert theta0_for("anatomical", 4.0) == pytest.approx(0.02)
        assert theta0_for("anatomical", 7.0) == pytest.approx(0.05)
        assert theta0_for("phantom", 2.5) == pytest.approx(0.05)
        with pytest.raises(ConfigurationError):
            theta0_for("cardiac", 3.0)

    def test_full_mask_reconstruction_high_fidelity(self):
        ref = smooth_phantom(24)
        mask = np.ones((24, 24), dtype=bool)
        ks = simulate_kspace(ref, mask)
        cfg = default_config(0.02, geom=wrap_geom(match_count=6, window_side=8),
                             gamma_sparse=1e-12, gamma_lowrank=1e-12, iterations=1)
        out = reconstruct_mri(ks, cfg=cfg)
        assert psnr(ref, np.abs(out), peak=1.0) >= 80.0

    @pytest.mark.parametrize("kind", ["cartesian", "pseudo_radial"])
    def test_other_mask_kinds_end_to_end(self, kind):
        ref = smooth_phantom(32)
        mask = make_mask(kind, (32, 32), 2.5, seed=2)
        ks = simulate_kspace(ref, mask)
        cfg = default_config(0.05, geom=wrap_geom(match_count=6, window_side=8),
                             iterations=2)
        out = reconstruct_mri(ks, cfg=cfg)
        assert np.all(np.isfinite(out))
        assert psnr(ref, np.abs(out), peak=1.0) > 5.0
