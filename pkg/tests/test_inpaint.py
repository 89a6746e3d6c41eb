"""Inpainting backend: hard constraint, noisy closed form, mask utilities."""

import numpy as np
import pytest

from strollr.blockmatch import matrices_from_vectors
from strollr.config import ConfigurationError, PatchGeometry, SolverConfig
from strollr.engine import run_iteration
from strollr.inpaint import (InpaintBackend, default_config, default_lambda,
                             fill_thresholds, inpaint, inpaint_update_noiseless,
                             inpaint_update_noisy, random_mask)
from strollr.patches import PatchGrid
from strollr.synthetic import piecewise_phantom
from strollr.transform import dct3_init


def small_cfg(**kw):
    geom = kw.pop("geom", PatchGeometry(side=3, depth=2, match_count=4, window_side=6))
    kw.setdefault("gamma_fidelity", 0.8)
    kw.setdefault("iterations", 2)
    kw.setdefault("lam", 6.0)
    kw.setdefault("theta", 6.0 * (np.sqrt(geom.n) + np.sqrt(geom.match_count)))
    return SolverConfig(geom=geom, **kw)


class TestLambdaRule:
    def test_published_anchors(self):
        assert default_lambda(0.2) == pytest.approx(20.0)
        assert default_lambda(0.3) == pytest.approx(12.0)
        assert default_lambda(0.5) == pytest.approx(5.0)

    def test_interpolation_and_clamp(self):
        assert default_lambda(0.25) == pytest.approx(16.0)
        assert default_lambda(0.4) == pytest.approx(8.5)
        assert default_lambda(0.05) == pytest.approx(20.0)
        assert default_lambda(0.9) == pytest.approx(5.0)
        with pytest.raises(ConfigurationError):
            default_lambda(0.0)


class TestMask:
    def test_keep_count_and_determinism(self):
        a = random_mask((20, 20), 0.3, seed=7)
        b = random_mask((20, 20), 0.3, seed=7)
        c = random_mask((20, 20), 0.3, seed=8)
        assert a.sum() == 120
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestClosedForms:
    def test_all_available_no_regularizer(self, rng):
        y = rng.uniform(0, 255, (6, 6))
        mask = np.ones((6, 6), dtype=bool)
        out = inpaint_update_noisy(np.zeros((6, 6)), np.zeros((6, 6, 1)), y, mask, 0.9)
        assert np.allclose(out[:, :, 0], y, atol=1e-12)

    def test_single_source_missing_pixel(self):
        y = np.zeros((4, 4))
        mask = np.ones((4, 4), dtype=bool)
        mask[1, 2] = False
        b = np.zeros((4, 4))
        b[1, 2] = 0.7
        z = np.zeros((4, 4, 1))
        z[1, 2, 0] = 0.7 * 42.0
        out = inpaint_update_noisy(b, z, y, mask, 0.9)
        assert out[1, 2, 0] == pytest.approx(42.0)
        out = inpaint_update_noiseless(b, z, y, mask)
        assert out[1, 2, 0] == pytest.approx(42.0)

    def test_noiseless_keeps_available_bits(self, rng):
        y = rng.uniform(0, 255, (5, 5))
        mask = rng.random((5, 5)) > 0.4
        b = np.full((5, 5), 2.0)
        z = rng.standard_normal((5, 5, 1))
        out = inpaint_update_noiseless(b, z, y, mask)
        assert np.array_equal(out[:, :, 0][mask], y[mask])

    def test_uncovered_missing_pixel_rejected(self):
        y = np.zeros((4, 4))
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        b = np.zeros((4, 4))
        with pytest.raises(ConfigurationError):
            inpaint_update_noiseless(b, np.zeros((4, 4, 1)), y, mask)
        with pytest.raises(ConfigurationError):
            inpaint_update_noisy(b, np.zeros((4, 4, 1)), y, mask, 0.9)

    def test_noisy_matches_dense_least_squares(self, rng):
        img = rng.uniform(0, 255, (8, 8))
        mask = rng.random((8, 8)) > 0.35
        geom = PatchGeometry(side=2, depth=2, match_count=3, window_side=4)
        cfg = small_cfg(geom=geom, lam=3.0, theta=12.0, chunk_size=9)
        backend = InpaintBackend(img, mask, cfg, noise_sigma=4.0)
        x = backend.initial_image()
        grid = PatchGrid((8, 8), geom)
        w = dct3_init(geom.side, geom.depth)
        res = run_iteration(x, w, backend, cfg, grid, 1, keep_lowranks=True)

        p = 64
        alphas = np.concatenate(res.alphas)
        lowranks = np.concatenate(res.lowranks)
        u_hats = matrices_from_vectors(alphas @ res.w_new.conj(), geom.n)
        groups = res.groups
        rows = [np.sqrt(cfg.gamma_fidelity) * np.diag(mask.ravel().astype(float))]
        rhs = [np.sqrt(cfg.gamma_fidelity) * (backend.y[:, :, 0] * mask).ravel()]
        for g in range(groups.count):
            for j, member in enumerate(groups.members[g]):
                mean = groups.patch_means[int(member), 0]
                r_mat = np.zeros((geom.n, p))
                r_mat[np.arange(geom.n), grid.pixel_indices[int(member)]] = 1.0
                rows.append(np.sqrt(cfg.gamma_lowrank) * r_mat)
                rhs.append(np.sqrt(cfg.gamma_lowrank) * (lowranks[g][:, j] + mean))
                if j < geom.depth:
                    rows.append(np.sqrt(cfg.gamma_sparse) * r_mat)
                    rhs.append(np.sqrt(cfg.gamma_sparse) * (u_hats[g][:, j] + mean))
        expected, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
        assert np.allclose(res.x_raw[:, :, 0].ravel(), expected, atol=1e-10 * 255)


class TestPipeline:
    def test_all_available_noiseless_identity(self, rng):
        img = np.round(rng.uniform(0, 255, (12, 12)))
        mask = np.ones((12, 12), dtype=bool)
        out = inpaint(img, mask, cfg=small_cfg())
        assert np.array_equal(out, img)

    def test_checkerboard_constant_fill(self):
        img = np.full((12, 12), 77.0)
        mask = (np.indices((12, 12)).sum(axis=0) % 2) == 0
        out = inpaint(img, mask, cfg=small_cfg(iterations=3))
        assert np.allclose(out, 77.0, atol=1e-9)

    def test_available_pixels_exact_through_iterations(self, rng):
        img = piecewise_phantom(24)
        mask = random_mask((24, 24), 0.5, seed=3)
        geom = PatchGeometry(side=4, depth=3, match_count=8, window_side=10)
        cfg = small_cfg(geom=geom, lam=5.0, theta=5.0 * (4 + np.sqrt(8.0)),
                        iterations=30)
        out = inpaint(img, mask, cfg=cfg)
        assert np.array_equal(out[mask], img[mask])
        # recovers real structure: a flat mean fill sits above 40 here
        missing_err = np.abs(out[~mask] - img[~mask]).mean()
        assert missing_err < 25.0

    def test_large_fidelity_approaches_hard_constraint(self, rng):
        img = piecewise_phantom(20)
        mask = random_mask((20, 20), 0.6, seed=1)
        geom = PatchGeometry(side=4, depth=2, match_count=6, window_side=8)
        base = dict(geom=geom, lam=4.0, theta=4.0 * (2 + np.sqrt(6.0)), iterations=2)
        hard = inpaint(img, mask, cfg=small_cfg(**base))
        soft = inpaint(img, mask, noise_sigma=1e-9,
                       cfg=small_cfg(gamma_fidelity=1e8, **base))
        assert np.max(np.abs(hard - soft)) < 1e-4

    def test_mask_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            InpaintBackend(np.zeros((8, 8)), np.ones((4, 4), dtype=bool), small_cfg())

    def test_defaults_resolve_from_keep_ratio(self):
        cfg = fill_thresholds(default_config(0.5), 0.5)
        assert cfg.lam == pytest.approx(5.0)
        assert cfg.theta == pytest.approx(5.0 * (6.0 + np.sqrt(80.0)))
        assert cfg.iterations == 150
        assert cfg.geom.match_count == 80

    def test_lambda_override_rederives_theta(self):
        cfg = default_config(0.5)
        cfg.lam = 10.0       # user override; theta follows
        cfg = fill_thresholds(cfg, 0.5)
        assert cfg.theta == pytest.approx(10.0 * (6.0 + np.sqrt(80.0)))
