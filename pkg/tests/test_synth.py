"""Scene generator tests: endmember admissibility, simplex fields,
reproducibility, and the exact linear-mixture guarantee of clean scenes."""

import numpy as np
import pytest

from hsunmix import synth
from hsunmix.errors import ConfigError, DataError


def pairwise_angles(e):
    k = e.shape[1]
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            c = e[:, i] @ e[:, j] / (np.linalg.norm(e[:, i]) * np.linalg.norm(e[:, j]))
            out.append(np.arccos(np.clip(c, -1, 1)))
    return np.array(out)


class TestEndmembers:
    def test_admissibility(self):
        for seed in range(6):
            e = synth.generate_endmembers(100, 4, seed=seed)
            assert e.shape == (100, 4)
            assert (e > 0).all() and (e <= 1.0).all()
            assert np.abs(np.diff(e, axis=0)).max() < synth.SLOPE_MAX
            assert pairwise_angles(e).min() >= synth.PAIR_ANGLE_MIN

    def test_reproducible(self):
        a = synth.generate_endmembers(60, 3, seed=9)
        b = synth.generate_endmembers(60, 3, seed=9)
        assert np.array_equal(a, b)
        c = synth.generate_endmembers(60, 3, seed=10)
        assert not np.array_equal(a, c)

    def test_exhaustion_message_suggests_a_fix(self):
        with pytest.raises(DataError, match="more bands"):
            synth.generate_endmembers(100, 40, seed=0, attempts=41)


class TestSceneConfig:
    @pytest.mark.parametrize("bad", [
        {"height": 0}, {"materials": 1}, {"variability_scale": -0.1},
        {"noise_sigma": -1.0}, {"blobs_per_material": 0},
    ])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            synth.SceneConfig(**bad)


class TestScene:
    def test_clean_scene_is_an_exact_linear_mixture(self):
        cfg = synth.SceneConfig(height=10, width=12, bands=50, materials=3, seed=1)
        gt = synth.generate_scene(cfg)
        want = gt.abundance_rows().astype(np.float64) @ gt.endmembers.T.astype(np.float64)
        got = gt.pixels().astype(np.float64)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_abundances_on_simplex(self):
        gt = synth.generate_scene(synth.SceneConfig(height=9, width=7, bands=40,
                                                    materials=5, seed=2))
        rows = gt.abundance_rows().astype(np.float64)
        assert (rows >= 0).all()
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-6)
        # blobs must make the field non-trivial: every material is somewhere
        # dominant enough to matter
        assert (rows.max(axis=0) > 0.2).all()

    def test_reproducible_and_seed_sensitive(self):
        cfg = synth.SceneConfig(height=6, width=6, bands=40, materials=3, seed=5)
        a = synth.generate_scene(cfg)
        b = synth.generate_scene(cfg)
        assert np.array_equal(a.cube, b.cube)
        assert np.array_equal(a.abundances, b.abundances)
        cfg2 = synth.SceneConfig(height=6, width=6, bands=40, materials=3, seed=6)
        c = synth.generate_scene(cfg2)
        assert not np.array_equal(a.cube, c.cube)

    def test_shapes_and_dtypes(self):
        gt = synth.generate_scene(synth.SceneConfig(height=5, width=8, bands=30,
                                                    materials=3, seed=3))
        assert gt.cube.shape == (5, 8, 30) and gt.cube.dtype == np.float32
        assert gt.abundances.shape == (5, 8, 3)
        assert gt.endmembers.shape == (30, 3)
        assert gt.wavelengths.shape == (30,)
        assert gt.pixels().shape == (40, 30)

    def test_noise_scale_is_as_requested(self):
        cfg = synth.SceneConfig(height=16, width=16, bands=80, materials=3,
                                noise_sigma=0.01, seed=4)
        clean = synth.generate_scene(synth.SceneConfig(
            height=16, width=16, bands=80, materials=3, seed=4))
        noisy = synth.generate_scene(cfg)
        resid = (noisy.cube.astype(np.float64) - clean.cube.astype(np.float64)).ravel()
        assert resid.std() == pytest.approx(0.01, rel=0.05)


class TestVariability:
    def test_keeps_truth_changes_cube(self):
        gt = synth.generate_scene(synth.SceneConfig(height=8, width=8, bands=60,
                                                    materials=4, seed=7))
        v = synth.inject_variability(gt, scale=0.05, seed=21)
        assert np.array_equal(v.abundances, gt.abundances)
        assert np.array_equal(v.endmembers, gt.endmembers)
        assert not np.array_equal(v.cube, gt.cube)
        assert v.config.variability_scale == 0.05

    def test_scale_zero_reproduces_clean_cube(self):
        gt = synth.generate_scene(synth.SceneConfig(height=6, width=6, bands=40,
                                                    materials=3, seed=8))
        v = synth.inject_variability(gt, scale=0.0, seed=22)
        np.testing.assert_allclose(v.cube, gt.cube, atol=1e-6)

    def test_perturbation_magnitude_tracks_scale(self):
        gt = synth.generate_scene(synth.SceneConfig(height=10, width=10, bands=60,
                                                    materials=3, seed=9))
        small = synth.inject_variability(gt, scale=0.01, seed=23)
        large = synth.inject_variability(gt, scale=0.05, seed=23)
        ds = np.abs(small.cube - gt.cube).mean()
        dl = np.abs(large.cube - gt.cube).mean()
        assert dl == pytest.approx(5 * ds, rel=1e-3)

    def test_spectrally_smooth_perturbation(self):
        # the injected deviation varies slowly across bands, unlike white noise
        gt = synth.generate_scene(synth.SceneConfig(height=8, width=8, bands=100,
                                                    materials=3, seed=10))
        v = synth.inject_variability(gt, scale=0.05, seed=24)
        delta = (v.cube - gt.cube).reshape(-1, 100).astype(np.float64)
        step = np.abs(np.diff(delta, axis=1)).mean()
        spread = np.abs(delta).mean()
        assert step < 0.3 * spread

    def test_rejects_negative_scale(self):
        gt = synth.generate_scene(synth.SceneConfig(height=4, width=4, bands=30,
                                                    materials=2, seed=11))
        with pytest.raises(ConfigError):
            synth.inject_variability(gt, scale=-0.1, seed=0)
