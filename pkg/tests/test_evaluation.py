"""Evaluation tests: the constrained solver against brute force and
closed-form cases, plus the repeat and ablation harnesses."""

import numpy as np
import pytest

from hsunmix import evaluation as ev
from hsunmix import synth
from hsunmix import training as tr
from hsunmix.errors import DataError, ShapeError


class TestRmse:
    def test_known_value(self):
        a = np.zeros((2, 3))
        b = np.full((2, 3), 0.1)
        assert ev.rmse(a, b) == pytest.approx(0.1, rel=1e-12)

    def test_shape_guard(self):
        with pytest.raises(ShapeError):
            ev.rmse(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_formatting(self):
        assert ev.format_hundredths(0.0804) == "8.04"
        assert ev.format_hundredths(0.0523, 0.0011) == "5.23 ±0.11"


class TestSimplexProjection:
    def test_already_feasible_is_fixed_point(self):
        rng = np.random.default_rng(0)
        v = rng.dirichlet(np.ones(5), size=10)
        np.testing.assert_allclose(ev.project_simplex(v), v, atol=1e-12)

    def test_output_always_feasible(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((200, 6)) * 3
        p = ev.project_simplex(v)
        assert (p >= 0).all()
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_brute_force_on_triangle(self):
        # dense grid over the 3-simplex as the oracle
        rng = np.random.default_rng(2)
        grid = []
        steps = 120
        for i in range(steps + 1):
            for j in range(steps + 1 - i):
                grid.append((i / steps, j / steps, 1 - (i + j) / steps))
        grid = np.array(grid)
        v = rng.standard_normal((20, 3)) * 2
        p = ev.project_simplex(v)
        for i in range(20):
            d2 = ((grid - v[i]) ** 2).sum(axis=1)
            best = grid[np.argmin(d2)]
            assert np.abs(p[i] - best).max() < 2.0 / steps

    def test_single_dominant_coordinate(self):
        p = ev.project_simplex(np.array([[10.0, 0.0, 0.0]]))
        np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]], atol=1e-12)


class TestFcls:
    def test_recovers_exact_mixtures(self):
        rng = np.random.default_rng(3)
        e = rng.uniform(0.1, 0.9, size=(60, 4))
        truth = rng.dirichlet(np.ones(4), size=150)
        x = truth @ e.T
        a = ev.fcls(x, e)
        assert ev.rmse(a, truth) < 1e-5

    def test_pure_pixels_map_to_vertices(self):
        rng = np.random.default_rng(4)
        e = rng.uniform(0.1, 0.9, size=(50, 3))
        a = ev.fcls(e.T, e)
        np.testing.assert_allclose(a, np.eye(3), atol=1e-6)

    def test_closed_form_two_materials(self):
        # one-band problem with known projection answer
        e = np.array([[0.2, 0.8]])
        x = np.array([[0.5], [0.1], [0.9]])
        a = ev.fcls(x, e)
        np.testing.assert_allclose(a[:, 1], [0.5, 0.0, 1.0], atol=1e-6)

    def test_noisy_mixtures_stay_close(self):
        rng = np.random.default_rng(5)
        e = rng.uniform(0.1, 0.9, size=(80, 4))
        truth = rng.dirichlet(np.ones(4), size=100)
        x = truth @ e.T + 0.01 * rng.standard_normal((100, 80))
        a = ev.fcls(x, e)
        assert ev.rmse(a, truth) < 0.05

    def test_iteration_cap_warns_not_raises(self):
        rng = np.random.default_rng(6)
        e = rng.uniform(0.1, 0.9, size=(40, 3))
        x = rng.dirichlet(np.ones(3), size=10) @ e.T
        with pytest.warns(UserWarning, match="iterations"):
            a = ev.fcls(x, e, max_iter=2)
        assert a.shape == (10, 3)

    def test_field_wrapper_shape(self):
        gt = synth.generate_scene(synth.SceneConfig(height=6, width=7, bands=40,
                                                    materials=3, seed=7))
        a = ev.fcls_field(gt.cube, gt.endmembers)
        assert a.shape == (6, 7, 3)
        assert ev.rmse(a, gt.abundances) < 1e-4

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            ev.fcls(np.array([[np.nan, 1.0]]), np.ones((2, 2)))


TINY = dict(epochs=2, batch_size=32, latent=8, components=4, noise=2)


class TestRepeatRuns:
    @pytest.fixture(scope="class")
    def scene(self):
        return synth.generate_scene(synth.SceneConfig(height=6, width=8, bands=40,
                                                      materials=3, seed=8))

    def test_report_structure(self, scene):
        cfg = tr.TrainConfig(**TINY, seed=100)
        rep = ev.repeat_runs(scene, cfg, runs=3)
        assert [r["seed"] for r in rep.rows] == [100, 101, 102]
        assert not rep.partial
        assert rep.std() >= 0
        assert np.isfinite(rep.mean())
        d = rep.to_dict()
        assert d["partial"] is False
        assert len(d["rows"]) == 3
        assert d["config"]["train"]["seed"] == 100

    def test_parallel_equals_serial(self, scene):
        cfg = tr.TrainConfig(**TINY, seed=50)
        a = ev.repeat_runs(scene, cfg, runs=2, jobs=1)
        b = ev.repeat_runs(scene, cfg, runs=2, jobs=2)
        assert [r["rmse"] for r in a.rows] == [r["rmse"] for r in b.rows]

    def test_single_run_has_zero_std(self, scene):
        cfg = tr.TrainConfig(**TINY, seed=60)
        rep = ev.repeat_runs(scene, cfg, runs=1)
        assert rep.std() == 0.0


class TestAblationTable:
    def test_rows_and_text(self):
        scene = synth.generate_scene(synth.SceneConfig(height=5, width=6, bands=20,
                                                       materials=3, seed=9))
        base = tr.TrainConfig(epochs=1, batch_size=30, latent=6, components=4,
                              noise=2, seed=0)
        variants = ev.default_variants(base, component_counts=(2, 4))
        labels = [v[0] for v in variants]
        assert labels == ["components=2", "components=4",
                          "without uncertainty head", "without critic"]
        assert variants[2][1].ablate_eu and not variants[2][1].ablate_wgan
        assert variants[3][1].ablate_wgan
        rows, text = ev.ablation_table(scene, base, variants[:2], runs=2)
        assert [r["label"] for r in rows] == labels[:2]
        for r in rows:
            assert len(r["values"]) == 2
            assert not r["partial"]
        lines = text.splitlines()
        assert "abundance rmse (x1e-2)" in lines[0]
        assert len(lines) == 3
        # each data line carries a mean and spread in hundredths
        assert "±" in lines[1]
