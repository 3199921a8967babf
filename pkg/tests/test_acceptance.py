"""Release acceptance gate.

One test per numbered criterion, in order, so the verbose report reads as a
single pass/fail line for each. Two of the checks train full models and one
sweeps ten thousand forward passes, so this file is slow by design; the
budgets asserted here are the contract, not a wish.

Criteria:
  1. every gradient check (primitives, model paths, the second-order
     penalty path) passes finite differences at 100 trials in under 2 min
  2. 10,000 random forwards keep fractions and gates on the simplex,
     responses strictly inside (0,1), and the layer shape chains exact,
     in under 1 min
  3. on a clean 40x40, 200-band, 4-material scene the least-squares
     baseline recovers abundances to rmse < 1e-4 and the trained model
     (defaults, 100 epochs, fixed seeds) reaches rmse <= 0.05, under 15 min
  4. with spectral variability injected, the full model is no worse than
     the no-uncertainty-head variant by more than 0.01 rmse over 5 seeds,
     under 45 min
  5. on a noise-only scene, the critic-free variant is no worse than the
     full model by more than 0.02 rmse over 5 seeds
  6. the ablate command completes a 6-variant, 20-run comparison and its
     report carries mean and spread for every variant
  7. same seed gives bit-identical abundances; checkpoint and cube files
     round-trip bit-exactly
"""

import json
import re
import subprocess
import sys
import time

import numpy as np

from hsunmix import dataio, evaluation, networks as nw, synth, training, verification
from hsunmix.autodiff import Tensor, no_grad


def _scene(height, width, bands, materials, seed, variability=0.0, noise=0.0):
    return synth.generate_scene(synth.SceneConfig(
        height=height, width=width, bands=bands, materials=materials,
        variability_scale=variability, noise_sigma=noise, seed=seed))


def _train_rmse(gt, **config_kw):
    cfg = training.TrainConfig(**config_kw)
    res = training.train(gt.pixels(), gt.endmembers, cfg)
    a = training.unmix(gt.pixels(), res.params, res.dims, res.input_bands)
    return evaluation.rmse(a, gt.abundance_rows())


def test_01_gradient_suite_first_and_second_order():
    results, elapsed = verification.run_gradcheck_suite(trials=100, seed=0)
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"gradient checks failed: {failed}"
    assert elapsed < 120, f"gradient suite took {elapsed:.1f}s, budget 120s"
    print(f"criterion 1 PASS: {len(results)} checks x 100 trials, "
          f"tolerances {verification.FIRST_ORDER_TOL:g}/"
          f"{verification.SECOND_ORDER_TOL:g}, {elapsed:.1f}s")


def test_02_forward_constraint_sweep():
    t0 = time.perf_counter()
    encoder_chain = lambda d: [
        ("conv1", (d, 10)), ("pool1", (d // 5, 10)),
        ("inception", (d // 5, 30)), ("pool2", (d // 10, 30)),
        ("conv4", (d // 10, 10)), ("pool3", (d // 20, 10)),
        ("latent", (12,)),
    ]
    critic_chain = lambda d: [
        ("conv1", (d // 5, 5)), ("conv2", (d // 10, 10)),
        ("conv3", (d // 20, 20)), ("scores", (d // 20, 5)),
    ]
    forwards = 0
    for bands in (20, 40, 100, 200):
        dims = nw.ModelDims(bands=bands, materials=4, latent=12,
                            components=6, noise=4)
        rng = np.random.default_rng(bands)
        em = rng.uniform(0.1, 0.9, size=(bands, 4))
        params = nw.init_params(bands, dims, em)
        for batch in range(25):
            scale = rng.uniform(0.1, 2.0)
            x = Tensor((scale * rng.random((100, bands))).astype(np.float32))
            etrace, ctrace = [], []
            with no_grad():
                z = nw.encode(x, params, dims, train=False, trace=etrace)
                y, g, beta = nw.mixture_fractions(z, params, dims)
                eta = Tensor(rng.standard_normal((100, 4)).astype(np.float32))
                xh = nw.decode(y, eta, params, dims)
                m = nw.critic_map(x, params, dims, trace=ctrace)
            assert etrace == encoder_chain(bands)
            assert ctrace == critic_chain(bands)
            assert xh.shape == (100, bands)
            assert m.shape == (100, bands // 20, 5)
            assert y.data.min() >= 0
            assert np.abs(y.data.sum(axis=1) - 1).max() < 1e-6
            assert beta.data.min() >= 0
            assert np.abs(beta.data.sum(axis=1) - 1).max() < 1e-6
            assert 0 < g.data.min() and g.data.max() < 1
            forwards += x.shape[0]
    elapsed = time.perf_counter() - t0
    assert forwards == 10000
    assert elapsed < 60, f"constraint sweep took {elapsed:.1f}s, budget 60s"
    print(f"criterion 2 PASS: {forwards} forwards over bands 20/40/100/200, "
          f"{elapsed:.1f}s")


def test_03_clean_scene_linear_recovery():
    t0 = time.perf_counter()
    gt = _scene(40, 40, 200, 4, seed=11)
    base = evaluation.fcls_field(gt.cube, gt.endmembers)
    base_rmse = evaluation.rmse(base.reshape(-1, 4), gt.abundance_rows())
    assert base_rmse < 1e-4, f"least-squares baseline rmse {base_rmse:.2e}"
    model_rmse = _train_rmse(gt, epochs=100, seed=0)
    elapsed = time.perf_counter() - t0
    assert model_rmse <= 0.05, f"trained model rmse {model_rmse:.4f} > 0.05"
    assert elapsed < 900, f"linear recovery took {elapsed:.0f}s, budget 900s"
    print(f"criterion 3 PASS: baseline rmse {base_rmse:.2e}, "
          f"model rmse {model_rmse:.4f}, {elapsed:.0f}s")


def test_04_variability_scene_full_model_not_worse():
    t0 = time.perf_counter()
    full, no_eu = [], []
    for seed in range(5):
        gt = _scene(16, 16, 100, 4, seed=seed, variability=0.05)
        full.append(_train_rmse(gt, epochs=60, seed=seed))
        no_eu.append(_train_rmse(gt, epochs=60, seed=seed, ablate_eu=True))
    mf, mn = float(np.mean(full)), float(np.mean(no_eu))
    elapsed = time.perf_counter() - t0
    assert mf <= mn + 0.01, f"full {mf:.4f} vs no-uncertainty {mn:.4f}"
    assert elapsed < 2700, f"variability check took {elapsed:.0f}s, budget 2700s"
    print(f"criterion 4 PASS: full {mf:.4f} <= no-uncertainty {mn:.4f} + 0.01 "
          f"over 5 seeds, {elapsed:.0f}s")


def test_05_noise_scene_critic_free_within_tolerance():
    full, no_wgan = [], []
    for seed in range(5):
        gt = _scene(16, 16, 100, 4, seed=seed, noise=0.01)
        full.append(_train_rmse(gt, epochs=60, seed=seed))
        no_wgan.append(_train_rmse(gt, epochs=60, seed=seed, ablate_wgan=True))
    mf, mw = float(np.mean(full)), float(np.mean(no_wgan))
    assert mw <= mf + 0.02, f"critic-free {mw:.4f} vs full {mf:.4f}"
    print(f"criterion 5 PASS: critic-free {mw:.4f} <= full {mf:.4f} + 0.02 "
          f"over 5 seeds")


def test_06_ablation_report_structure(tmp_path):
    stem = tmp_path / "scene"
    run = lambda *args: subprocess.run(
        [sys.executable, "-m", "hsunmix", *args],
        capture_output=True, text=True)
    made = run("synth", "--width", "8", "--height", "8", "--bands", "40",
               "--materials", "3", "--seed", "5", "--out", str(stem))
    assert made.returncode == 0, made.stderr
    out = tmp_path / "ablate.json"
    rep = run("ablate", "--scene", f"{stem}.json",
              "--gt", f"{stem}_abundance.json",
              "--endmembers", f"{stem}_endmembers.csv",
              "--out", str(out), "--runs", "20", "--epochs", "2")
    assert rep.returncode == 0, rep.stderr
    doc = json.loads(out.read_text())
    labels = [r["label"] for r in doc["rows"]]
    assert labels == ["components=4", "components=8", "components=16",
                      "components=24", "without uncertainty head",
                      "without critic"]
    for row in doc["rows"]:
        assert len(row["values"]) == 20
        assert not row["partial"]
        assert np.isfinite(row["mean_rmse"]) and np.isfinite(row["std_rmse"])
    cells = re.findall(r"\d+\.\d{2} ±\d+\.\d{2}", rep.stdout)
    assert len(cells) == 6, rep.stdout
    print("criterion 6 PASS: 6 variants x 20 runs, all completed, "
          "mean ±std reported for each")


def test_07_determinism_and_file_roundtrips(tmp_path):
    gt = _scene(8, 8, 40, 3, seed=3)
    cfg = training.TrainConfig(epochs=3, seed=7)
    runs = []
    for _ in range(2):
        res = training.train(gt.pixels(), gt.endmembers, cfg)
        runs.append(training.unmix(gt.pixels(), res.params, res.dims,
                                   res.input_bands))
    assert runs[0].tobytes() == runs[1].tobytes(), "same seed, different output"

    p1, p2 = tmp_path / "model.json", tmp_path / "model2.json"
    dataio.save_checkpoint(p1, res)
    loaded = dataio.load_checkpoint(p1)
    for name, t in res.params.params.items():
        assert loaded.params.params[name].data.tobytes() == t.data.tobytes()
    for name, b in res.params.buffers.items():
        assert loaded.params.buffers[name].tobytes() == b.tobytes()
    dataio.save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes(), "checkpoint not byte-stable"

    d1, d2 = tmp_path / "a", tmp_path / "b"
    d1.mkdir(), d2.mkdir()
    dataio.save_cube(d1 / "cube", gt.cube, wavelengths=gt.wavelengths)
    cube, header = dataio.load_cube(d1 / "cube.json")
    assert cube.tobytes() == gt.cube.tobytes()
    dataio.save_cube(d2 / "cube", cube, wavelengths=header["wavelengths"])
    assert (d1 / "cube.json").read_bytes() == (d2 / "cube.json").read_bytes()
    assert (d1 / "cube.f32").read_bytes() == (d2 / "cube.f32").read_bytes()
    print("criterion 7 PASS: bit-identical reruns, byte-stable checkpoint "
          "and cube round-trips")
