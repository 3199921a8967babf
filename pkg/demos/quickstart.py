"""A first walk through the toolkit.

We build a small synthetic scene whose true abundances we know, train the
unmixing model on it for a couple of minutes, and compare its abundance
error against the classical constrained least squares solution. On a clean
scene FCLS is nearly exact (the pixels really are linear mixtures), so it
tells us how much of the learned model's error is its own.

Run:  python3 demos/quickstart.py [--epochs N] (default 25, ~1 min)
"""

import argparse
import time

import numpy as np

from hsunmix import evaluation as ev
from hsunmix import synth
from hsunmix import training as tr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("1. A 20x20 scene, 100 bands, 4 materials, no noise.")
    gt = synth.generate_scene(synth.SceneConfig(
        height=20, width=20, bands=100, materials=4, seed=7))
    print(f"   cube {gt.cube.shape}, abundances {gt.abundances.shape}")

    print("2. The classical baseline: constrained least squares.")
    base = ev.fcls_field(gt.cube, gt.endmembers)
    print(f"   fcls rmse {ev.format_hundredths(ev.rmse(base, gt.abundances))} (x1e-2)")

    print(f"3. Train the model for {args.epochs} epochs.")
    cfg = tr.TrainConfig(epochs=args.epochs, batch_size=64, latent=16,
                         components=8, noise=4, seed=args.seed)
    t0 = time.time()

    def progress(rec):
        if rec.epoch % 5 == 0 or rec.epoch == args.epochs - 1:
            print(f"   epoch {rec.epoch:3d}  sad {rec.sad:.4f}  "
                  f"critic grad norm {rec.grad_norm:.2f}")

    result = tr.train(gt.pixels(), gt.endmembers, cfg, on_epoch=progress)
    print(f"   {time.time() - t0:.0f}s")

    print("4. Abundances from the trained encoder.")
    pred = tr.unmix(gt.cube, result.params, result.dims, result.input_bands)
    err = ev.rmse(pred, gt.abundances)
    print(f"   model rmse {ev.format_hundredths(err)} (x1e-2)")

    print("5. Where the estimates sit for one pixel:")
    r, c = 10, 10
    truth = gt.abundances[r, c]
    rows = zip(truth, pred[r, c], base[r, c])
    print("   truth   model   fcls")
    for t, m, b in rows:
        print(f"   {t:.3f}   {m:.3f}   {b:.3f}")


if __name__ == "__main__":
    main()
