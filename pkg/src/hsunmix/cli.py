"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration problems, 3 unreadable or
inconsistent data, 4 numerical failure during a run. Artifacts never embed
wall-clock times, so re-running a command with the same inputs reproduces
them byte for byte.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio, evaluation, synth, training
from .errors import ConfigError, DataError, HsunmixError, NumericalError


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")
    return path


def _stem(path):
    path = os.fspath(path)
    return path[:-5] if path.endswith(".json") else path


def _echo_path(out_stem):
    return out_stem + "_run.json"


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args):
    cfg = synth.SceneConfig(
        height=args.height, width=args.width, bands=args.bands,
        materials=args.materials, blobs_per_material=args.blobs,
        variability_scale=args.variability, noise_sigma=args.noise_sigma,
        seed=args.seed)
    gt = synth.generate_scene(cfg)
    stem = _stem(args.out)
    dataio.save_cube(stem, gt.cube, wavelengths=gt.wavelengths)
    dataio.save_abundance(stem + "_abundance", gt.abundances)
    dataio.write_endmembers(stem + "_endmembers.csv", gt.endmembers)
    _write_json(_echo_path(stem), {"command": "synth", "config": cfg.to_dict()})
    print(f"scene {cfg.height}x{cfg.width}x{cfg.bands} with "
          f"{cfg.materials} materials -> {stem}.json")
    return 0


# ---------------------------------------------------------------------------
# train


_TRAIN_FLAGS = [
    ("epochs", int), ("batch_size", int), ("seed", int), ("latent", int),
    ("components", int), ("noise", int), ("critic_steps", int),
    ("lr_generator", float), ("lr_critic", float),
    ("adam_beta1", float), ("adam_beta2", float),
    ("lambda_pq", float), ("lambda_adv", float),
    ("lambda_u", float), ("lambda_r", float),
]


def _resolve_train_config(args):
    merged = {}
    if args.config:
        try:
            with open(args.config) as f:
                merged.update(json.load(f))
        except FileNotFoundError:
            raise ConfigError(f"{args.config}: no such file") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: not valid JSON ({e})") from None
    for name, _ in _TRAIN_FLAGS:
        v = getattr(args, name)
        if v is not None:
            merged[name] = v
    for name in ("ablate_eu", "ablate_wgan"):
        v = getattr(args, name)
        if v is not None:
            merged[name] = v
    return training.TrainConfig.from_dict(merged)


def _cmd_train(args):
    cfg = _resolve_train_config(args)
    cube, _ = dataio.load_cube(args.scene)
    e, _ = dataio.read_endmembers(args.endmembers)

    def progress(rec):
        print(f"epoch {rec.epoch:4d}  sad {rec.sad:.4f}  "
              f"critic {rec.critic_loss:+.4f}  penalty {rec.penalty:.4f}  "
              f"grad norm {rec.grad_norm:.3f}  {rec.seconds:.1f}s")

    result = training.train(cube, e, cfg, on_epoch=progress if not args.quiet else None)
    dataio.save_checkpoint(args.out, result)
    stem = _stem(args.out)
    _write_json(_echo_path(stem), {
        "command": "train",
        "scene": args.scene,
        "endmembers": args.endmembers,
        "config": cfg.to_dict(),
    })
    print(f"final sad {result.history.final_sad():.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# unmix / dump-latents


def _load_model(path):
    ck = dataio.load_checkpoint(path)
    return ck


def _cmd_unmix(args):
    ck = _load_model(args.model)
    cube, header = dataio.load_cube(args.scene)
    ab = training.unmix(cube, ck.params, ck.dims, ck.input_bands,
                        chunk=args.chunk)
    stem = _stem(args.out)
    dataio.save_abundance(stem, ab)
    _write_json(_echo_path(stem), {
        "command": "unmix",
        "model": args.model,
        "scene": args.scene,
        "chunk": args.chunk,
        "materials": ck.dims.materials,
    })
    print(f"abundances {ab.shape} -> {stem}.json")
    return 0


def _cmd_dump_latents(args):
    ck = _load_model(args.model)
    cube, header = dataio.load_cube(args.scene)
    out = training.dump_latents(cube, ck.params, ck.dims, ck.input_bands,
                                chunk=args.chunk)
    h, w = cube.shape[0], cube.shape[1]
    stem = _stem(args.out)
    for name, arr in out.items():
        dataio.save_cube(f"{stem}_{name}", arr.reshape(h, w, -1), kind=name)
    _write_json(_echo_path(stem), {
        "command": "dump-latents",
        "model": args.model,
        "scene": args.scene,
        "planes": {k: int(v.shape[1]) for k, v in out.items()},
    })
    print(f"latent planes -> {stem}_latent.json, {stem}_response.json, "
          f"{stem}_weight.json")
    return 0


# ---------------------------------------------------------------------------
# fcls / eval


def _cmd_fcls(args):
    cube, _ = dataio.load_cube(args.scene)
    e, _ = dataio.read_endmembers(args.endmembers)
    ab = evaluation.fcls_field(cube, e, tol=args.tol, max_iter=args.max_iter)
    stem = _stem(args.out)
    dataio.save_abundance(stem, ab.astype(np.float32))
    echo = {
        "command": "fcls",
        "scene": args.scene,
        "endmembers": args.endmembers,
        "tol": args.tol,
        "max_iter": args.max_iter,
    }
    if args.gt:
        truth, _ = dataio.load_abundance(args.gt)
        echo["rmse"] = evaluation.rmse(ab, truth)
        print(f"fcls abundance rmse "
              f"{evaluation.format_hundredths(echo['rmse'])} (x1e-2)")
    _write_json(_echo_path(stem), echo)
    print(f"abundances {ab.shape} -> {stem}.json")
    return 0


def _cmd_eval(args):
    pred, _ = dataio.load_abundance(args.pred)
    truth, _ = dataio.load_abundance(args.gt)
    value = evaluation.rmse(pred, truth)
    report = {
        "command": "eval",
        "pred": args.pred,
        "gt": args.gt,
        "rmse": value,
        "rmse_hundredths": evaluation.format_hundredths(value),
    }
    if args.out:
        _write_json(args.out, report)
    print(f"abundance rmse {report['rmse_hundredths']} (x1e-2)")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _cmd_ablate(args):
    cube, header = dataio.load_cube(args.scene)
    truth, _ = dataio.load_abundance(args.gt)
    e, _ = dataio.read_endmembers(args.endmembers)
    gt = synth.GroundTruth(
        cube=cube, abundances=truth, endmembers=e.astype(np.float32),
        wavelengths=np.asarray(header.get("wavelengths", [])),
        config=synth.SceneConfig(
            height=cube.shape[0], width=cube.shape[1], bands=cube.shape[2],
            materials=truth.shape[2], seed=0))
    base = _resolve_train_config(args)
    counts = [int(c) for c in args.component_counts.split(",")]
    variants = evaluation.default_variants(base, component_counts=counts)
    rows, text = evaluation.ablation_table(gt, base, variants,
                                           runs=args.runs, jobs=args.jobs)
    print(text)
    _write_json(args.out, {
        "command": "ablate",
        "scene": args.scene,
        "gt": args.gt,
        "endmembers": args.endmembers,
        "runs": args.runs,
        "base_config": base.to_dict(),
        "rows": rows,
    })
    print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _cmd_gradcheck(args):
    from . import verification

    results, elapsed = verification.run_gradcheck_suite(
        trials=args.trials, seed=args.seed,
        include_models=not args.primitives_only)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"({args.trials} trials each, {elapsed:.1f}s)")
    if args.out:
        _write_json(args.out, {
            "command": "gradcheck",
            "trials": args.trials,
            "seed": args.seed,
            "checks": [{"name": r.name, "max_rel_err": r.max_rel,
                        "tol": r.tol, "passed": r.passed} for r in results],
        })
    return 0 if not failed else 1


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="hsunmix",
        description="Hyperspectral unmixing with learned mixture models")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic scene")
    ps.add_argument("--out", required=True, help="output stem or .json path")
    ps.add_argument("--height", type=int, default=32)
    ps.add_argument("--width", type=int, default=32)
    ps.add_argument("--bands", type=int, default=100)
    ps.add_argument("--materials", type=int, default=4)
    ps.add_argument("--blobs", type=int, default=3)
    ps.add_argument("--variability", type=float, default=0.0)
    ps.add_argument("--noise-sigma", type=float, default=0.0)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(fn=_cmd_synth)

    def add_train_flags(sp):
        sp.add_argument("--config", help="JSON file with training settings")
        for name, typ in _TRAIN_FLAGS:
            sp.add_argument("--" + name.replace("_", "-"), type=typ,
                            default=None, dest=name)
        for name in ("ablate_eu", "ablate_wgan"):
            sp.add_argument("--" + name.replace("_", "-"), default=None,
                            dest=name, action=argparse.BooleanOptionalAction)

    pt = sub.add_parser("train", help="fit the model to a scene")
    pt.add_argument("--scene", required=True, help="cube header path")
    pt.add_argument("--endmembers", required=True, help="endmember CSV")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--quiet", action="store_true")
    add_train_flags(pt)
    pt.set_defaults(fn=_cmd_train)

    pu = sub.add_parser("unmix", help="abundance maps from a trained model")
    pu.add_argument("--model", required=True)
    pu.add_argument("--scene", required=True)
    pu.add_argument("--out", required=True)
    pu.add_argument("--chunk", type=int, default=512)
    pu.set_defaults(fn=_cmd_unmix)

    pl = sub.add_parser("dump-latents",
                        help="per-pixel latent codes and mixture internals")
    pl.add_argument("--model", required=True)
    pl.add_argument("--scene", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--chunk", type=int, default=512)
    pl.set_defaults(fn=_cmd_dump_latents)

    pf = sub.add_parser("fcls", help="constrained least squares baseline")
    pf.add_argument("--scene", required=True)
    pf.add_argument("--endmembers", required=True)
    pf.add_argument("--out", required=True)
    pf.add_argument("--gt", help="abundance truth for an rmse report")
    pf.add_argument("--tol", type=float, default=1e-8)
    pf.add_argument("--max-iter", type=int, default=10000)
    pf.set_defaults(fn=_cmd_fcls)

    pe = sub.add_parser("eval", help="compare abundance maps")
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--out")
    pe.set_defaults(fn=_cmd_eval)

    pa = sub.add_parser("ablate", help="repeat-run comparison of variants")
    pa.add_argument("--scene", required=True)
    pa.add_argument("--gt", required=True)
    pa.add_argument("--endmembers", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--runs", type=int, default=3)
    pa.add_argument("--jobs", type=int, default=1)
    pa.add_argument("--component-counts", default="4,8,16,24")
    add_train_flags(pa)
    pa.set_defaults(fn=_cmd_ablate)

    pg = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    pg.add_argument("--trials", type=int, default=100)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--primitives-only", action="store_true")
    pg.add_argument("--out")
    pg.set_defaults(fn=_cmd_gradcheck)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except HsunmixError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
