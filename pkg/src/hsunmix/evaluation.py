"""Abundance accuracy metrics, a fully constrained least squares baseline,
and harnesses that repeat training runs and ablation variants to report
mean and spread."""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import training as tr
from .errors import DataError, NumericalError, ShapeError


def rmse(pred, truth):
    """Root mean square error over every pixel and material, float64."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"rmse: shapes {p.shape} and {t.shape} differ")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def format_hundredths(mean, std=None):
    """Render values in units of 1e-2, the conventional scale for
    abundance error tables."""
    if std is None:
        return f"{mean * 100:.2f}"
    return f"{mean * 100:.2f} ±{std * 100:.2f}"


def project_simplex(v):
    """Euclidean projection of each row onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    n, k = v.shape
    u = np.sort(v, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    j = np.arange(1, k + 1)
    cond = u - css / j > 0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(n), rho] / (rho + 1.0)
    return np.maximum(v - theta[:, None], 0.0)


def fcls(x, endmembers, tol=1e-8, max_iter=10000):
    """Fully constrained least squares abundances by projected gradient.

    Minimizes ||E a - x||^2 subject to a >= 0 and sum(a) = 1, all pixels at
    once. Uses the 1/L step for the quadratic, so no line search is needed.
    Emits a warning instead of failing when the iteration cap is reached.
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.asarray(endmembers, dtype=np.float64)
    if x.ndim != 2 or e.ndim != 2 or x.shape[1] != e.shape[0]:
        raise ShapeError(f"fcls: spectra {x.shape} vs endmembers {e.shape}")
    if not np.isfinite(x).all() or not np.isfinite(e).all():
        raise DataError("fcls: non-finite input")
    n, k = x.shape[0], e.shape[1]
    gram = e.T @ e
    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    if lip <= 0:
        raise DataError("fcls: endmember matrix is identically zero")
    step = 1.0 / lip
    xe = x @ e
    a = np.full((n, k), 1.0 / k)
    for _ in range(max_iter):
        grad = 2.0 * (a @ gram - xe)
        nxt = project_simplex(a - step * grad)
        delta = np.abs(nxt - a).max()
        a = nxt
        if delta < tol:
            break
    else:
        warnings.warn(
            f"fcls stopped after {max_iter} iterations with step change "
            f"{delta:.2e} above tol {tol:.0e}")
    return a


def fcls_field(cube, endmembers, **kw):
    """FCLS over a (H, W, D) cube; returns (H, W, materials)."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ShapeError(f"fcls_field expects (H, W, D), got {cube.shape}")
    flat = fcls(cube.reshape(-1, cube.shape[-1]), endmembers, **kw)
    return flat.reshape(cube.shape[0], cube.shape[1], -1)


@dataclass
class RunReport:
    """Outcome of repeated training runs on one scene."""
    rows: list = field(default_factory=list)  # {"run", "seed", "rmse"}
    failures: list = field(default_factory=list)  # {"run", "seed", "error"}
    config: dict = field(default_factory=dict)

    @property
    def partial(self):
        return bool(self.failures)

    def values(self):
        return np.array([r["rmse"] for r in self.rows], dtype=np.float64)

    def mean(self):
        v = self.values()
        return float(v.mean()) if v.size else float("nan")

    def std(self):
        v = self.values()
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    def summary(self):
        return format_hundredths(self.mean(), self.std()) + " (x1e-2)"

    def to_dict(self):
        return {
            "rows": self.rows,
            "failures": self.failures,
            "mean_rmse": self.mean(),
            "std_rmse": self.std(),
            "partial": self.partial,
            "config": self.config,
        }


def _one_run(args):
    pixels, endmembers, cfg_dict, seed = args
    cfg = tr.TrainConfig.from_dict({**cfg_dict, "seed": seed})
    result = tr.train(pixels, endmembers, cfg)
    pred = tr.unmix(pixels, result.params, result.dims, result.input_bands)
    return pred


def repeat_runs(ground_truth, base_config, runs, jobs=1):
    """Train ``runs`` times with seeds base, base+1, ... and report the
    abundance RMSE of each; failed runs are recorded, not fatal."""
    pixels = ground_truth.pixels()
    truth = ground_truth.abundance_rows()
    e = ground_truth.endmembers
    seeds = [base_config.seed + i for i in range(runs)]
    jobs = max(1, int(jobs))
    report = RunReport(config={
        "train": base_config.to_dict(),
        "scene": ground_truth.config.to_dict(),
        "runs": runs,
    })
    tasks = [(pixels, e, base_config.to_dict(), s) for s in seeds]

    def record(i, outcome, err=None):
        if err is None:
            report.rows.append(
                {"run": i, "seed": seeds[i], "rmse": rmse(outcome, truth)})
        else:
            report.failures.append({"run": i, "seed": seeds[i], "error": str(err)})

    if jobs == 1:
        for i, t in enumerate(tasks):
            try:
                record(i, _one_run(t))
            except NumericalError as exc:
                record(i, None, exc)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_one_run, t) for t in tasks]
            for i, fut in enumerate(futures):
                try:
                    record(i, fut.result())
                except NumericalError as exc:
                    record(i, None, exc)
    return report


def ablation_table(ground_truth, base_config, variants, runs=3, jobs=1):
    """Run each (label, config) variant ``runs`` times; returns (rows, text).

    Rows are dicts with label, mean, std, and the per-run values; the text
    is a fixed-width table in units of 1e-2.
    """
    rows = []
    for label, cfg in variants:
        rep = repeat_runs(ground_truth, cfg, runs, jobs=jobs)
        rows.append({
            "label": label,
            "mean_rmse": rep.mean(),
            "std_rmse": rep.std(),
            "values": [r["rmse"] for r in rep.rows],
            "partial": rep.partial,
        })
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'variant'.ljust(width)}  abundance rmse (x1e-2)"]
    for r in rows:
        cell = format_hundredths(r["mean_rmse"], r["std_rmse"])
        mark = " *" if r["partial"] else ""
        lines.append(f"{r['label'].ljust(width)}  {cell}{mark}")
    if any(r["partial"] for r in rows):
        lines.append("* some runs failed; mean taken over completed runs")
    return rows, "\n".join(lines)


def default_variants(base_config, component_counts=(4, 8, 16, 24)):
    """The standard comparison set: sweep the mixture component count, then
    switch off each model piece at the default size."""
    from dataclasses import replace

    variants = [(f"components={n}", replace(base_config, components=n))
                for n in component_counts]
    variants.append(("without uncertainty head",
                     replace(base_config, ablate_eu=True)))
    variants.append(("without critic",
                     replace(base_config, ablate_wgan=True)))
    return variants
