"""Synthetic hyperspectral scenes with known ground truth: smooth random
endmember spectra, blob-shaped abundance fields on the simplex, optional
per-pixel spectral variability and sensor noise."""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DataError

PAIR_ANGLE_MIN = 0.15
SLOPE_MAX = 0.1

STREAM_ENDMEMBERS = 0
STREAM_ABUNDANCE = 1
STREAM_VARIABILITY = 2
STREAM_NOISE = 3


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    bands: int = 100
    materials: int = 4
    blobs_per_material: int = 3
    variability_scale: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("height", "width", "bands", "blobs_per_material"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.materials < 2:
            raise ConfigError("need at least two materials")
        if self.variability_scale < 0 or self.noise_sigma < 0:
            raise ConfigError("variability_scale and noise_sigma must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    cube: np.ndarray        # (H, W, D) float32
    abundances: np.ndarray  # (H, W, K) float32, rows on the simplex
    endmembers: np.ndarray  # (D, K) float32
    wavelengths: np.ndarray  # (D,) float64, nanometres
    config: SceneConfig

    def pixels(self):
        return self.cube.reshape(-1, self.cube.shape[-1])

    def abundance_rows(self):
        return self.abundances.reshape(-1, self.abundances.shape[-1])


def _draw_spectrum(rng, grid):
    nb = int(rng.integers(3, 7))
    centers = rng.uniform(0.05, 0.95, size=nb)
    widths = rng.uniform(0.05, 0.2, size=nb)
    # a bump's band-to-band jump scales with amp / (width * bands), so cap
    # the amplitude accordingly or coarse grids reject almost every draw
    amp_cap = np.minimum(1.0, 0.13 * widths * (grid.size - 1))
    amps = rng.uniform(0.2, 1.0, size=nb) * amp_cap
    e = rng.uniform(0.1, 0.4) + rng.uniform(-0.3, 0.3) * grid
    for c, w, a in zip(centers, widths, amps):
        e = e + a * np.exp(-0.5 * ((grid - c) / w) ** 2)
    e = np.clip(e, 0.02, None)
    return e / e.max() * rng.uniform(0.6, 0.95)


def _angle(a, b):
    cosv = (a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(cosv, -1.0, 1.0)))


def generate_endmembers(bands, materials, seed, attempts=100):
    """Draw ``materials`` smooth spectra that are mutually distinct.

    Candidates are sums of Gaussian reflectance features on a sloped floor.
    A draw joins the set only if it is smooth (largest band-to-band jump
    below 0.1) and at least 0.15 rad from every accepted spectrum.
    """
    rng = _rng(seed, STREAM_ENDMEMBERS)
    grid = np.linspace(0.0, 1.0, bands)
    accepted = []
    for _ in range(attempts):
        if len(accepted) == materials:
            break
        e = _draw_spectrum(rng, grid)
        if np.abs(np.diff(e)).max() >= SLOPE_MAX:
            continue
        if all(_angle(e, other) >= PAIR_ANGLE_MIN for other in accepted):
            accepted.append(e)
    if len(accepted) < materials:
        raise DataError(
            f"drew only {len(accepted)} of {materials} distinct endmembers in "
            f"{attempts} attempts; more bands or fewer materials give the "
            f"sampler room")
    return np.stack(accepted, axis=1)


def _blob_abundances(cfg, rng):
    rows = np.arange(cfg.height)[:, None]
    cols = np.arange(cfg.width)[None, :]
    span = max(cfg.height, cfg.width)
    fields = np.empty((cfg.height, cfg.width, cfg.materials))
    fields[:, :, 0] = 1.0  # background material floor
    fields[:, :, 1:] = 0.05
    for k in range(cfg.materials):
        for _ in range(cfg.blobs_per_material):
            r0 = rng.uniform(0, cfg.height)
            c0 = rng.uniform(0, cfg.width)
            sig = rng.uniform(span / 12, span / 4)
            amp = rng.uniform(0.5, 1.5)
            d2 = (rows - r0) ** 2 + (cols - c0) ** 2
            fields[:, :, k] += amp * np.exp(-0.5 * d2 / sig**2)
    return fields / fields.sum(axis=2, keepdims=True)


def _smooth_spectral(noise, bands):
    # spectrally correlated perturbations: convolve white noise with a
    # Gaussian kernel along the band axis, unit-variance renormalized
    grid = np.arange(bands)
    kernel = np.exp(-0.5 * ((grid[:, None] - grid[None, :]) / (bands / 20.0)) ** 2)
    smooth = noise @ kernel
    return smooth / smooth.std()


def _render(abund_rows, endmembers, cfg, seed):
    n, k = abund_rows.shape
    d = endmembers.shape[0]
    x = abund_rows @ endmembers.T
    if cfg.variability_scale > 0:
        vrng = _rng(seed, STREAM_VARIABILITY)
        gamma = _smooth_spectral(vrng.standard_normal((n * k, d)), d)
        gamma = cfg.variability_scale * gamma.reshape(n, k, d)
        # per-pixel endmember perturbation weighted by that pixel's fractions
        x = x + np.einsum("nk,nkd->nd", abund_rows, gamma)
    if cfg.noise_sigma > 0:
        nrng = _rng(seed, STREAM_NOISE)
        x = x + cfg.noise_sigma * nrng.standard_normal((n, d))
    return np.maximum(x, 1e-6)


def generate_scene(config):
    """Build a full scene from one seed. Same config, same scene."""
    e = generate_endmembers(config.bands, config.materials, config.seed)
    arng = _rng(config.seed, STREAM_ABUNDANCE)
    abund = _blob_abundances(config, arng)
    rows = abund.reshape(-1, config.materials)
    x = _render(rows, e, config, config.seed)
    cube = x.reshape(config.height, config.width, config.bands).astype(np.float32)
    wavelengths = np.linspace(400.0, 2500.0, config.bands)
    return GroundTruth(cube=cube, abundances=abund.astype(np.float32),
                       endmembers=e.astype(np.float32),
                       wavelengths=wavelengths, config=config)


def inject_variability(ground_truth, scale, seed, noise_sigma=0.0):
    """Re-render a scene's cube with fresh spectral variability and noise,
    keeping its abundances and endmembers fixed."""
    if scale < 0 or noise_sigma < 0:
        raise ConfigError("scale and noise_sigma must be non-negative")
    cfg = ground_truth.config
    new_cfg = SceneConfig(
        height=cfg.height, width=cfg.width, bands=cfg.bands,
        materials=cfg.materials, blobs_per_material=cfg.blobs_per_material,
        variability_scale=float(scale), noise_sigma=float(noise_sigma),
        seed=int(seed))
    rows = ground_truth.abundance_rows().astype(np.float64)
    e = ground_truth.endmembers.astype(np.float64)
    x = _render(rows, e, new_cfg, seed)
    cube = x.reshape(cfg.height, cfg.width, cfg.bands).astype(np.float32)
    return GroundTruth(cube=cube, abundances=ground_truth.abundances,
                       endmembers=ground_truth.endmembers,
                       wavelengths=ground_truth.wavelengths, config=new_cfg)
