"""Alternating training loop: several critic updates per generator update,
with Adam on disjoint parameter groups and named random streams so every
run is reproducible from one seed."""

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import networks as nw
from .autodiff import Tensor, no_grad
from .errors import ConfigError, DataError, NumericalError

ADAM_EPS = 1e-8

# named substreams of the run seed, so adding a consumer never shifts
# the draws of another
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NOISE = 2
STREAM_MIX = 3


def stream_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_generator: float = 1e-3
    lr_critic: float = 1e-4
    adam_beta1: float = 0.7
    adam_beta2: float = 0.9
    critic_steps: int = 5
    latent: int = 32
    components: int = 16
    noise: int = 8
    lambda_pq: float = 10.0
    lambda_adv: float = 0.01
    lambda_u: float = 0.1
    lambda_r: float = 0.05
    ablate_eu: bool = False
    ablate_wgan: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "critic_steps", "latent",
                     "components", "noise"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr_generator", "lr_critic"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        for name in ("lambda_pq", "lambda_adv", "lambda_u", "lambda_r"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        allowed = set(cls.__dataclass_fields__)
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    sad: float
    critic_loss: float
    penalty: float
    grad_norm: float
    seconds: float

    NUMERIC_FIELDS = ("epoch", "sad", "critic_loss", "penalty", "grad_norm")

    def numeric_row(self):
        """Everything except wall time, which varies run to run."""
        return {k: getattr(self, k) for k in self.NUMERIC_FIELDS}


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def numeric_rows(self):
        return [r.numeric_row() for r in self.records]

    def final_sad(self):
        return self.records[-1].sad if self.records else float("nan")


@dataclass
class TrainResult:
    params: "ad.ParamSet"
    dims: nw.ModelDims
    input_bands: int
    config: TrainConfig
    history: TrainHistory


def adam_step(params, names, lr, beta1, beta2, eps=ADAM_EPS):
    """One Adam update over ``names``; parameters without a gradient are
    left untouched so disjoint groups can share the ParamSet."""
    for name in names:
        t = params[name]
        if t.grad is None:
            continue
        g = t.grad.data
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name}")
        m = params.adam_m.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        else:
            v = params.adam_v[name]
        step = params.adam_steps.get(name, 0) + 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1 ** step)
        vhat = v / (1.0 - beta2 ** step)
        t.data = t.data - lr * mhat / (np.sqrt(vhat) + eps)
        params.adam_m[name] = m
        params.adam_v[name] = v
        params.adam_steps[name] = step


def prepare_pixels(cube, endmembers):
    """Flatten a cube to (pixels, bands) float32 and validate it.

    Accepts (H, W, D) or (N, D). Rejects non-finite values and all-zero
    spectra, which have no spectral angle.
    """
    x = np.asarray(cube)
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[-1])
    if x.ndim != 2:
        raise DataError(f"expected a (H, W, D) or (N, D) array, got shape {x.shape}")
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != x.shape[1]:
        raise DataError(
            f"endmembers must be (bands, materials) with bands={x.shape[1]}, "
            f"got {e.shape}")
    if not np.isfinite(x).all():
        bad = int(np.argwhere(~np.isfinite(x).all(axis=1))[0, 0])
        raise DataError(f"non-finite spectrum at pixel {bad}")
    norms = np.linalg.norm(x.astype(np.float64), axis=1)
    if (norms == 0).any():
        bad = int(np.argmax(norms == 0))
        raise DataError(f"zero spectrum at pixel {bad}")
    if not np.isfinite(e).all():
        raise DataError("non-finite endmember value")
    return np.ascontiguousarray(x, dtype=np.float32), e


def _padded(x, e, train_bands):
    xp = nw.pad_spectra(x, train_bands)
    ep = np.zeros((train_bands, e.shape[1]), dtype=np.float32)
    ep[: e.shape[0]] = e
    return xp, ep


def train(cube, endmembers, config, on_epoch=None):
    """Fit the unmixing networks to one scene.

    ``cube`` is (H, W, D) or (N, D) reflectance, ``endmembers`` is
    (D, materials). Returns a TrainResult whose history carries per-epoch
    averages of the tracked quantities.
    """
    x, e = prepare_pixels(cube, endmembers)
    input_bands = x.shape[1]
    train_bands = nw.padded_band_count(input_bands)
    xp, ep = _padded(x, e, train_bands)
    # optimize in units where spectra have unit mean length: the angle loss
    # is scale-free, but the critic's Lipschitz budget is absolute, so
    # without this the adversarial pull on the generator grows with the
    # raw spectrum norms and can drown the reconstruction signal
    scale = float(np.mean(np.linalg.norm(xp.astype(np.float64), axis=1)))
    xp = np.ascontiguousarray(xp / scale, dtype=np.float32)
    ep = np.ascontiguousarray(ep / scale, dtype=np.float32)
    dims = nw.ModelDims(bands=train_bands, materials=e.shape[1],
                        latent=config.latent, components=config.components,
                        noise=config.noise)
    params = nw.init_params(config.seed, dims, ep)
    params.add_buffer("decoder.input_scale", np.array([scale], dtype=np.float64))
    gen_names = params.group(nw.GENERATOR_PREFIXES)
    # the gates stay out of this set: the angle loss may close a head it
    # disagrees with, it just cannot sculpt the head's function
    head_names = [n for n in params.group(("decoder.unc.", "decoder.ref."))
                  if not n.endswith(".gate")]
    critic_names = params.group(nw.CRITIC_PREFIXES)

    shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE)
    noise_rng = stream_rng(config.seed, STREAM_NOISE)
    mix_rng = stream_rng(config.seed, STREAM_MIX)

    n = xp.shape[0]
    history = TrainHistory()
    use_critic = not config.ablate_wgan

    def draw_eta(b):
        return Tensor(noise_rng.standard_normal((b, dims.noise)).astype(np.float32))

    def fake_batch(xb_const, b):
        # samples for the critic: constants, fresh decoder noise
        with no_grad():
            z = nw.encode(Tensor(xb_const), params, dims, train=True,
                          update_running=False)
            y, _, _ = nw.mixture_fractions(z, params, dims)
            eta = None if config.ablate_eu else draw_eta(b)
            xh = nw.decode(y, eta, params, dims, ablate_eu=config.ablate_eu,
                           lambda_u=config.lambda_u, lambda_r=config.lambda_r)
        return xh.data

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        sad_sum = 0.0
        closs_sum = 0.0
        pen_sum = 0.0
        gnorm_sum = 0.0
        gen_steps = 0
        critic_steps = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = xp[idx]
            b = xb.shape[0]

            if use_critic:
                for _ in range(config.critic_steps):
                    xf = fake_batch(xb, b)
                    params.zero_grad(critic_names)
                    closs, cstats = ls.critic_loss(
                        xb, xf,
                        lambda t: nw.critic_scores(t, params, dims),
                        rng=mix_rng, penalty_weight=config.lambda_pq)
                    if not np.isfinite(closs.data):
                        raise NumericalError(
                            f"non-finite critic loss at epoch {epoch} "
                            f"batch {start // config.batch_size}")
                    ad.backward(closs)
                    adam_step(params, critic_names, config.lr_critic,
                              config.adam_beta1, config.adam_beta2)
                    closs_sum += closs.item()
                    pen_sum += cstats["penalty"]
                    gnorm_sum += cstats["grad_norm"]
                    critic_steps += 1

            params.zero_grad(gen_names)
            xb_t = Tensor(xb)
            z = nw.encode(xb_t, params, dims, train=True, update_running=True)
            y, _, _ = nw.mixture_fractions(z, params, dims)
            eta = None if config.ablate_eu else draw_eta(b)
            xh = nw.decode(y, eta, params, dims, ablate_eu=config.ablate_eu,
                           lambda_u=config.lambda_u, lambda_r=config.lambda_r)
            sadl = ls.sad_loss(xb_t, xh)
            adv = None
            if use_critic:
                adv = ad.neg(ad.mean(nw.critic_scores(xh, params, dims)))
            gtotal = sadl.item() + (config.lambda_adv * adv.item() if adv is not None else 0.0)
            if not np.isfinite(gtotal):
                raise NumericalError(
                    f"non-finite generator loss at epoch {epoch} "
                    f"batch {start // config.batch_size}")
            # two passes: the angle loss trains everything except the
            # correction heads, which would otherwise soak up reconstruction
            # error as an arbitrary recoding of the fractions and leave them
            # unidentifiable; the heads learn from the critic signal alone
            ad.backward(sadl)
            for name in head_names:
                params.params[name].grad = None
            if adv is not None:
                ad.backward(ad.mul(adv, float(config.lambda_adv)))
            adam_step(params, gen_names, config.lr_generator,
                      config.adam_beta1, config.adam_beta2)
            sad_sum += sadl.item()
            gen_steps += 1

        rec = EpochRecord(
            epoch=epoch,
            sad=sad_sum / max(gen_steps, 1),
            critic_loss=closs_sum / max(critic_steps, 1) if use_critic else 0.0,
            penalty=pen_sum / max(critic_steps, 1) if use_critic else 0.0,
            grad_norm=gnorm_sum / max(critic_steps, 1) if use_critic else 0.0,
            seconds=time.perf_counter() - t0,
        )
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    # the running normalization statistics are an exponential average over
    # mini-batches and lag the weights they converged with; one last pass at
    # momentum zero pins them to the statistics of the scene itself
    with ad.no_grad():
        nw.encode(ad.Tensor(xp[: min(n, 4096)]), params, dims, train=True,
                  update_running=True, bn_momentum=0.0)

    return TrainResult(params=params, dims=dims, input_bands=input_bands,
                       config=config, history=history)


def _apply_input_scale(xp, params):
    scale = params.buffers.get("decoder.input_scale")
    if scale is None:
        return xp
    return np.ascontiguousarray(xp / float(scale[0]), dtype=np.float32)


def unmix(cube, params, dims, input_bands, chunk=512):
    """Abundance maps for a trained model; inference mode, fixed chunking,
    so repeated calls are bit-identical.

    Returns (N, materials) float32, or (H, W, materials) for cube input.
    """
    x = np.asarray(cube)
    spatial = x.shape[:-1] if x.ndim == 3 else None
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[-1])
    if x.ndim != 2 or x.shape[1] != input_bands:
        raise DataError(
            f"expected spectra with {input_bands} bands, got shape {x.shape}")
    xp = nw.pad_spectra(np.ascontiguousarray(x, dtype=np.float32), dims.bands)
    xp = _apply_input_scale(xp, params)
    out = np.empty((xp.shape[0], dims.materials), dtype=np.float32)
    with no_grad():
        for start in range(0, xp.shape[0], chunk):
            xb = Tensor(xp[start : start + chunk])
            z = nw.encode(xb, params, dims, train=False)
            y, _, _ = nw.mixture_fractions(z, params, dims)
            out[start : start + chunk] = y.data
    if spatial is not None:
        return out.reshape(spatial + (dims.materials,))
    return out


def dump_latents(cube, params, dims, input_bands, chunk=512):
    """Per-pixel latent codes, component responses, and component weights."""
    x = np.asarray(cube)
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[-1])
    if x.ndim != 2 or x.shape[1] != input_bands:
        raise DataError(
            f"expected spectra with {input_bands} bands, got shape {x.shape}")
    xp = nw.pad_spectra(np.ascontiguousarray(x, dtype=np.float32), dims.bands)
    xp = _apply_input_scale(xp, params)
    n = xp.shape[0]
    zs = np.empty((n, dims.latent), dtype=np.float32)
    gs = np.empty((n, dims.components), dtype=np.float32)
    bs = np.empty((n, dims.components), dtype=np.float32)
    with no_grad():
        for start in range(0, n, chunk):
            xb = Tensor(xp[start : start + chunk])
            z = nw.encode(xb, params, dims, train=False)
            _, g, beta = nw.mixture_fractions(z, params, dims)
            zs[start : start + chunk] = z.data
            gs[start : start + chunk] = g.data
            bs[start : start + chunk] = beta.data
    return {"latent": zs, "response": gs, "weight": bs}
