"""Training losses: spectral angle reconstruction, adversarial critic loss
with an input-gradient penalty, and the combined generator objective."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_of
from .errors import ConfigError, DataError, ShapeError

COS_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights for the four loss terms.

    penalty: gradient-penalty weight inside the critic loss
    adversarial: weight of the critic score in the generator objective
    uncertainty / refinement: scales of the two decoder correction heads
    """

    penalty: float = 10.0
    adversarial: float = 0.1
    uncertainty: float = 0.1
    refinement: float = 0.05

    def __post_init__(self):
        for field in ("penalty", "adversarial", "uncertainty", "refinement"):
            if getattr(self, field) < 0:
                raise ConfigError(f"loss weight {field} must be >= 0, "
                                  f"got {getattr(self, field)}")


def _as_batch(x, name):
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.ndim != 2:
        raise ShapeError(f"{name}: expected a (batch, bands) array, got {t.shape}")
    return t


def _check_norms(norms, what):
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DataError(f"zero-norm {what} at batch index {int(bad[0])}")


def sad_loss(x, x_hat):
    """Mean spectral angle between rows of ``x`` and ``x_hat``.

    The cosine is clamped to [-1 + 1e-7, 1 - 1e-7] before arccos so the
    gradient stays finite for collinear pairs. Scale-invariant in both
    arguments; zero-norm rows are a data error naming the row.
    """
    x = _as_batch(x, "sad_loss: reference")
    x_hat = _as_batch(x_hat, "sad_loss: reconstruction")
    if x.shape != x_hat.shape:
        raise ShapeError(f"sad_loss: shapes {x.shape} vs {x_hat.shape}")
    nx = ad.l2norm(x, axis=1)
    nh = ad.l2norm(x_hat, axis=1)
    _check_norms(nx.data, "reference spectrum")
    _check_norms(nh.data, "reconstruction")
    cos = ad.div(ad.sum_(ad.mul(x, x_hat), axis=1), ad.mul(nx, nh))
    angles = ad.arccos(ad.clamp(cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP))
    return ad.mean(angles)


def sad_per_sample(x, x_hat):
    """Per-row spectral angles as a plain float64 array (no graph)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    h = np.asarray(x_hat.data if isinstance(x_hat, Tensor) else x_hat, dtype=np.float64)
    nx = np.linalg.norm(x, axis=1)
    nh = np.linalg.norm(h, axis=1)
    _check_norms(nx, "reference spectrum")
    _check_norms(nh, "reconstruction")
    cos = np.clip((x * h).sum(axis=1) / (nx * nh), -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    return np.arccos(cos)


def critic_loss(x_real, x_fake, critic, rng=None, penalty_weight=10.0, interp=None):
    """Critic objective: score fakes above reals, penalize deviation of the
    input-gradient norm from one along random interpolates.

    ``critic`` maps a (batch, bands) Tensor to per-sample scores (batch,).
    ``x_real``/``x_fake`` are treated as constants (no gradient flows into
    the generator). Interpolation weights come from ``rng`` (uniform per
    sample) unless ``interp`` supplies them directly. Returns
    (loss node, stats dict).
    """
    xr = np.asarray(x_real.data if isinstance(x_real, Tensor) else x_real)
    xf = np.asarray(x_fake.data if isinstance(x_fake, Tensor) else x_fake)
    if xr.shape != xf.shape or xr.ndim != 2:
        raise ShapeError(f"critic_loss: real {xr.shape} vs fake {xf.shape}")
    B = xr.shape[0]
    if interp is not None:
        eps = np.asarray(interp, dtype=xr.dtype).reshape(B, 1)
    else:
        if rng is None:
            raise ConfigError("critic_loss: pass rng or explicit interp weights")
        eps = rng.random((B, 1), dtype=xr.dtype if xr.dtype == np.float32 else np.float64)
    x_mix = Tensor(eps * xr + (1.0 - eps) * xf, requires_grad=True)
    scores_mix = critic(x_mix)
    if scores_mix.shape != (B,):
        raise ShapeError(f"critic_loss: critic returned {scores_mix.shape}, "
                         f"expected ({B},)")
    (gx,) = grad_of(ad.sum_(scores_mix), [x_mix], create_graph=True)
    gnorm = ad.l2norm(gx, axis=1, eps=1e-12)
    penalty = ad.mean(ad.pow_const(ad.sub(gnorm, 1.0), 2.0))
    mean_real = ad.mean(critic(Tensor(xr)))
    mean_fake = ad.mean(critic(Tensor(xf)))
    loss = ad.add(ad.sub(mean_fake, mean_real), ad.mul(penalty, float(penalty_weight)))
    stats = {
        "penalty": penalty.item(),
        "grad_norm": float(gnorm.data.mean()),
        "score_real": mean_real.item(),
        "score_fake": mean_fake.item(),
    }
    return loss, stats


def generator_loss(x, x_hat, critic=None, adv_weight=0.01):
    """Reconstruction angle plus, when a critic is given with a positive
    weight, the negated mean critic score of the reconstructions.

    With ``critic=None`` or ``adv_weight=0`` this is exactly the plain
    spectral angle loss. Returns (loss node, stats dict).
    """
    sad = sad_loss(x, x_hat)
    if critic is None or adv_weight == 0:
        return sad, {"sad": sad.item(), "adv": 0.0}
    adv = ad.neg(ad.mean(critic(x_hat)))
    loss = ad.add(sad, ad.mul(adv, float(adv_weight)))
    return loss, {"sad": sad.item(), "adv": adv.item()}
