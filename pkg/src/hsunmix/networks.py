"""The four submodels: spectral encoder, mixture-based abundance head,
uncertainty-aware decoder, and patch critic.

Spectra are processed channels-last, (batch, bands, channels). The band
count a model operates on must be a multiple of 20 (three pooling stages of
5, 2, 2 and a stride-20 critic path); ``padded_band_count`` maps an
arbitrary sensor band count to the next valid length and ``pad_spectra``
zero-pads on the right.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .errors import ConfigError, ShapeError


def padded_band_count(bands):
    if bands < 1:
        raise ConfigError(f"band count must be positive, got {bands}")
    return max(20, -(-bands // 20) * 20)


def pad_spectra(x, target):
    """Zero-pad the last axis of ``x`` (numpy array) up to ``target`` bands."""
    d = x.shape[-1]
    if d > target:
        raise ShapeError(f"cannot pad {d} bands down to {target}")
    if d == target:
        return np.ascontiguousarray(x)
    pad = [(0, 0)] * (x.ndim - 1) + [(0, target - d)]
    return np.pad(x, pad)


@dataclass(frozen=True)
class ModelDims:
    """Sizes shared by all four submodels.

    bands: padded spectral length D (multiple of 20)
    materials: endmember count K
    latent: encoder output width M
    components: mixture component count N
    noise: width P of the noise vector fed to the uncertainty head
    """

    bands: int
    materials: int
    latent: int
    components: int
    noise: int

    def __post_init__(self):
        if self.bands < 20 or self.bands % 20:
            raise ConfigError(
                f"bands must be a positive multiple of 20, got {self.bands}")
        if self.materials < 1:
            raise ConfigError(f"materials must be >= 1, got {self.materials}")
        if self.latent < 1 or self.components < 1 or self.noise < 1:
            raise ConfigError(
                f"latent/components/noise must be >= 1, got "
                f"{self.latent}/{self.components}/{self.noise}")
        if self.latent <= self.materials:
            warnings.warn(
                f"latent width {self.latent} should be well above the "
                f"material count {self.materials}", stacklevel=2)
        if self.components < self.materials:
            warnings.warn(
                f"component count {self.components} below the material "
                f"count {self.materials}", stacklevel=2)


def _xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(seed, dims, endmembers, dtype=np.float32):
    """Create all parameters in a fixed order from one seeded stream.

    ``endmembers`` is the (bands, materials) matrix used by the decoder; it
    is stored as a non-trainable buffer.
    """
    endmembers = np.asarray(endmembers, dtype=dtype)
    if endmembers.shape != (dims.bands, dims.materials):
        raise ShapeError(
            f"endmember matrix shape {endmembers.shape}, expected "
            f"({dims.bands}, {dims.materials})")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
    ps = ParamSet()

    def conv(name, k, cin, cout):
        ps.add_param(f"{name}.weight", _xavier(rng, k * cin, k * cout, (k, cin, cout)),
                     dtype=dtype)
        ps.add_param(f"{name}.bias", np.zeros(cout), dtype=dtype)

    def fc(name, nin, nout):
        ps.add_param(f"{name}.weight", _xavier(rng, nin, nout, (nin, nout)), dtype=dtype)
        ps.add_param(f"{name}.bias", np.zeros(nout), dtype=dtype)

    def act(name, ch):
        ps.add_param(name, np.full(ch, 0.25), dtype=dtype)

    def norm(name, ch, buffers=True):
        ps.add_param(f"{name}.scale", np.ones(ch), dtype=dtype)
        ps.add_param(f"{name}.shift", np.zeros(ch), dtype=dtype)
        if buffers:
            ps.add_buffer(f"{name}.running_mean", np.zeros(ch), dtype=dtype)
            ps.add_buffer(f"{name}.running_var", np.ones(ch), dtype=dtype)

    conv("encoder.conv1", 21, 1, 10)
    act("encoder.act1", 10)
    norm("encoder.norm1", 10)
    conv("encoder.inc3", 3, 10, 10)
    conv("encoder.inc5", 5, 10, 10)
    conv("encoder.inc7", 7, 10, 10)
    act("encoder.act2", 30)
    norm("encoder.norm2", 30)
    conv("encoder.conv4", 3, 30, 10)
    act("encoder.act3", 10)
    norm("encoder.norm3", 10)
    fc("encoder.fc", dims.bands // 20 * 10, dims.latent)

    ps.add_param("mixture.means", rng.normal(0.0, 0.5, (dims.components, dims.latent)),
                 dtype=dtype)
    ps.add_param("mixture.prec_raw", np.zeros((dims.components, dims.latent)), dtype=dtype)
    fc("mixture.beta", dims.latent, dims.components)
    ps.add_param("mixture.assign",
                 _xavier(rng, dims.components, dims.materials,
                         (dims.materials, dims.components)), dtype=dtype)

    quarter = dims.bands // 4
    fc("decoder.unc.fc1", dims.materials + dims.noise, quarter)
    act("decoder.unc.act", quarter)
    fc("decoder.unc.fc2", quarter, dims.bands)
    # gates start at zero: the decoder opens as a pure linear mix and the
    # correction heads only phase in once they actually reduce the loss,
    # which stops them from soaking up reconstruction error before the
    # fraction estimates have settled
    ps.add_param("decoder.unc.gate", np.zeros(1), dtype=dtype)
    fc("decoder.ref.fc1", dims.materials, quarter)
    act("decoder.ref.act", quarter)
    fc("decoder.ref.fc2", quarter, dims.bands)
    ps.add_param("decoder.ref.gate", np.zeros(1), dtype=dtype)
    ps.add_buffer("decoder.endmembers", endmembers, dtype=dtype)

    conv("critic.conv1", 21, 1, 5)
    norm("critic.norm1", 5, buffers=False)
    act("critic.act1", 5)
    conv("critic.conv2", 5, 5, 10)
    norm("critic.norm2", 10, buffers=False)
    act("critic.act2", 10)
    conv("critic.conv3", 5, 10, 20)
    norm("critic.norm3", 20, buffers=False)
    act("critic.act3", 20)
    fc("critic.out", 20, 5)
    return ps


GENERATOR_PREFIXES = ("encoder.", "mixture.", "decoder.")
CRITIC_PREFIXES = ("critic.",)


def _trace(trace, name, node):
    if trace is not None:
        trace.append((name, tuple(node.shape[1:])))


def encode(x, params, dims, train, update_running=True, bn_momentum=0.9,
           trace=None):
    """Spectral encoder: (B, bands) -> latent (B, latent).

    Stage widths for input length D: conv(21) keeps D at 10 channels, pool 5
    and normalize, a 3/5/7 inception block concatenated to 30 channels, pool
    2 and normalize, conv(3) back to 10 channels, pool 2 and normalize, then
    a linear head with a leaky rectifier.
    """
    if x.ndim != 2 or x.shape[1] != dims.bands:
        raise ShapeError(f"encode: input {x.shape}, expected (batch, {dims.bands})")
    p = params
    B = x.shape[0]
    h = ad.reshape(x, (B, dims.bands, 1))
    h = ad.conv1d(h, p["encoder.conv1.weight"], p["encoder.conv1.bias"], padding="same")
    _trace(trace, "conv1", h)
    h = ad.prelu(h, p["encoder.act1"])
    h = ad.avgpool1d(h, 5)
    h = ad.batchnorm1d(h, p["encoder.norm1.scale"], p["encoder.norm1.shift"],
                       params.buffers["encoder.norm1.running_mean"],
                       params.buffers["encoder.norm1.running_var"],
                       train=train, update_running=update_running,
                       momentum=bn_momentum)
    _trace(trace, "pool1", h)
    branches = [
        ad.conv1d(h, p[f"encoder.inc{k}.weight"], p[f"encoder.inc{k}.bias"],
                  padding="same")
        for k in (3, 5, 7)
    ]
    h = ad.concat(branches, axis=2)
    _trace(trace, "inception", h)
    h = ad.prelu(h, p["encoder.act2"])
    h = ad.avgpool1d(h, 2)
    h = ad.batchnorm1d(h, p["encoder.norm2.scale"], p["encoder.norm2.shift"],
                       params.buffers["encoder.norm2.running_mean"],
                       params.buffers["encoder.norm2.running_var"],
                       train=train, update_running=update_running,
                       momentum=bn_momentum)
    _trace(trace, "pool2", h)
    h = ad.conv1d(h, p["encoder.conv4.weight"], p["encoder.conv4.bias"], padding="same")
    _trace(trace, "conv4", h)
    h = ad.prelu(h, p["encoder.act3"])
    h = ad.avgpool1d(h, 2)
    h = ad.batchnorm1d(h, p["encoder.norm3.scale"], p["encoder.norm3.shift"],
                       params.buffers["encoder.norm3.running_mean"],
                       params.buffers["encoder.norm3.running_var"],
                       train=train, update_running=update_running,
                       momentum=bn_momentum)
    _trace(trace, "pool3", h)
    h = ad.reshape(h, (B, dims.bands // 20 * 10))
    z = ad.leaky_relu(ad.linear(h, p["encoder.fc.weight"], p["encoder.fc.bias"]), 0.01)
    _trace(trace, "latent", z)
    return z


def mixture_fractions(z, params, dims):
    """Latent -> abundance fractions on the simplex.

    Per sample: component responses g_n are bumps in latent space (sigmoid
    of the negative precision-weighted distance, not its square, so the
    response keeps usable gradients far from the component center), gates
    beta come from a linear head with softmax, and material fractions are a
    column-stochastic assignment of the weighted responses, renormalized.
    Returns (fractions, responses, gates).
    """
    if z.ndim != 2 or z.shape[1] != dims.latent:
        raise ShapeError(f"mixture_fractions: latent {z.shape}, expected "
                         f"(batch, {dims.latent})")
    p = params
    B = z.shape[0]
    N, M = dims.components, dims.latent
    prec = ad.softplus(p["mixture.prec_raw"])
    zd = ad.reshape(z, (B, 1, M))
    mu = ad.reshape(p["mixture.means"], (1, N, M))
    diff = ad.sub(zd, mu)
    quad = ad.sum_(ad.mul(ad.mul(diff, diff), ad.reshape(prec, (1, N, M))), axis=2)
    # eps keeps sqrt differentiable if a code lands exactly on a center
    dist = ad.sqrt_(ad.add(quad, 1e-12))
    g = ad.sigmoid(ad.neg(dist))
    logits = ad.linear(z, p["mixture.beta.weight"], p["mixture.beta.bias"])
    beta = ad.softmax(logits, axis=-1)
    assign = ad.softmax(p["mixture.assign"], axis=0)  # column-stochastic (K, N)
    if N == 1:
        # the single mixture weight cancels in the normalization, so the
        # fractions are exactly the lone assignment column
        col = ad.reshape(ad.transpose2d(assign), (1, dims.materials))
        y = ad.broadcast_to(col, (B, dims.materials))
        return y, g, beta
    # combine in log space: the weighted responses can underflow float32
    # when distances grow, but only their ratios matter here
    logw = ad.add(ad.log_softmax(logits, axis=-1), ad.neg(ad.softplus(dist)))
    shift = Tensor(logw.data.max(axis=1, keepdims=True))
    w = ad.exp(ad.sub(logw, shift))
    y_un = ad.matmul(w, ad.transpose2d(assign))
    y = ad.div(y_un, ad.sum_(y_un, axis=1, keepdims=True))
    return y, g, beta


def decode(y, eta, params, dims, ablate_eu=False, lambda_u=0.1, lambda_r=0.05):
    """Abundances -> reconstructed spectra (B, bands).

    Base reconstruction is the fixed endmember matrix applied to the
    fractions. Two small heads add scaled corrections: one sees the
    fractions plus a noise draw, the other the fractions alone. Each head
    is multiplied by a learnable gate that starts at zero, so training
    begins from the exact linear mix and the corrections grow only when
    they pay for themselves. With ``ablate_eu`` the heads are skipped
    entirely and the output is exactly the linear mix.
    """
    if y.ndim != 2 or y.shape[1] != dims.materials:
        raise ShapeError(f"decode: fractions {y.shape}, expected "
                         f"(batch, {dims.materials})")
    p = params
    em = Tensor(params.buffers["decoder.endmembers"])
    base = ad.matmul(y, ad.transpose2d(em))
    if ablate_eu:
        return base
    if eta is None:
        raise ShapeError("decode: eta is required unless ablate_eu is set")
    if eta.shape != (y.shape[0], dims.noise):
        raise ShapeError(f"decode: eta {eta.shape}, expected "
                         f"({y.shape[0]}, {dims.noise})")
    # per-band head outputs are O(1); dividing by sqrt(bands) makes each
    # head's overall length comparable to a unit-norm spectrum, so the
    # correction scale does not grow with the band count
    band_scale = 1.0 / float(np.sqrt(dims.bands))
    h = ad.concat([y, eta], axis=1)
    h = ad.prelu(ad.linear(h, p["decoder.unc.fc1.weight"], p["decoder.unc.fc1.bias"]),
                 p["decoder.unc.act"])
    u = ad.linear(h, p["decoder.unc.fc2.weight"], p["decoder.unc.fc2.bias"])
    u = ad.mul(u, p["decoder.unc.gate"])
    r = ad.prelu(ad.linear(y, p["decoder.ref.fc1.weight"], p["decoder.ref.fc1.bias"]),
                 p["decoder.ref.act"])
    r = ad.linear(r, p["decoder.ref.fc2.weight"], p["decoder.ref.fc2.bias"])
    r = ad.mul(r, p["decoder.ref.gate"])
    return ad.add(ad.add(base, ad.mul(u, float(lambda_u) * band_scale)),
                  ad.mul(r, float(lambda_r) * band_scale))


def critic_map(x, params, dims, trace=None):
    """Patch critic features: (B, bands) -> per-position scores (B, bands/20, 5).

    Three strided convolutions (stride 5, 2, 2), each followed by a
    per-sample normalization and a parametric rectifier, then a linear map
    applied at every remaining position.
    """
    if x.ndim != 2 or x.shape[1] != dims.bands:
        raise ShapeError(f"critic: input {x.shape}, expected (batch, {dims.bands})")
    p = params
    B = x.shape[0]
    h = ad.reshape(x, (B, dims.bands, 1))
    h = ad.conv1d(h, p["critic.conv1.weight"], p["critic.conv1.bias"],
                  stride=5, padding="same")
    _trace(trace, "conv1", h)
    h = ad.instance_norm(h, p["critic.norm1.scale"], p["critic.norm1.shift"])
    h = ad.prelu(h, p["critic.act1"])
    h = ad.conv1d(h, p["critic.conv2.weight"], p["critic.conv2.bias"],
                  stride=2, padding="same")
    _trace(trace, "conv2", h)
    h = ad.instance_norm(h, p["critic.norm2.scale"], p["critic.norm2.shift"])
    h = ad.prelu(h, p["critic.act2"])
    h = ad.conv1d(h, p["critic.conv3.weight"], p["critic.conv3.bias"],
                  stride=2, padding="same")
    _trace(trace, "conv3", h)
    h = ad.instance_norm(h, p["critic.norm3.scale"], p["critic.norm3.shift"])
    h = ad.prelu(h, p["critic.act3"])
    T = dims.bands // 20
    h = ad.reshape(h, (B * T, 20))
    out = ad.linear(h, p["critic.out.weight"], p["critic.out.bias"])
    out = ad.reshape(out, (B, T, 5))
    _trace(trace, "scores", out)
    return out


def critic_scores(x, params, dims):
    """Scalar score per sample: the mean of the patch score map."""
    return ad.mean(critic_map(x, params, dims), axis=(1, 2))


def critic_score(x, params, dims):
    """Score of a single spectrum (bands,) as a scalar node."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.shape[0] != 1:
        raise ShapeError(f"critic_score: expected one spectrum, got {x.shape}")
    return ad.reshape(critic_scores(x, params, dims), ())
