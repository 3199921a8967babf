"""Finite-difference verification of the gradient engine.

The same machinery backs the unit tests, the acceptance gate, and the
``gradcheck`` CLI subcommand. Checks run in float64: analytic directional
derivatives from the graph are compared against central differences along
random unit directions.
"""

import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_of

FIRST_ORDER_TOL = 1e-4
SECOND_ORDER_TOL = 1e-3
STEP = 1e-5


def sample_away_from(rng, shape, lo=-2.0, hi=2.0, avoid=(), margin=0.05):
    """Uniform sample that keeps a margin around kink locations.

    The margin must dominate the finite-difference step so a perturbed
    evaluation cannot cross a non-smooth point.
    """
    x = rng.uniform(lo, hi, size=shape)
    if not avoid:
        return x
    while True:
        close = np.zeros(x.shape, dtype=bool)
        for b in avoid:
            close |= np.abs(x - b) < margin
        if not close.any():
            return x
        x[close] = rng.uniform(lo, hi, size=int(close.sum()))


def directional_check(fn, leaves, rng, h=STEP):
    """Relative disagreement between analytic and central-difference
    directional derivatives of scalar ``fn`` at ``leaves``.

    ``fn`` takes len(leaves) Tensors and returns a scalar node. ``leaves``
    are float64 arrays. Any randomness inside ``fn`` must be frozen by the
    caller, since ``fn`` is evaluated three times.
    """
    ts = [Tensor(x, requires_grad=True) for x in leaves]
    out = fn(*ts)
    grads = grad_of(out, ts)
    dirs = [rng.standard_normal(x.shape) for x in leaves]
    scale = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / scale for d in dirs]
    analytic = sum(float((g.data * d).sum()) for g, d in zip(grads, dirs))
    # FD evaluations are not wrapped in no_grad: fn may build internal
    # gradient nodes (penalty paths) that need recording to be on
    kp, km = [], []
    with ad.kink_trace(kp):
        fp = fn(*[Tensor(x + h * d) for x, d in zip(leaves, dirs)]).item()
    with ad.kink_trace(km):
        fm = fn(*[Tensor(x - h * d) for x, d in zip(leaves, dirs)]).item()
    if kp != km:
        # the difference segment straddles an activation kink; the
        # quotient does not estimate the derivative there
        return None
    fd = (fp - fm) / (2.0 * h)
    return abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-4)


def run_trials(fn, make_leaves, rng, trials):
    """Max directional_check disagreement over ``trials`` valid draws.

    Draws whose difference segment crosses a kink are redrawn; a genuinely
    wrong gradient fails at every point, so discarding isolated
    kink-straddling draws cannot hide one. The attempt budget is bounded to
    flag a function whose kinks are dense enough to starve the check.
    """
    worst = 0.0
    done = 0
    for _ in range(4 * trials):
        if done == trials:
            break
        rel = directional_check(fn, make_leaves(rng), rng)
        if rel is None:
            continue
        worst = max(worst, rel)
        done += 1
    if done < trials:
        raise ad.GraphError(
            f"gradient check starved: {done}/{trials} usable draws")
    return worst


class CheckResult:
    def __init__(self, name, max_rel, tol):
        self.name = name
        self.max_rel = max_rel
        self.tol = tol
        self.passed = max_rel < tol

    def line(self):
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:<28s} max rel err {self.max_rel:.3e} (tol {self.tol:.0e})"


def _primitive_cases():
    """Name -> (fn, leaf sampler, tolerance). All scalar-valued."""

    def s(rng, *shape, **kw):
        return sample_away_from(rng, shape, **kw)

    def red(t):
        return ad.sum_(t)

    cases = {}

    def addc(name, fn, sampler, tol=FIRST_ORDER_TOL):
        cases[name] = (fn, sampler, tol)

    addc("add", lambda a, b: red(ad.add(a, b)),
         lambda rng: [s(rng, 3, 4), s(rng, 3, 4)])
    addc("add_broadcast", lambda a, b: red(ad.add(a, b)),
         lambda rng: [s(rng, 3, 1, 5), s(rng, 4, 1)])
    addc("sub", lambda a, b: red(ad.sub(a, b)),
         lambda rng: [s(rng, 2, 5), s(rng, 5)])
    addc("mul", lambda a, b: red(ad.mul(a, b)),
         lambda rng: [s(rng, 3, 4), s(rng, 1, 4)])
    addc("div", lambda a, b: red(ad.div(a, b)),
         lambda rng: [s(rng, 3, 4), s(rng, 3, 4, lo=0.5, hi=2.5)])
    addc("neg", lambda a: red(ad.neg(a)), lambda rng: [s(rng, 7)])
    addc("pow", lambda a: red(ad.pow_const(a, 3.0)), lambda rng: [s(rng, 6)])
    addc("sqrt", lambda a: red(ad.sqrt_(a)), lambda rng: [s(rng, 6, lo=0.2, hi=3.0)])
    addc("exp", lambda a: red(ad.exp(a)), lambda rng: [s(rng, 6)])
    addc("log", lambda a: red(ad.log(a)), lambda rng: [s(rng, 6, lo=0.2, hi=3.0)])
    addc("sigmoid", lambda a: red(ad.sigmoid(a)), lambda rng: [s(rng, 8, lo=-4, hi=4)])
    addc("softplus", lambda a: red(ad.softplus(a)), lambda rng: [s(rng, 8, lo=-4, hi=4)])
    addc("arccos", lambda a: red(ad.arccos(a)), lambda rng: [s(rng, 6, lo=-0.9, hi=0.9)])
    addc("clamp", lambda a: red(ad.clamp(a, -1.0, 1.0)),
         lambda rng: [s(rng, 10, avoid=(-1.0, 1.0))])
    addc("reshape", lambda a: red(ad.mul(ad.reshape(a, (4, 3)), ad.reshape(a, (4, 3)))),
         lambda rng: [s(rng, 3, 4)])
    addc("transpose2d", lambda a, b: red(ad.mul(ad.transpose2d(a), b)),
         lambda rng: [s(rng, 3, 4), s(rng, 4, 3)])
    addc("sum_axis", lambda a: ad.add(red(ad.pow_const(ad.sum_(a, axis=1), 2.0)),
                                      red(ad.pow_const(ad.sum_(a, axis=(0, 2)), 2.0))),
         lambda rng: [s(rng, 2, 3, 2)])
    addc("sum_keepdims", lambda a: red(ad.div(a, ad.sum_(a, axis=-1, keepdims=True))),
         lambda rng: [s(rng, 3, 4, lo=0.5, hi=2.0)])
    addc("broadcast_to", lambda a: red(ad.mul(ad.broadcast_to(a, (4, 3, 5)),
                                              ad.broadcast_to(a, (4, 3, 5)))),
         lambda rng: [s(rng, 3, 5)])
    addc("mean", lambda a: red(ad.mean(a, axis=(0, 1), keepdims=True)),
         lambda rng: [s(rng, 3, 4, 2)])
    addc("matmul", lambda a, b: red(ad.matmul(a, b)),
         lambda rng: [s(rng, 3, 4), s(rng, 4, 2)])
    addc("concat", lambda a, b: red(ad.pow_const(ad.concat([a, b], axis=1), 2.0)),
         lambda rng: [s(rng, 3, 2), s(rng, 3, 4)])
    addc("slice", lambda a: red(ad.slice_(a, (slice(1, 3), slice(0, 5, 2)))),
         lambda rng: [s(rng, 4, 6)])
    addc("unslice", lambda a: red(ad.pow_const(
        ad.unslice(a, (4, 6), (slice(1, 3), slice(0, 5, 2))), 2.0)),
         lambda rng: [s(rng, 2, 3)])
    addc("conv1d_s1", lambda x, w, b: red(ad.conv1d(x, w, b, stride=1, padding="same")),
         lambda rng: [s(rng, 2, 10, 3), s(rng, 5, 3, 2), s(rng, 2)])
    addc("conv1d_s2_valid", lambda x, w: red(ad.conv1d(x, w, stride=2, padding="valid")),
         lambda rng: [s(rng, 2, 11, 2), s(rng, 3, 2, 4)])
    addc("conv1d_s5_same", lambda x, w: red(ad.conv1d(x, w, stride=5, padding="same")),
         lambda rng: [s(rng, 1, 20, 1), s(rng, 21, 1, 2)])
    addc("avgpool1d", lambda x: red(ad.pow_const(ad.avgpool1d(x, 3), 2.0)),
         lambda rng: [s(rng, 2, 9, 2)])
    addc("linear", lambda x, w, b: red(ad.linear(x, w, b)),
         lambda rng: [s(rng, 4, 3), s(rng, 3, 5), s(rng, 5)])
    addc("prelu", lambda x, a: red(ad.prelu(x, a)),
         lambda rng: [s(rng, 4, 6, avoid=(0.0,)), s(rng, 6, lo=0.05, hi=0.5)])
    addc("leaky_relu", lambda x: red(ad.leaky_relu(x, 0.01)),
         lambda rng: [s(rng, 4, 6, avoid=(0.0,))])
    addc("softmax", lambda x: red(ad.pow_const(ad.softmax(x), 2.0)),
         lambda rng: [s(rng, 3, 5)])
    addc("log_softmax", lambda x: red(ad.mul(ad.log_softmax(x), ad.log_softmax(x))),
         lambda rng: [s(rng, 3, 5)])
    addc("instance_norm", lambda x, g, b: red(ad.pow_const(ad.instance_norm(x, g, b), 2.0)),
         lambda rng: [s(rng, 2, 6, 3), s(rng, 3, lo=0.5, hi=1.5), s(rng, 3)])
    addc("l2norm", lambda x: red(ad.l2norm(x, axis=1)),
         lambda rng: [s(rng, 3, 5, lo=0.3, hi=2.0)])

    def bn_case(x, g, b):
        rm = np.zeros(3)
        rv = np.ones(3)
        return ad.sum_(ad.pow_const(
            ad.batchnorm1d(x, g, b, rm, rv, train=True), 2.0))

    addc("batchnorm1d", bn_case,
         lambda rng: [s(rng, 3, 4, 3), s(rng, 3, lo=0.5, hi=1.5), s(rng, 3)])
    return cases


def _gradnorm_trials(rng, trials):
    """Second-order path: d/dw of a penalty built on an input-gradient norm,
    evaluated at a fresh fixed point each trial."""
    worst = 0.0
    for _ in range(trials):
        xdata = rng.standard_normal((3, 5))

        def fn(w):
            xleaf = Tensor(xdata, requires_grad=True)
            s = ad.sum_(ad.sigmoid(ad.matmul(xleaf, w)))
            (g,) = grad_of(s, [xleaf], create_graph=True)
            gn = ad.l2norm(g, axis=1)
            return ad.mean(ad.pow_const(ad.sub(gn, 1.0), 2.0))

        worst = max(worst, directional_check(fn, [rng.standard_normal((5, 2))], rng))
    return worst


def primitive_checks(trials=100, seed=0):
    """Gradient checks for every primitive and layer helper."""
    results = []
    for idx, (name, (fn, sampler, tol)) in enumerate(_primitive_cases().items()):
        rng = np.random.default_rng(np.random.SeedSequence((seed, idx)))
        results.append(CheckResult(name, run_trials(fn, sampler, rng, trials), tol))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 999)))
    results.append(CheckResult("grad_norm_penalty", _gradnorm_trials(rng, trials),
                               SECOND_ORDER_TOL))
    return results


def model_checks(trials=100, seed=0):
    """Gradient checks through the composed networks and losses (float64)."""
    from . import losses as ls
    from . import networks as nw

    results = []
    dims = nw.ModelDims(bands=40, materials=3, latent=6, components=4, noise=2)
    base = nw.init_params(seed=5, dims=dims,
                          endmembers=np.random.default_rng(3).uniform(
                              0.1, 0.9, size=(40, 3)),
                          dtype=np.float64)
    gen_names = sorted(base.group(["encoder.", "mixture.", "decoder."]))
    critic_names = sorted(base.names("critic."))

    def flat(names):
        def sampler(rng):
            # jitter around the initialization so each trial probes a
            # different point as well as a different direction
            return [base[n].data + 0.05 * rng.standard_normal(base[n].shape)
                    for n in names]

        return sampler

    def rebind(names, leaves):
        ps = base.astype(np.float64)
        for n, t in zip(names, leaves):
            ps.params[n] = t
        return ps

    B = 2
    rng_x = np.random.default_rng(11)
    xb = rng_x.uniform(0.05, 1.0, size=(B, dims.bands))
    eta = rng_x.standard_normal((B, dims.noise))

    def encoder_loss(*leaves):
        ps = rebind(gen_names, leaves)
        z = nw.encode(Tensor(xb), ps, dims, train=True, update_running=False)
        return ad.sum_(ad.mul(z, z))

    def full_generator_sad(*leaves):
        ps = rebind(gen_names, leaves)
        z = nw.encode(Tensor(xb), ps, dims, train=True, update_running=False)
        y, _, _ = nw.mixture_fractions(z, ps, dims)
        xh = nw.decode(y, Tensor(eta), ps, dims)
        return ls.sad_loss(Tensor(xb), xh)

    def critic_loss_fn(*leaves):
        ps = rebind(critic_names, leaves)
        xf = xb * 0.9 + 0.01
        eps = np.random.default_rng(7).uniform(size=(B, 1))
        loss, _ = ls.critic_loss(
            xb, xf,
            lambda t: nw.critic_scores(t, ps, dims),
            penalty_weight=10.0, interp=eps)
        return loss

    rng = np.random.default_rng(np.random.SeedSequence((seed, 101)))
    results.append(CheckResult(
        "encoder_composite",
        run_trials(encoder_loss, flat(gen_names), rng, trials),
        FIRST_ORDER_TOL))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 102)))
    results.append(CheckResult(
        "generator_sad_composite",
        run_trials(full_generator_sad, flat(gen_names), rng, trials),
        FIRST_ORDER_TOL))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 103)))
    results.append(CheckResult(
        "critic_penalty_composite",
        run_trials(critic_loss_fn, flat(critic_names), rng, trials),
        SECOND_ORDER_TOL))
    return results


def run_gradcheck_suite(trials=100, seed=0, include_models=True):
    """Full verification sweep; returns (results, elapsed_seconds)."""
    t0 = time.perf_counter()
    results = primitive_checks(trials=trials, seed=seed)
    if include_models:
        results.extend(model_checks(trials=trials, seed=seed))
    return results, time.perf_counter() - t0
