"""Loss tests with hand-derived values for the spectral angle and the
gradient penalty under a linear critic."""

import numpy as np
import pytest

from hsunmix import losses
from hsunmix.autodiff import Tensor, backward, sum_, mul
from hsunmix.errors import ConfigError, DataError, ShapeError


class TestSpectralAngle:
    def test_identical_rows_are_almost_zero(self):
        rng = np.random.default_rng(0)
        x = rng.random((8, 50), dtype=np.float32) + 0.1
        loss = losses.sad_loss(Tensor(x), Tensor(x))
        # the cosine clamp turns a perfect match into arccos(1 - 1e-7)
        assert 0.0 <= loss.item() < 1e-3

    def test_scale_invariance_is_bitwise_for_powers_of_two(self):
        rng = np.random.default_rng(1)
        x = rng.random((6, 40), dtype=np.float32) + 0.1
        xh = rng.random((6, 40), dtype=np.float32) + 0.1
        a = losses.sad_loss(Tensor(x), Tensor(xh)).item()
        b = losses.sad_loss(Tensor(x), Tensor(4.0 * xh)).item()
        assert a == b

    def test_scale_invariance_general(self):
        rng = np.random.default_rng(2)
        x = rng.random((6, 40), dtype=np.float32) + 0.1
        xh = rng.random((6, 40), dtype=np.float32) + 0.1
        a = losses.sad_loss(Tensor(x), Tensor(xh)).item()
        b = losses.sad_loss(Tensor(x), Tensor(2.7 * xh)).item()
        assert a == pytest.approx(b, rel=1e-5)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.random((4, 30), dtype=np.float32) + 0.1
        xh = rng.random((4, 30), dtype=np.float32) + 0.1
        a = losses.sad_loss(Tensor(x), Tensor(xh)).item()
        b = losses.sad_loss(Tensor(xh), Tensor(x)).item()
        assert a == pytest.approx(b, rel=1e-6)

    def test_known_angles(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=np.float64)
        xh = np.array([[0.0, 1.0], [0.5, np.sqrt(3.0) / 2.0]], dtype=np.float64)
        loss = losses.sad_loss(Tensor(x), Tensor(xh))
        want = (np.pi / 2 + np.pi / 3) / 2
        assert loss.item() == pytest.approx(want, rel=1e-12)

    def test_per_sample_matches_batch_mean(self):
        rng = np.random.default_rng(4)
        x = rng.random((10, 25), dtype=np.float32) + 0.05
        xh = rng.random((10, 25), dtype=np.float32) + 0.05
        per = losses.sad_per_sample(x, xh)
        assert per.shape == (10,)
        batch = losses.sad_loss(Tensor(x), Tensor(xh)).item()
        assert per.mean() == pytest.approx(batch, rel=1e-5)

    def test_zero_norm_row_raises_with_index(self):
        x = np.ones((3, 10), dtype=np.float32)
        x[1] = 0.0
        xh = np.ones((3, 10), dtype=np.float32)
        with pytest.raises(DataError, match="batch index 1"):
            losses.sad_loss(Tensor(x), Tensor(xh))
        with pytest.raises(DataError, match="batch index 1"):
            losses.sad_loss(Tensor(xh), Tensor(x))

    def test_gradient_finite_at_perfect_match(self):
        rng = np.random.default_rng(5)
        x = rng.random((4, 20), dtype=np.float32) + 0.1
        xh = Tensor(x.copy(), requires_grad=True)
        loss = losses.sad_loss(Tensor(x), xh)
        backward(loss)
        assert np.isfinite(xh.grad.data).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            losses.sad_loss(Tensor(np.ones((2, 5), dtype=np.float32)),
                            Tensor(np.ones((2, 6), dtype=np.float32)))


def linear_critic(w):
    def critic(t):
        return sum_(mul(t, w), axis=1)
    return critic


class TestCriticLoss:
    def test_zero_critic_gives_the_penalty_weight(self):
        # a critic that always outputs 0 has zero input gradient, so the
        # penalty is (0 - 1)^2 = 1 (up to the epsilon that keeps the norm
        # differentiable at zero) and everything else cancels
        rng = np.random.default_rng(6)
        xr = rng.random((5, 12), dtype=np.float32)
        xf = rng.random((5, 12), dtype=np.float32)
        zero = Tensor(np.zeros(12, dtype=np.float32))
        loss, stats = losses.critic_loss(xr, xf, linear_critic(zero),
                                         rng=np.random.default_rng(0),
                                         penalty_weight=10.0)
        assert loss.item() == pytest.approx(10.0, rel=1e-5)
        assert stats["penalty"] == pytest.approx(1.0, rel=1e-5)
        assert stats["grad_norm"] == pytest.approx(0.0, abs=1e-5)

    def test_constant_critic_backward_is_finite_and_zero(self):
        # the degenerate corner: a critic whose output never depends on its
        # input must give finite (zero) parameter gradients, not NaN
        rng = np.random.default_rng(12)
        xr = rng.random((4, 10), dtype=np.float32)
        w = Tensor(np.zeros(10, dtype=np.float32), requires_grad=True)

        def dead_critic(t):
            return sum_(mul(mul(t, 0.0), w), axis=1)

        loss, _ = losses.critic_loss(xr, xr * 0.9, dead_critic,
                                     rng=np.random.default_rng(0))
        backward(loss)
        assert np.isfinite(loss.item())
        assert w.grad is None or np.isfinite(w.grad.data).all()

    def test_linear_critic_hand_values_and_gradient(self):
        rng = np.random.default_rng(7)
        d = 8
        wdata = rng.standard_normal(d).astype(np.float64)
        w = Tensor(wdata, requires_grad=True)
        xr = rng.random((6, d))
        xf = rng.random((6, d))
        eps = rng.random((6, 1))
        lam = 10.0
        loss, stats = losses.critic_loss(xr, xf, linear_critic(w),
                                         penalty_weight=lam, interp=eps)
        nrm = np.linalg.norm(wdata)
        want = (xf @ wdata).mean() - (xr @ wdata).mean() + lam * (nrm - 1.0) ** 2
        assert loss.item() == pytest.approx(want, rel=1e-9)
        assert stats["grad_norm"] == pytest.approx(nrm, rel=1e-9)
        backward(loss)
        want_grad = (xf.mean(axis=0) - xr.mean(axis=0)
                     + lam * 2.0 * (nrm - 1.0) * wdata / nrm)
        np.testing.assert_allclose(w.grad.data, want_grad, rtol=1e-8)

    def test_interp_endpoints(self):
        rng = np.random.default_rng(8)
        d = 5
        w = Tensor(rng.standard_normal(d).astype(np.float64), requires_grad=True)

        seen = []

        def spy(t):
            seen.append(t.data.copy())
            return sum_(mul(t, w), axis=1)

        xr = rng.random((3, d))
        xf = rng.random((3, d))
        losses.critic_loss(xr, xf, spy, interp=np.ones((3, 1)))
        losses.critic_loss(xr, xf, spy, interp=np.zeros((3, 1)))
        # critic sees the mix first; weight 1 selects real, weight 0 fake
        np.testing.assert_array_equal(seen[0], xr)
        np.testing.assert_array_equal(seen[3], xf)

    def test_requires_rng_or_interp(self):
        xr = np.ones((2, 4), dtype=np.float32)
        with pytest.raises(ConfigError):
            losses.critic_loss(xr, xr, linear_critic(Tensor(np.ones(4, dtype=np.float32))))

    def test_stats_are_plain_floats(self):
        rng = np.random.default_rng(9)
        xr = rng.random((4, 6), dtype=np.float32)
        xf = rng.random((4, 6), dtype=np.float32)
        w = Tensor(rng.standard_normal(6).astype(np.float32), requires_grad=True)
        loss, stats = losses.critic_loss(xr, xf, linear_critic(w),
                                         rng=np.random.default_rng(1))
        assert set(stats) == {"penalty", "grad_norm", "score_real", "score_fake"}
        for v in stats.values():
            assert isinstance(v, float) and np.isfinite(v)
        assert np.isfinite(loss.item())


class TestGeneratorLoss:
    def test_reduces_to_sad_without_critic(self):
        rng = np.random.default_rng(10)
        x = rng.random((5, 16), dtype=np.float32) + 0.1
        xh = Tensor(rng.random((5, 16), dtype=np.float32) + 0.1, requires_grad=True)
        ref = losses.sad_loss(Tensor(x), xh)
        for kwargs in ({"critic": None}, {"critic": lambda t: t, "adv_weight": 0.0}):
            loss, stats = losses.generator_loss(Tensor(x), xh, **kwargs)
            assert loss.item() == ref.item()
            assert stats["adv"] == 0.0

    def test_adversarial_term_added(self):
        rng = np.random.default_rng(11)
        d = 12
        x = rng.random((4, d), dtype=np.float64) + 0.1
        xh_data = rng.random((4, d)) + 0.1
        xh = Tensor(xh_data, requires_grad=True)
        w = Tensor(rng.standard_normal(d), requires_grad=True)
        loss, stats = losses.generator_loss(Tensor(x), xh, critic=linear_critic(w),
                                            adv_weight=0.1)
        sad = losses.sad_per_sample(x, xh_data).mean()
        want = sad + 0.1 * (-(xh_data @ w.data).mean())
        assert loss.item() == pytest.approx(want, rel=1e-10)
        assert stats["sad"] == pytest.approx(sad, rel=1e-6)

    def test_weights_config(self):
        w = losses.LossWeights()
        assert (w.penalty, w.adversarial) == (10.0, 0.1)
        with pytest.raises(ConfigError):
            losses.LossWeights(adversarial=-0.1)
