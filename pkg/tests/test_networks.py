"""Explicit-gradient networks: forward determinism, FD gradient oracles."""
import numpy as np
import pytest

from microcell.errors import ValidationError
from microcell.networks import (Adam, Mlp, discriminator_loss,
                                generator_adversarial_loss, head_backward,
                                head_forward, l1_loss, mlp_backward, mlp_forward)

FD_H = 1e-5
FD_TOL = 1e-5


def fd_check(loss_fn, net, n_coords=40, seed=0, h=FD_H, tol=FD_TOL):
    """Central finite differences on randomly chosen parameter coordinates.

    loss_fn() -> (loss, grads dict for net). Checks relative error of
    each sampled coordinate against (L(p+h) - L(p-h)) / 2h.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn()
    flat_params = net.parameters()
    flat_grads = grads["weights"] + grads["biases"]
    checked = 0
    while checked < n_coords:
        arr_i = rng.integers(0, len(flat_params))
        p = flat_params[arr_i]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p[idx]
        p[idx] = orig + h
        lp, _ = loss_fn()
        p[idx] = orig - h
        lm, _ = loss_fn()
        p[idx] = orig
        fd = (lp - lm) / (2 * h)
        an = flat_grads[arr_i][idx]
        scale = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / scale <= tol, \
            f"grad mismatch at {arr_i}{idx}: fd={fd!r} analytic={an!r}"
        checked += 1


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = Mlp([4, 8, 3], seed=0)
        for W in net.weights:
            W[:] = 0.0
        out, _ = net.forward(np.ones(4))
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_identity_passthrough(self):
        net = Mlp([3, 3], seed=0)
        net.weights[0] = np.eye(3)
        net.biases[0][:] = 0.0
        x = np.array([0.3, -1.2, 7.0])
        out, _ = net.forward(x)
        np.testing.assert_array_equal(out, x)

    def test_deterministic(self):
        net = Mlp([5, 16, 2], seed=1)
        x = np.random.default_rng(2).standard_normal((6, 5))
        a, _ = net.forward(x)
        b, _ = net.forward(x)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch(self):
        net = Mlp([5, 2], seed=0)
        with pytest.raises(ValidationError):
            net.forward(np.ones(4))

    def test_serialization_roundtrip(self):
        net = Mlp([4, 8, 8, 2], seed=3)
        clone = Mlp.from_dict(net.to_dict())
        x = np.random.default_rng(4).standard_normal((3, 4))
        np.testing.assert_array_equal(net.forward(x)[0], clone.forward(x)[0])


class TestBackward:
    def test_zero_output_gradient(self):
        net = Mlp([4, 8, 3], seed=5)
        x = np.random.default_rng(6).standard_normal((5, 4))
        _, cache = net.forward(x)
        grads, gin = net.backward(cache, np.zeros((5, 3)))
        for g in grads["weights"] + grads["biases"]:
            np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(gin, 0.0)

    def test_gradient_scales_linearly(self):
        net = Mlp([4, 8, 3], seed=7)
        x = np.random.default_rng(8).standard_normal((5, 4))
        _, cache = net.forward(x)
        g1 = np.random.default_rng(9).standard_normal((5, 3))
        grads1, _ = net.backward(cache, g1)
        grads3, _ = net.backward(cache, 3.0 * g1)
        for a, b in zip(grads1["weights"], grads3["weights"]):
            np.testing.assert_allclose(3.0 * a, b, rtol=1e-13)

    def test_fd_plain_quadratic_head(self):
        """Mean of squared outputs: smooth everywhere, strict FD check."""
        net = Mlp([4, 16, 16, 3], seed=10)
        x = np.random.default_rng(11).standard_normal((8, 4))

        def loss():
            out, cache = mlp_forward(net, x)
            loss_val = float((out ** 2).mean())
            grads, _ = mlp_backward(net, cache, 2.0 * out / out.size)
            return loss_val, grads

        fd_check(loss, net, n_coords=60, seed=12)

    def test_fd_input_gradient(self):
        net = Mlp([3, 8, 2], seed=13)
        x0 = np.random.default_rng(14).standard_normal(3)

        def value(x):
            out, _ = net.forward(x)
            return float((out ** 2).sum())

        out, cache = net.forward(x0)
        _, gin = net.backward(cache, 2.0 * out)
        for i in range(3):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += FD_H
            xm[i] -= FD_H
            fd = (value(xp) - value(xm)) / (2 * FD_H)
            assert abs(fd - gin[i]) / max(abs(fd), 1e-8) <= FD_TOL


class TestHeads:
    def test_structural_constraints(self):
        rng = np.random.default_rng(15)
        raw = rng.standard_normal((1000, 6)) * 5
        params, _ = head_forward(raw)
        np.testing.assert_allclose(params[:, :3].sum(axis=1), 1.0, atol=1e-9)
        assert np.all(params[:, :3] > 0)
        assert np.all(np.abs(params[:, 3:]) <= 0.4)

    def test_fd_through_heads(self):
        net = Mlp([5, 12, 6], seed=16)
        x = np.random.default_rng(17).standard_normal((4, 5))
        target = np.random.default_rng(18).standard_normal((4, 6)) * 0.3

        def loss():
            raw, cache = net.forward(x)
            params, cache_h = head_forward(raw)
            val = float(((params - target) ** 2).mean())
            grad_params = 2.0 * (params - target) / params.size
            grads, _ = net.backward(cache, head_backward(cache_h, grad_params))
            return val, grads

        fd_check(loss, net, n_coords=40, seed=19)


class TestLosses:
    def test_discriminator_at_chance(self):
        logits = np.zeros(16)  # sigmoid -> 0.5
        loss, _, _ = discriminator_loss(logits, logits)
        assert loss == pytest.approx(2.0 * np.log(2.0), rel=1e-12)

    def test_discriminator_perfect(self):
        loss, _, _ = discriminator_loss(np.full(8, 50.0), np.full(8, -50.0))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_generator_loss_at_chance(self):
        loss, _ = generator_adversarial_loss(np.zeros(8))
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_l1_constant_zero_predictor(self):
        # target (1, 1) with zero prediction: per-component mean is 1
        loss, _ = l1_loss(np.zeros((4, 2)), np.ones((4, 2)))
        assert loss == 1.0

    def test_l1_perfect(self):
        y = np.random.default_rng(20).standard_normal((5, 2))
        loss, grad = l1_loss(y, y)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_fd_discriminator_loss(self):
        net = Mlp([6, 12, 1], seed=21)
        rng = np.random.default_rng(22)
        real = rng.standard_normal((6, 6))
        fake = rng.standard_normal((6, 6))

        def loss():
            lr, cr = net.forward(real)
            lf, cf = net.forward(fake)
            val, g_r, g_f = discriminator_loss(lr[:, 0], lf[:, 0])
            grads_r, _ = net.backward(cr, g_r[:, None])
            grads_f, _ = net.backward(cf, g_f[:, None])
            grads = {"weights": [a + b for a, b in zip(grads_r["weights"], grads_f["weights"])],
                     "biases": [a + b for a, b in zip(grads_r["biases"], grads_f["biases"])]}
            return val, grads

        fd_check(loss, net, n_coords=40, seed=23)

    def test_fd_generator_loss_through_frozen_networks(self):
        """Adversarial + gamma*L1 property penalty, gradients through G only."""
        gen = Mlp([5, 10, 6], seed=24)
        disc = Mlp([8, 10, 1], seed=25)
        reg = Mlp([6, 10, 2], seed=26)
        rng = np.random.default_rng(27)
        zy = rng.standard_normal((4, 5))
        y = rng.standard_normal((4, 2)) * 0.5
        gamma = 20.0

        def loss():
            raw, cg = gen.forward(zy)
            params, ch = head_forward(raw)
            logits, cd = disc.forward(np.concatenate([params, y[:, :2]], axis=1))
            adv, g_logit = generator_adversarial_loss(logits[:, 0])
            _, g_dinput = disc.backward(cd, g_logit[:, None])
            grad_params = g_dinput[:, :6]
            pred, crg = reg.forward(params)
            lg, g_pred = l1_loss(pred, y)
            _, g_rinput = reg.backward(crg, g_pred)
            grad_params = grad_params + gamma * g_rinput
            grads, _ = gen.backward(cg, head_backward(ch, grad_params))
            return adv + gamma * lg, grads

        fd_check(loss, gen, n_coords=40, seed=28)

    def test_fd_regressor_loss(self):
        net = Mlp([6, 12, 2], seed=29)
        rng = np.random.default_rng(30)
        x = rng.standard_normal((8, 6))
        y = rng.standard_normal((8, 2))

        def loss():
            pred, cache = net.forward(x)
            val, g = l1_loss(pred, y)
            grads, _ = net.backward(cache, g)
            return val, grads

        fd_check(loss, net, n_coords=40, seed=31)


class TestAdam:
    def test_descends_quadratic(self):
        net = Mlp([2, 1], seed=32)
        opt = Adam(net, learning_rate=0.05)
        x = np.array([[1.0, -2.0]])

        def step():
            out, cache = net.forward(x)
            grads, _ = net.backward(cache, 2.0 * out)
            opt.step(net, grads)
            return float((out ** 2).sum())

        first = step()
        for _ in range(200):
            last = step()
        assert last < first * 1e-3
