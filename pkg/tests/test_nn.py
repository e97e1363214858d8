import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vslmarl.nn import (MLP, AdamState, Checkpoint, CheckpointError, PopArt, action_score,
                        adam_update, clip_grad_norm, forward_policy, forward_value,
                        integrated_gradients, load_checkpoint, log_softmax, save_checkpoint)


def scalar_forward(net, x):
    """Loop-based forward pass used as an oracle."""
    h = list(map(float, x))
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        nxt = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            nxt.append(math.tanh(s) if k < len(net.weights) - 1 else s)
        h = nxt
    return h


def scalar_softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def random_net(sizes, rng, scale=0.5):
    net = MLP.init(sizes, rng, out_gain=1.0)
    for b in net.biases:
        b[...] = rng.normal(0, scale, b.shape)
    return net


def fd_check(net, x, weights_out, h=1e-6):
    """Max relative error of backward() against central differences of sum(weights_out*f(x))."""
    out, acts = net.forward(x, keep=True)
    grads, _ = net.backward(acts, weights_out)
    flat_g = np.concatenate([g.ravel() for g in grads])
    theta = net.flat()
    fd = np.empty_like(theta)
    for k in range(theta.size):
        t = theta.copy()
        t[k] += h
        net.set_flat(t)
        up = float(np.sum(weights_out * net.forward(x)))
        t[k] -= 2 * h
        net.set_flat(t)
        dn = float(np.sum(weights_out * net.forward(x)))
        fd[k] = (up - dn) / (2 * h)
    net.set_flat(theta)
    return float(np.max(np.abs(flat_g - fd) / np.maximum(1.0, np.abs(fd))))


class TestForward:
    def test_zero_weights_give_uniform_policy_and_zero_value(self):
        p, _ = forward_policy(MLP.zeros([5, 64, 64, 5]), np.ones(5))
        assert np.allclose(p, 0.2, atol=1e-15)
        assert forward_value(MLP.zeros([20, 64, 64, 1]), np.ones(20)) == 0.0

    def test_linear_net_is_dot_product(self, rng):
        net = MLP([3, 1], [rng.normal(size=(3, 1))], [np.array([0.5])])
        x = rng.normal(size=3)
        assert forward_value(net, x) == pytest.approx(float(x @ net.weights[0][:, 0] + 0.5),
                                                       abs=1e-15)

    def test_policy_matches_scalar_oracle(self, rng):
        net = random_net([5, 64, 64, 5], rng)
        x = rng.normal(size=5)
        p, logp = forward_policy(net, x)
        want = scalar_softmax(scalar_forward(net, x))
        assert np.allclose(p, want, atol=1e-12, rtol=0)
        assert np.allclose(np.exp(logp), p, atol=1e-15)

    def test_value_matches_scalar_oracle(self, rng):
        net = random_net([20, 64, 64, 1], rng)
        x = rng.normal(size=20)
        assert forward_value(net, x) == pytest.approx(scalar_forward(net, x)[0], abs=1e-12)

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError):
            MLP.zeros([5, 4, 5]).forward(np.array([1, 2, np.nan, 0, 0]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_probabilities_positive_and_normalised(self, seed):
        r = np.random.default_rng(seed)
        net = random_net([5, 64, 64, 5], r, scale=2.0)
        p, _ = forward_policy(net, r.normal(0, 3, size=(7, 5)))
        assert np.all(p > 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_permuting_outputs_permutes_probabilities(self, rng):
        net = random_net([5, 16, 5], rng)
        perm = rng.permutation(5)
        other = net.copy()
        other.weights[-1] = other.weights[-1][:, perm]
        other.biases[-1] = other.biases[-1][perm]
        x = rng.normal(size=5)
        assert np.allclose(forward_policy(other, x)[0], forward_policy(net, x)[0][perm],
                           atol=1e-15)

    def test_masked_log_softmax(self):
        lp = log_softmax(np.zeros(5), np.array([True, True, False, False, False]))
        assert np.allclose(np.exp(lp), [0.5, 0.5, 0, 0, 0])


class TestBackward:
    def test_constant_loss_gives_zero_gradients(self, rng):
        net = random_net([5, 8, 3], rng)
        _, acts = net.forward(rng.normal(size=(4, 5)), keep=True)
        grads, gx = net.backward(acts, np.zeros((4, 3)))
        assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)

    def test_linear_squared_loss_closed_form(self, rng):
        w = rng.normal(size=(4, 2))
        net = MLP([4, 2], [w.copy()], [np.zeros(2)])
        x, y = rng.normal(size=4), rng.normal(size=2)
        out, acts = net.forward(x, keep=True)
        grads, _ = net.backward(acts, 2 * (out - y))
        assert np.allclose(grads[0], np.outer(x, 2 * (x @ w - y)), atol=1e-14)

    @pytest.mark.parametrize("sizes", [[5, 64, 64, 5], [40, 64, 64, 1]])
    def test_finite_difference_agreement(self, sizes):
        r = np.random.default_rng(sizes[0])
        for _ in range(2):
            net = random_net(sizes, r)
            x = r.normal(size=(3, sizes[0]))
            assert fd_check(net, x, r.normal(size=(3, sizes[-1]))) <= 1e-5

    def test_input_gradient(self, rng):
        net = random_net([5, 8, 2], rng)
        x = rng.normal(size=5)
        gout = np.array([0.3, -1.2])
        _, acts = net.forward(x, keep=True)
        _, gx = net.backward(acts, gout)
        fd = [(float(gout @ net.forward(x + e)) - float(gout @ net.forward(x - e))) / 2e-6
              for e in np.eye(5) * 1e-6]
        assert np.allclose(gx[0], fd, atol=1e-8)

    def test_clip_grad_norm(self):
        g = [np.array([3.0]), np.array([4.0])]
        assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
        assert math.hypot(g[0][0], g[1][0]) == pytest.approx(1.0)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        st_ = AdamState.for_params(p, 1e-3)
        adam_update(p, [np.zeros(2)], st_)
        assert np.array_equal(p[0], [1.0, -2.0]) and st_.step == 1

    def test_first_step_is_lr_times_sign(self):
        p = [np.array([1.0, 1.0, 1.0])]
        adam_update(p, [np.array([5.0, -0.01, 300.0])], AdamState.for_params(p, 1e-3))
        assert np.allclose(p[0], 1.0 - 1e-3 * np.array([1, -1, 1]), atol=1e-9)

    def test_two_steps_match_hand_unrolled(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g1, g2 = 0.5, -1.5
        m1, v1 = (1 - b1) * g1, (1 - b2) * g1**2
        x1 = 2.0 - lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
        m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2**2
        x2 = x1 - lr * (m2 / (1 - b1**2)) / (math.sqrt(v2 / (1 - b2**2)) + eps)
        p = [np.array([2.0])]
        s = AdamState.for_params(p, lr)
        adam_update(p, [np.array([g1])], s)
        adam_update(p, [np.array([g2])], s)
        assert p[0][0] == pytest.approx(x2, abs=1e-15)

    def test_shape_mismatch(self):
        p = [np.zeros(3)]
        with pytest.raises(ValueError):
            adam_update(p, [np.zeros(2)], AdamState.for_params(p, 1e-3))


class TestPopArt:
    def test_preserves_outputs_and_normalises(self, rng):
        head = random_net([6, 16, 1], rng)
        pa = PopArt(beta=0.02)
        probes = rng.normal(size=(100, 6))
        for k in range(50):
            before = pa.denormalize(head.forward(probes)[:, 0])
            t = rng.normal(40.0, 15.0, 2000)
            norm = pa.update(head, t)
            after = pa.denormalize(head.forward(probes)[:, 0])
            assert np.max(np.abs(before - after)) <= 1e-6
            assert abs(norm.mean()) <= 0.1 and abs(norm.std() - 1) <= 0.2

    def test_first_update_adopts_batch_statistics(self, rng):
        pa = PopArt()
        t = rng.normal(3.0, 2.0, 500)
        pa.update(MLP.zeros([2, 1]), t)
        assert pa.mu == pytest.approx(t.mean()) and pa.sigma == pytest.approx(t.std())

    def test_steady_targets_leave_head_unchanged(self, rng):
        pa = PopArt()
        t = np.array([1.0, 3.0])
        head = random_net([3, 1], rng)
        pa.update(head, t)
        w, b = head.weights[-1].copy(), head.biases[-1].copy()
        pa.update(head, t)
        assert np.allclose(head.weights[-1], w, atol=1e-15)
        assert np.allclose(head.biases[-1], b, atol=1e-15)

    def test_sigma_floor_and_empty_batch(self):
        pa = PopArt()
        pa.update(MLP.zeros([2, 1]), np.full(10, 7.0))
        assert pa.sigma == pa.sigma_min
        with pytest.raises(ValueError):
            pa.update(MLP.zeros([2, 1]), [])


class TestIntegratedGradients:
    def test_zero_path_gives_zero(self, rng):
        net = random_net([5, 64, 64, 5], rng)
        x = rng.normal(size=5)
        assert np.all(integrated_gradients(net, x, x, 2) == 0)

    def test_completeness_and_convergence(self, rng):
        net = random_net([5, 64, 64, 5], rng)
        base, x = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
        delta = float(action_score(net, x, 1) - action_score(net, base, 1))
        gaps = [abs(integrated_gradients(net, base, x, 1, n).sum() - delta)
                for n in (64, 128, 256)]
        assert gaps[2] <= 1e-3
        assert gaps[0] > gaps[1] > gaps[2]

    def test_log_probability_target(self, rng):
        net = random_net([5, 8, 5], rng)
        base, x = rng.normal(size=5), rng.normal(size=5)
        ig = integrated_gradients(net, base, x, 3, 256, quantity="logp")
        want = float(action_score(net, x, 3, "logp") - action_score(net, base, 3, "logp"))
        assert ig.sum() == pytest.approx(want, abs=1e-3)

    def test_argument_errors(self, rng):
        net = random_net([5, 8, 5], rng)
        with pytest.raises(ValueError):
            integrated_gradients(net, np.zeros(4), np.zeros(5), 0)
        with pytest.raises(ValueError):
            integrated_gradients(net, np.zeros(5), np.ones(5), 0, steps=1)
        with pytest.raises(ValueError):
            action_score(net, np.zeros(5), 0, quantity="odds")


class TestCheckpoint:
    def test_round_trip_is_bit_identical(self, rng, tmp_path):
        actor = random_net([5, 64, 64, 5], rng)
        critic = random_net([20, 64, 64, 1], rng)
        opt = AdamState.for_params(actor.params(), 7e-4)
        adam_update(actor.params(), [rng.normal(size=p.shape) for p in actor.params()], opt)
        pa = PopArt()
        pa.update(critic, rng.normal(size=50))
        path = save_checkpoint(tmp_path / "ck", Checkpoint(actor, critic, opt, None, pa,
                                                          {"config_hash": "abc", "step": 3}))
        ck = load_checkpoint(path, expect_hash="abc")
        x = rng.normal(size=(4, 5))
        assert np.array_equal(ck.actor.forward(x), actor.forward(x))
        assert ck.actor_opt.step == 1 and ck.critic_opt is None
        assert all(np.array_equal(a, b) for a, b in zip(ck.actor_opt.v, opt.v))
        assert ck.popart.mu == pa.mu and ck.meta["step"] == 3

    def test_hash_mismatch_and_corruption(self, rng, tmp_path):
        path = save_checkpoint(tmp_path / "ck.npz",
                               Checkpoint(random_net([5, 4, 5], rng), meta={"config_hash": "a"}))
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_hash="b")
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.npz")
