import numpy as np
import pytest

from bernet import data as D
from bernet import network as N
from bernet import training as T
from bernet.bernstein import basis_values
from conftest import finite_difference_param_check


def tiny_net(seed=0, order=3, in_dim=4, hidden=(4, 3), n_out=3):
    return N.init_network(N.fc_arch(list(hidden), order, n_out),
                          (np.zeros(in_dim), np.ones(in_dim)), seed=seed)


def tiny_batch(rng, net, n=6):
    x = rng.uniform(0.05, 0.95, (n, net.in_width))
    y = rng.integers(0, net.out_width, n)
    return x, y


class TestBackward:
    def test_symmetric_gradients_with_zero_params(self, rng):
        net = tiny_net(seed=3)
        for _, _, arr in net.parameters():
            arr[...] = 0.0
        net.refresh_domain_bounds()
        x = rng.uniform(0, 1, (8, 4))
        y = np.zeros(8, dtype=int)
        _, grads = T.backward(net, x, y)
        gw = grads.layers[-1]["weight"]
        # identical logits for every class: non-target rows get equal gradients
        assert np.allclose(gw[1], gw[2], atol=1e-12)

    @pytest.mark.parametrize("order", [2, 3, 4, 5, 6])
    def test_matches_finite_differences(self, order):
        rng = np.random.default_rng(order)
        net = tiny_net(seed=order, order=order)
        x, y = tiny_batch(rng, net)

        def value():
            return T.softmax_cross_entropy(net.forward(x), y)[0]

        finite_difference_param_check(net, lambda: T.backward(net, x, y), value)

    def test_mse_matches_finite_differences(self, rng):
        net = tiny_net(seed=2, n_out=2)
        x = rng.uniform(0.1, 0.9, (5, 4))
        t = rng.normal(size=(5, 2))

        def value():
            return T.mse(net.forward(x), t)[0]

        finite_difference_param_check(net, lambda: T.backward(net, x, t, "mse"),
                                      value)

    def test_coefficient_gradients_are_basis_values(self, rng):
        # d(output)/d(c_k) is the k-th basis value at the clamped input
        net = tiny_net(seed=5)
        x, y = tiny_batch(rng, net, n=4)
        logits, caches = T._forward_with_caches(net, x)
        for kind, layer, *rest in caches:
            if kind == "bern":
                t = rest[0]
                basis = basis_values(layer.order, t)
                assert np.all(basis >= -1e-12)
                assert np.all(basis <= 1.0 + 1e-12)

    def test_activation_input_gradient_bounded(self, rng):
        net = tiny_net(seed=6, order=6)
        x, y = tiny_batch(rng, net, n=16)
        _, caches = T._forward_with_caches(net, x)
        for kind, layer, *rest in caches:
            if kind == "bern":
                t = rest[0]
                dvals = T._bern_derivative_values(layer, t)
                n = layer.order
                width = layer.stored_hi - layer.stored_lo
                bound = 2 * n * np.abs(layer.coeffs).max(axis=1) / width
                assert np.all(np.abs(dvals) <= bound + 1e-9)

    def test_nonfinite_loss_aborts(self, rng):
        net = tiny_net(seed=7)
        net.layers[-1].bias[0] = np.inf
        x = np.full((2, 4), 0.5)
        with pytest.raises(T.DivergenceError):
            T.backward(net, x, np.array([0, 1]))

    def test_nonfinite_gradient_set_rejected(self):
        net = tiny_net(seed=7)
        grads = T.GradientSet.zeros_for(net)
        grads.layers[0]["weight"][0, 0] = np.nan
        with pytest.raises(T.DivergenceError):
            grads.check_finite()


class TestAdam:
    def test_zero_gradients_keep_parameters(self):
        net = tiny_net(seed=1)
        before = [arr.copy() for _, _, arr in net.parameters()]
        grads = T.GradientSet.zeros_for(net)
        state = T.AdamState.for_network(net)
        T.adam_step(net, grads, state, lr=0.1)
        for prev, (_, _, arr) in zip(before, net.parameters()):
            assert np.array_equal(prev, arr)

    def test_zero_learning_rate_is_noop(self, rng):
        net = tiny_net(seed=2)
        before = [arr.copy() for _, _, arr in net.parameters()]
        x, y = tiny_batch(rng, net)
        _, grads = T.backward(net, x, y)
        T.adam_step(net, grads, T.AdamState.for_network(net), lr=0.0)
        for prev, (_, _, arr) in zip(before, net.parameters()):
            assert np.array_equal(prev, arr)

    def test_matches_scalar_reference(self):
        # oracle: scalar Adam recurrence with constant gradient
        g = 0.37
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        theta_ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 8):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        net = N.init_network([N.AffineSpec(1)], (np.zeros(1), np.ones(1)), seed=0)
        net.layers[0].weight[...] = 1.0
        state = T.AdamState.for_network(net)
        grads = T.GradientSet.zeros_for(net)
        grads.layers[0]["weight"][...] = g
        for _ in range(7):
            T.adam_step(net, grads, state, lr)
        assert net.layers[0].weight[0, 0] == pytest.approx(theta_ref, rel=1e-12)


class TestPGD:
    def test_zero_epsilon_returns_input(self, rng):
        net = tiny_net(seed=3)
        x, y = tiny_batch(rng, net)
        adv = T.pgd_attack(net, x, y, epsilon=0.0, steps=10)
        assert np.array_equal(adv, x)

    def test_never_decreases_loss(self, rng):
        net = tiny_net(seed=4)
        x, y = tiny_batch(rng, net, n=32)
        adv = T.pgd_attack(net, x, y, epsilon=0.05, steps=20)
        clean = T.per_sample_cross_entropy(net.forward(x), y)
        attacked = T.per_sample_cross_entropy(net.forward(adv), y)
        assert np.all(attacked >= clean - 1e-12)

    def test_stays_in_ball_and_domain(self, rng):
        net = tiny_net(seed=5)
        x, y = tiny_batch(rng, net, n=16)
        eps = 0.07
        adv = T.pgd_attack(net, x, y, epsilon=eps, steps=15)
        assert np.all(np.abs(adv - x) <= eps + 1e-12)
        assert np.all(adv >= net.input_lo - 1e-12)
        assert np.all(adv <= net.input_hi + 1e-12)

    def test_one_step_matches_fgsm_on_linear_model(self, rng):
        # closed form: x + eps * sign(grad) clipped to the domain
        net = N.init_network([N.AffineSpec(3)], (np.zeros(4), np.ones(4)), seed=6)
        x = rng.uniform(0.3, 0.7, (5, 4))
        y = rng.integers(0, 3, 5)
        eps = 0.1
        _, g = T.loss_and_input_grad(net, x, y)
        expect = np.clip(x + eps * np.sign(g), np.maximum(x - eps, 0.0),
                         np.minimum(x + eps, 1.0))
        adv = T.pgd_attack(net, x, y, epsilon=eps, steps=1)
        assert np.allclose(adv, expect, atol=1e-12)


class TestCertifiedLoss:
    def test_lambda_zero_equals_plain_ce(self, rng):
        net = tiny_net(seed=7)
        x, y = tiny_batch(rng, net)
        ce = T.softmax_cross_entropy(net.forward(x), y)[0]
        assert T.certified_loss(net, x, y, epsilon=0.1, lam=0.0) == ce

    def test_epsilon_zero_robust_term_is_exact_margin_ce(self, rng):
        net = tiny_net(seed=8)
        x, y = tiny_batch(rng, net)
        logits = net.forward(x)
        w, b = net.layers[-1].weight, net.layers[-1].bias
        diffs = logits[:, :] - logits[np.arange(len(y)), y][:, None]
        rce_direct = T.softmax_cross_entropy(diffs, y)[0]
        rce, _ = T.robust_cross_entropy(net, x, y, epsilon=0.0)
        assert rce == pytest.approx(rce_direct, abs=1e-9)

    def test_lower_bounded_by_scaled_ce(self, rng):
        net = tiny_net(seed=9)
        for trial in range(10):
            x, y = tiny_batch(rng, net, n=12)
            lam = float(rng.uniform(0, 1))
            eps = float(rng.uniform(0, 0.2))
            ce = T.softmax_cross_entropy(net.forward(x), y)[0]
            total = T.certified_loss(net, x, y, eps, lam)
            assert total >= (1 - lam) * ce - 1e-9

    def test_invalid_lambda(self, rng):
        net = tiny_net(seed=1)
        x, y = tiny_batch(rng, net)
        with pytest.raises(ValueError):
            T.certified_loss(net, x, y, 0.1, 1.5)

    @pytest.mark.parametrize("order", [2, 4, 6])
    def test_certified_gradients_match_finite_differences(self, order):
        rng = np.random.default_rng(100 + order)
        net = tiny_net(seed=order, order=order)
        x, y = tiny_batch(rng, net)
        eps, lam = 0.08, 0.65

        def value():
            return T.certified_loss(net, x, y, eps, lam)

        finite_difference_param_check(
            net, lambda: T.certified_backward(net, x, y, eps, lam), value)

    def test_conv_certified_gradients(self):
        rng = np.random.default_rng(17)
        net = N.init_network(
            [N.Conv2dSpec(2, 3, stride=2, padding=1), N.BernSpec(3), N.AffineSpec(3)],
            (np.zeros(16), np.ones(16)), seed=4, input_shape=(1, 4, 4))
        x = rng.uniform(0.1, 0.9, (4, 16))
        y = rng.integers(0, 3, 4)

        def value():
            return T.certified_loss(net, x, y, 0.05, 0.5)

        finite_difference_param_check(
            net, lambda: T.certified_backward(net, x, y, 0.05, 0.5), value)


class TestTrainLoop:
    def test_two_moons_reaches_95_percent(self):
        train = D.two_moons(1500, seed=0)
        net = N.init_network(N.fc_arch([32, 32], 3, 2), train.domain(), seed=0)
        cfg = T.TrainConfig(epochs=150, batch_size=128, regime="plain", seed=0)
        log = T.train(net, train.inputs, train.labels, cfg)
        assert len(log.records) <= 200
        assert log.records[-1].train_acc >= 0.95

    def test_digit_subset_reaches_85_percent(self):
        train, _, _ = D.load_digit_data(1000, 10, seed=0)
        net = N.init_network(N.fc_arch([20, 20], 4, 10), train.domain(), seed=0)
        cfg = T.TrainConfig(epochs=100, batch_size=64, regime="plain", seed=0)
        log = T.train(net, train.inputs, train.labels, cfg)
        assert log.records[-1].train_acc >= 0.85

    def test_lambda_max_zero_certified_equals_plain(self):
        train = D.two_moons(400, seed=3)
        logs = []
        for regime in ("plain", "certified"):
            net = N.init_network(N.fc_arch([8], 3, 2), train.domain(), seed=5)
            cfg = T.TrainConfig(epochs=8, batch_size=64, regime=regime,
                                lambda_max=0.0, epsilon=0.1, warmup_epochs=2,
                                seed=5)
            logs.append(T.train(net, train.inputs, train.labels, cfg))
        for ra, rb in zip(logs[0].records, logs[1].records):
            assert ra.loss == rb.loss

    def test_training_determinism(self):
        train = D.two_moons(300, seed=1)
        losses = []
        for _ in range(2):
            net = N.init_network(N.fc_arch([8], 2, 2), train.domain(), seed=9)
            cfg = T.TrainConfig(epochs=5, batch_size=64, seed=9)
            log = T.train(net, train.inputs, train.labels, cfg)
            losses.append([r.loss for r in log.records])
        assert losses[0] == losses[1]

    def test_metrics_csv_columns(self, tmp_path):
        train = D.two_moons(200, seed=2)
        net = N.init_network(N.fc_arch([6], 2, 2), train.domain(), seed=0)
        cfg = T.TrainConfig(epochs=3, batch_size=64, seed=0)
        path = tmp_path / "metrics.csv"
        T.train(net, train.inputs, train.labels, cfg,
                test_x=train.inputs, test_y=train.labels, metrics_path=path)
        header = path.read_text().splitlines()[0]
        assert header == "epoch,loss,train_acc,test_acc,cert_acc,lambda,lr"

    def test_lr_schedule_decays_after_start(self):
        cfg = T.TrainConfig(epochs=60, lr_decay_start=50, learning_rate=5e-3)
        assert T._lr_at(cfg, 10) == 5e-3
        assert T._lr_at(cfg, 50) == 5e-3
        assert T._lr_at(cfg, 51) == pytest.approx(5e-3 * 0.999)

    def test_lambda_schedule_ramps_after_warmup(self):
        cfg = T.TrainConfig(epochs=21, warmup_epochs=10, lambda_max=0.5,
                            regime="certified")
        assert T._lambda_at(cfg, 0) == 0.0
        assert T._lambda_at(cfg, 9) == 0.0
        assert T._lambda_at(cfg, 15) == pytest.approx(0.25)
        assert T._lambda_at(cfg, 20) == pytest.approx(0.5)

    def test_certified_training_beats_plain_on_certified_accuracy(self):
        from bernet import certify as C

        train = D.two_moons(1200, seed=4)
        test = D.two_moons(400, seed=5)
        eps = 0.05
        nets = {}
        for regime in ("plain", "certified"):
            net = N.init_network(N.fc_arch([16, 16], 3, 2), train.domain(), seed=3)
            cfg = T.TrainConfig(epochs=80, batch_size=128, regime=regime,
                                epsilon=eps, lambda_max=0.6, warmup_epochs=10,
                                seed=3)
            T.train(net, train.inputs, train.labels, cfg)
            nets[regime] = net
        acc = {k: C.certified_accuracy(v, test.inputs, test.labels, eps).accuracy
               for k, v in nets.items()}
        assert acc["certified"] > acc["plain"]


class TestConfig:
    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            T.TrainConfig.from_dict({"epochs": 3, "bogus": 1})

    def test_validation(self):
        with pytest.raises(ValueError):
            T.TrainConfig(regime="nope")
        with pytest.raises(ValueError):
            T.TrainConfig(lambda_max=1.5)
        with pytest.raises(ValueError):
            T.TrainConfig(epsilon=-0.1)
