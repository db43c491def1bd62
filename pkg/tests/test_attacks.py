import numpy as np
import pytest

from vmdetect.attacks import (
    AttackConfig,
    bim,
    fgsm,
    load_adversarial,
    mim,
    momentum_update,
    run_attack,
    save_adversarial,
)
from vmdetect.errors import DataFormatError
from vmdetect.nn import DenseLayer, Network, cross_entropy, forward_batch


def softmax_linear(rng, d=4, k=3):
    return Network((DenseLayer(rng.normal(size=(k, d)), rng.normal(size=k), "softmax"),))


def identity_net():
    return Network((DenseLayer(np.eye(2), np.zeros(2), "softmax"),))


def check_budget(pair, cfg):
    assert np.max(np.abs(pair.adv - pair.clean)) <= cfg.epsilon + 1e-9
    assert np.all(pair.adv >= cfg.box[0]) and np.all(pair.adv <= cfg.box[1])


class TestConfig:
    def test_default_step(self):
        assert AttackConfig("bim", 0.2, iters=10).eps_iter == pytest.approx(0.02)

    @pytest.mark.parametrize(
        "kw",
        [{"kind": "cw"}, {"epsilon": -0.1}, {"iters": 0}, {"decay": -1}, {"box": (1, 0)}, {"epsilon": 0.1, "eps_iter": 0.2}],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            AttackConfig(**kw)


class TestFgsm:
    def test_zero_budget(self, moons):
        X, y = moons.subset("test")
        pair = fgsm(identity_net(), X, y, AttackConfig("fgsm", 0.0))
        np.testing.assert_array_equal(pair.adv, X)

    def test_perturbation_is_a_sign_step(self):
        rng = np.random.default_rng(0)
        net = softmax_linear(rng)
        X = rng.uniform(0.2, 0.8, size=(30, 4))
        y = rng.integers(0, 3, 30)
        pair = fgsm(net, X, y, AttackConfig("fgsm", 0.1))
        d = np.round((pair.adv - X) / 0.1, 12)
        assert set(np.unique(d)) <= {-1.0, 0.0, 1.0}

    def test_loss_increases_on_softmax_linear(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            net = softmax_linear(rng)
            X = rng.uniform(0.2, 0.8, size=(10, 4))
            y = rng.integers(0, 3, 10)
            pair = fgsm(net, X, y, AttackConfig("fgsm", 0.05))
            clean = cross_entropy(forward_batch(net, X), y)
            adv = cross_entropy(forward_batch(net, pair.adv), y)
            assert np.all(adv >= clean - 1e-12)


class TestIterative:
    def test_bim_single_step_is_fgsm(self, moons, moons_net):
        X, y = moons.subset("test")
        a = fgsm(moons_net, X, y, AttackConfig("fgsm", 0.1))
        b = bim(moons_net, X, y, AttackConfig("bim", 0.1, eps_iter=0.1, iters=1))
        assert a.adv.tobytes() == b.adv.tobytes()

    def test_mim_single_step_without_momentum_is_fgsm(self, moons, moons_net):
        X, y = moons.subset("test")
        a = fgsm(moons_net, X, y, AttackConfig("fgsm", 0.07))
        b = mim(moons_net, X, y, AttackConfig("mim", 0.07, eps_iter=0.07, iters=1, decay=0.0))
        assert a.adv.tobytes() == b.adv.tobytes()

    def test_momentum_recurrence(self):
        g = np.array([[1.0, -3.0, 0.0], [0.0, 0.0, 0.0]])
        acc = momentum_update(np.zeros_like(g), g, 0.7)
        acc = momentum_update(acc, g, 0.7)
        np.testing.assert_allclose(acc[0], 1.7 * g[0] / 4.0)
        np.testing.assert_array_equal(acc[1], 0.0)

    @pytest.mark.parametrize("kind", ["fgsm", "bim", "mim"])
    def test_budget_and_box(self, kind, moons, moons_net):
        X, y = moons.subset("test")
        for eps in (0.01, 0.1, 0.3):
            cfg = AttackConfig(kind, eps)
            check_budget(run_attack(moons_net, X, y, cfg), cfg)

    def test_deterministic(self, moons, moons_net):
        X, y = moons.subset("test")
        cfg = AttackConfig("mim", 0.1)
        assert run_attack(moons_net, X, y, cfg).adv.tobytes() == run_attack(moons_net, X, y, cfg).adv.tobytes()

    def test_bim_at_least_as_strong_as_fgsm(self, moons, moons_net):
        X, y = moons.subset("test")
        f = fgsm(moons_net, X, y, AttackConfig("fgsm", 0.1))
        b = bim(moons_net, X, y, AttackConfig("bim", 0.1))
        assert np.mean(b.adv_pred != y) >= np.mean(f.adv_pred != y)

    def test_strength_grows_with_budget(self, moons, moons_net):
        X, y = moons.subset("test")
        rates = [np.mean(fgsm(moons_net, X, y, AttackConfig("fgsm", e)).adv_pred != y) for e in (0.0, 0.02, 0.05, 0.1, 0.2)]
        assert all(a <= b for a, b in zip(rates, rates[1:]))


class TestSerialization:
    def test_round_trip(self, tmp_path, moons, moons_net):
        X, y = moons.subset("test")
        cfg = AttackConfig("bim", 0.1)
        pair = run_attack(moons_net, X, y, cfg)
        save_adversarial(pair, tmp_path / "bim", cfg)
        back, manifest = load_adversarial(tmp_path / "bim")
        np.testing.assert_array_equal(back.adv, pair.adv)
        np.testing.assert_array_equal(back.clean, pair.clean)
        np.testing.assert_array_equal(back.label, y)
        assert manifest["attack"]["kind"] == "bim"

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_adversarial(tmp_path / "absent")
