import math
from fractions import Fraction

import numpy as np
import pytest

from autolabel import attacks, nn
from autolabel.augment import BucketKey
from autolabel.errors import ConfigError
from conftest import finite_diff_param_grads  # noqa: F401  (shared helpers live here)
from test_augment import bucket_scan_oracle


def small_model(seed=0, k=4):
    rng = np.random.default_rng(seed)
    return nn.build_mlp((1, 4, 4), hidden=(16,), n_classes=k, rng=rng)


# ---------------------------------------------------------------------------
# eps sampling

def test_sample_eps_stays_in_half_open_interval():
    rng = np.random.default_rng(0)
    draws = [attacks.sample_eps(rng, 0.01) for _ in range(5000)]
    assert all(0.0 < e <= 0.01 for e in draws)


def test_sample_eps_mean_matches_uniform_oracle():
    rng = np.random.default_rng(1)
    n = 100_000
    draws = np.array([attacks.sample_eps(rng, 0.2) for _ in range(n)])
    # U(0, b]: mean b/2, var b^2/12
    sigma = 0.2 / math.sqrt(12 * n)
    assert abs(draws.mean() - 0.1) <= 4 * sigma


def test_sample_eps_reproducible():
    a = [attacks.sample_eps(np.random.default_rng(7), 0.05) for _ in range(3)]
    b = [attacks.sample_eps(np.random.default_rng(7), 0.05) for _ in range(3)]
    assert a == b


def test_sample_eps_rejects_nonpositive_bound():
    with pytest.raises(ConfigError):
        attacks.sample_eps(np.random.default_rng(0), 0.0)


# ---------------------------------------------------------------------------
# bucket map

def test_adv_bucket_hand_values():
    assert attacks.adv_bucket(0.03, 0.1, 10) == BucketKey("adversarial", (3,))
    assert attacks.adv_bucket(0.1, 0.1, 10).coords == (10,)  # endpoint
    assert attacks.adv_bucket(0.0, 0.1, 10).coords == (1,)   # merge rule


def test_adv_bucket_rejects_out_of_range():
    with pytest.raises(ConfigError):
        attacks.adv_bucket(0.2, 0.1, 10)
    with pytest.raises(ConfigError):
        attacks.adv_bucket(-0.01, 0.1, 10)


def test_adv_bucket_matches_scan_oracle_on_dense_grid():
    for n_buckets, eps_max in ((10, 0.01), (5, 0.1), (7, 0.03), (1, 1.0)):
        grid = [eps_max * i / 499 for i in range(500)]
        for eps in grid:
            got = attacks.adv_bucket(eps, eps_max, n_buckets).coords[0]
            want = bucket_scan_oracle(eps, eps_max, n_buckets)
            assert got == want, (eps, eps_max, n_buckets)
            assert 1 <= got <= n_buckets


def test_adv_bucket_consistent_with_sampled_eps():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        eps = attacks.sample_eps(rng, 0.01)
        n = attacks.adv_bucket(eps, 0.01, 10).coords[0]
        assert 1 <= n <= 10


# ---------------------------------------------------------------------------
# pgd

def test_pgd_vanishing_ball_returns_input():
    model = small_model()
    rng = np.random.default_rng(3)
    x = rng.random((4, 1, 4, 4), dtype=np.float32)
    y = np.array([0, 1, 2, 3])
    adv = attacks.pgd_attack(model, x, y, eps=1e-9, iterations=5, step=1e-9 / 4,
                             restarts=2, rng=rng)
    assert np.abs(adv.astype(np.float64) - x).max() <= 1e-9 + 1e-12


def test_pgd_projection_contract():
    model = small_model(seed=5)
    rng = np.random.default_rng(4)
    for eps in (0.01, 0.05, 0.3):
        x = rng.random((8, 1, 4, 4), dtype=np.float32)
        y = rng.integers(0, 4, size=8)
        adv = attacks.pgd_attack(model, x, y, eps=eps, iterations=10, step=eps / 4,
                                 restarts=2, rng=rng)
        delta = np.abs(adv.astype(np.float64) - x.astype(np.float64)).max()
        assert delta <= eps + 1e-7
        assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_pgd_per_sample_eps_vector():
    model = small_model(seed=6)
    rng = np.random.default_rng(5)
    x = rng.random((6, 1, 4, 4), dtype=np.float32)
    y = rng.integers(0, 4, size=6)
    eps = np.array([0.001, 0.01, 0.02, 0.05, 0.1, 0.2])
    adv = attacks.pgd_attack(model, x, y, eps=eps, iterations=8, step=eps / 4,
                             restarts=1, rng=rng)
    for i in range(6):
        assert np.abs(adv[i].astype(np.float64) - x[i]).max() <= eps[i] + 1e-7


def test_pgd_loss_never_below_clean_loss(toy_model, toy_gratings):
    _, test = toy_gratings
    x = test.images[:64]
    y = test.labels[:64]
    onehot = np.eye(10, dtype=np.float64)[y]
    clean = attacks._batch_losses(toy_model, x, onehot)
    adv = attacks.pgd_attack(toy_model, x, y, eps=0.03, iterations=10,
                             step=0.03 / 4, restarts=1, rng=np.random.default_rng(6))
    attacked = attacks._batch_losses(toy_model, adv, onehot)
    assert np.all(attacked >= clean - 1e-12)


def test_pgd_deterministic_under_seed():
    model = small_model(seed=7)
    x = np.random.default_rng(8).random((4, 1, 4, 4), dtype=np.float32)
    y = np.array([0, 1, 2, 3])
    a = attacks.pgd_attack(model, x, y, 0.05, 5, 0.0125, 2, np.random.default_rng(42))
    b = attacks.pgd_attack(model, x, y, 0.05, 5, 0.0125, 2, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)


def test_monotone_threat_on_trained_model(toy_model, toy_gratings):
    _, test = toy_gratings
    x, y = test.images[:512], test.labels[:512]
    accs = {}
    for eps in (0.01, 0.03):
        adv = attacks.attack_dataset(toy_model, x, y, eps,
                                     attacks.AttackConfig(eps_max=0.03, iterations=10,
                                                          restarts=1),
                                     rng=np.random.default_rng(9))
        probs = nn.probabilities(toy_model, adv)
        accs[eps] = float((probs.argmax(axis=1) == y).mean())
    assert accs[0.03] <= accs[0.01]


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        attacks.AttackConfig(eps_max=0.0)
    with pytest.raises(ConfigError):
        attacks.AttackConfig(iterations=0)
    with pytest.raises(ConfigError):
        attacks.AttackConfig(step_divisor=-1)
