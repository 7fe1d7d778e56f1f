"""Attack contracts: budget, clamp, best-iterate, degenerate cases."""

import numpy as np
import pytest

from proxylab.attacks import AttackConfig, adaptive_attack, fgsm_attack, pgd_attack
from proxylab.errors import ConfigError, DataError
from proxylab.losses import ce_per_sample

from conftest import build_proxy, build_target

EPS = 1.0 / 255.0


@pytest.fixture(scope="module")
def big_batch():
    rng = np.random.default_rng(777)
    x = rng.uniform(0.0, 1.0, size=(1200, 16))
    y = rng.integers(0, 4, size=1200)
    return x, y


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=-0.1, steps=1)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=1.5, steps=1)  # wider than the value range
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, steps=-1)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, steps=1, step_size=0.0)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, steps=1, loss="hinge")
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, steps=1, clamp_min=1.0, clamp_max=0.0)


def test_default_step_size():
    cfg = AttackConfig(epsilon=0.1, steps=4)
    assert cfg.resolved_step_size == pytest.approx(2.5 * 0.1 / 4)
    cfg = AttackConfig(epsilon=0.1, steps=2, step_size=0.03)
    assert cfg.resolved_step_size == 0.03
    assert AttackConfig(epsilon=0.1, steps=0).resolved_step_size == 0.0


def test_budget_and_clamp(big_batch):
    model = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=10)
    x_adv = pgd_attack(model, x, y, cfg).data
    assert x_adv.shape == x.shape
    assert np.abs(x_adv - x).max() <= EPS + 1e-9
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


def test_best_iterate_never_below_start(big_batch):
    model = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=10)
    x_adv = pgd_attack(model, x, y, cfg).data
    loss_clean = ce_per_sample(model.similarity_logits(x).data, y)
    loss_adv = ce_per_sample(model.similarity_logits(x_adv).data, y)
    assert (loss_adv >= loss_clean - 1e-12).all()


def test_epsilon_zero_is_identity(big_batch):
    model = build_target()
    x, y = big_batch
    x_adv = pgd_attack(model, x, y, AttackConfig(epsilon=0.0, steps=10)).data
    assert np.array_equal(x_adv, x)


def test_steps_zero_returns_clean(big_batch):
    model = build_target()
    x, y = big_batch
    x_adv = pgd_attack(model, x, y, AttackConfig(epsilon=EPS, steps=0)).data
    assert np.array_equal(x_adv, x)


def test_pgd1_equals_fgsm(big_batch):
    model = build_target()
    x, y = big_batch
    explicit = pgd_attack(model, x, y,
                          AttackConfig(epsilon=EPS, steps=1, step_size=EPS)).data
    via_fgsm = fgsm_attack(model, x, y, EPS).data
    assert np.array_equal(explicit, via_fgsm)
    # the default oversized step projects onto the same ball surface
    default_step = pgd_attack(model, x, y, AttackConfig(epsilon=EPS, steps=1)).data
    assert np.array_equal(default_step, via_fgsm)


def test_attack_is_deterministic(big_batch):
    model = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=5)
    a = pgd_attack(model, x, y, cfg).data
    b = pgd_attack(model, x, y, cfg).data
    assert np.array_equal(a, b)


def test_attack_does_not_mutate_input(big_batch):
    model = build_target()
    x, y = big_batch
    before = x.copy()
    pgd_attack(model, x, y, AttackConfig(epsilon=EPS, steps=3))
    assert np.array_equal(x, before)


def test_restarts_stay_in_ball_and_replay(big_batch):
    model = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=3, restarts=2, restart_seed=5)
    a = pgd_attack(model, x[:100], y[:100], cfg).data
    b = pgd_attack(model, x[:100], y[:100], cfg).data
    assert np.array_equal(a, b)
    assert np.abs(a - x[:100]).max() <= EPS + 1e-9
    # restarts only ever improve the kept per-sample loss
    base = pgd_attack(model, x[:100], y[:100],
                      AttackConfig(epsilon=EPS, steps=3)).data
    l_base = ce_per_sample(model.similarity_logits(base).data, y[:100])
    l_rest = ce_per_sample(model.similarity_logits(a).data, y[:100])
    assert (l_rest >= l_base - 1e-12).all()


def test_input_validation(big_batch):
    model = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=1)
    with pytest.raises(DataError):
        pgd_attack(model, x[:4], y[:5], cfg)
    with pytest.raises(DataError):
        pgd_attack(model, x.reshape(-1), y, cfg)
    bad = x[:4].copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        pgd_attack(model, bad, y[:4], cfg)


def test_adaptive_attack_contracts(big_batch):
    target = build_target()
    proxy = build_proxy()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=5)
    x_adv = adaptive_attack(target, proxy, x[:200], y[:200], cfg).data
    assert np.abs(x_adv - x[:200]).max() <= EPS + 1e-9
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0
    # summed objective never drops below its clean value on kept iterates
    both = (ce_per_sample(target.similarity_logits(x_adv).data, y[:200])
            + ce_per_sample(proxy.similarity_logits(x_adv).data, y[:200]))
    both_clean = (ce_per_sample(target.similarity_logits(x[:200]).data, y[:200])
                  + ce_per_sample(proxy.similarity_logits(x[:200]).data, y[:200]))
    assert (both >= both_clean - 1e-12).all()


def test_adaptive_attack_self_pair_matches_doubled_loss(big_batch):
    # against two copies of one model the gradient direction is unchanged,
    # so the iterates coincide with single-model pgd
    target = build_target()
    x, y = big_batch
    cfg = AttackConfig(epsilon=EPS, steps=4)
    a = adaptive_attack(target, target, x[:100], y[:100], cfg).data
    b = pgd_attack(target, x[:100], y[:100], cfg).data
    assert np.array_equal(a, b)


def test_adaptive_attack_mismatch_rejected():
    from proxylab.models import EncoderSpec, init_model
    target = build_target()
    other = init_model(EncoderSpec(input_dim=16, hidden_dims=(4,), embed_dim=3),
                       EncoderSpec(input_dim=5, hidden_dims=(4,), embed_dim=3),
                       5, seed=2)
    x = np.zeros((2, 16))
    with pytest.raises(ConfigError):
        adaptive_attack(target, other, x, np.array([0, 1]),
                        AttackConfig(epsilon=EPS, steps=1))
