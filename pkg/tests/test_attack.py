import math
from dataclasses import replace

import numpy as np
import pytest

from pdattack import PDGD, PDPGD
from pdattack._validation import ConfigError
from pdattack.attack import (ADAM_EPS, AttackConfig, DualState, PerturbationState, adam_step,
                             attack_with_restarts, dual_update, pdgd_attack, pdpgd_attack,
                             random_init, schedule_lr)
from pdattack.models import LinearClassifier
from pdattack.prox import NormKind, norm_value

import oracles


def _linear(w, b):
    w = np.asarray(w, dtype=float)
    return LinearClassifier.from_weights([np.stack([w / 2, -w / 2]), np.array([b / 2, -b / 2])])


# -- configuration ------------------------------------------------------------------


@pytest.mark.parametrize("field, value", [("iterations", 0), ("restarts", 0), ("primal_lr", 0.0),
                                          ("dual_lr", -1.0), ("dual_init", 0.0), ("init_scale", -1.0),
                                          ("primal_decay_floor", 0.0), ("ema_decay", 1.0),
                                          ("finetune_iterations", -1), ("primal_schedule", "cosine")])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        AttackConfig(**{field: value})


def test_config_defaults():
    cfg = AttackConfig()
    assert (cfg.iterations, cfg.primal_lr, cfg.dual_lr, cfg.dual_init) == (500, 0.1, 0.1, 0.1)
    assert (cfg.primal_decay_floor, cfg.dual_decay_floor, cfg.finetune_iterations) == (0.01, 0.1, 500)
    assert cfg.norm == NormKind.parse("l2")


# -- dual player ---------------------------------------------------------------------


def test_dual_initial_state():
    s = DualState.initial(0.1)
    assert s.lambda1 / s.lambda2 == pytest.approx(0.1)
    assert s.lambda1 + s.lambda2 == pytest.approx(1.0, abs=1e-12)
    assert s.ema_value == pytest.approx(0.1)


def test_dual_violation_grows_lambda2_monotonically():
    s = DualState.initial(0.1)
    prev = s.lambda2
    for _ in range(200):
        s = dual_update(s, True, 0.1)
        assert s.lambda2 >= prev
        prev = s.lambda2
    assert s.lambda2 > 1 - 1e-8


def test_dual_satisfied_shrinks_lambda2_and_grows_ratio():
    s = DualState.initial(0.1)
    ratios = [s.ratio]
    for _ in range(200):
        s = dual_update(s, False, 0.1)
        assert s.lambda1 + s.lambda2 == pytest.approx(1.0, abs=1e-12)
        ratios.append(s.ratio)
    assert s.lambda2 < 1e-6
    assert np.all(np.diff(ratios) > 0)


def test_dual_zero_step_only_moves_ema():
    s = replace(DualState.initial(0.5), ema_value=3.0)
    t = dual_update(s, True, 0.0, ema_decay=0.9)
    assert (t.lambda1, t.lambda2, t.log_lambda) == (s.lambda1, s.lambda2, s.log_lambda)
    assert t.ema_value == pytest.approx(0.9 * 3.0 + 0.1 * 0.5)
    with pytest.raises(ValueError):
        dual_update(s, True, -0.1)


def test_dual_ratio_stays_finite_under_long_pressure():
    s = DualState.initial(0.1)
    for _ in range(10000):
        s = dual_update(s, False, 1.0)
    assert math.isfinite(s.ratio) and s.lambda2 > 0
    for _ in range(10000):
        s = dual_update(s, True, 1.0)
    assert s.ratio > 0


# -- Adam, schedules, init -------------------------------------------------------------


def test_adam_first_step_is_sign_like():
    g = np.array([0.3, -2.0, 0.0])
    out = adam_step(PerturbationState(np.zeros(3)), g, 0.1)
    np.testing.assert_allclose(out.r, -0.1 * g / (np.abs(g) + ADAM_EPS), atol=1e-12)
    assert out.step_count == 1


def test_adam_zero_gradient_keeps_r():
    st = PerturbationState(np.array([0.2, -0.1]))
    for _ in range(10):
        st = adam_step(st, np.zeros(2), 0.5)
    np.testing.assert_array_equal(st.r, [0.2, -0.1])


def test_adam_two_constant_steps_match_scalar_recurrence():
    g, lr = 0.7, 0.05
    st = PerturbationState(np.zeros(1))
    st = adam_step(adam_step(st, np.array([g]), lr), np.array([g]), lr)
    # hand recurrence: both bias-corrected steps equal g / (|g| + eps)
    m1, v1 = 0.1 * g, 0.001 * g * g
    step1 = (m1 / 0.1) / (math.sqrt(v1 / 0.001) + ADAM_EPS)
    m2, v2 = 0.9 * m1 + 0.1 * g, 0.999 * v1 + 0.001 * g * g
    step2 = (m2 / (1 - 0.81)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + ADAM_EPS)
    assert st.r[0] == pytest.approx(-lr * (step1 + step2), rel=1e-12)
    assert lr <= abs(st.r[0]) <= 2 * lr
    with pytest.raises(ValueError):
        adam_step(st, np.zeros(2), lr)


def test_schedules():
    assert schedule_lr(0.1, 1, 500) == 0.1
    assert schedule_lr(0.1, 500, 500, "exponential", 0.01) == pytest.approx(0.001)
    assert schedule_lr(1.0, 250, 499, "linear", 0.1) == pytest.approx(0.55)
    assert schedule_lr(0.3, 7, 9, "constant") == 0.3
    assert schedule_lr(0.3, 1, 1) == 0.3
    with pytest.raises(ValueError):
        schedule_lr(0.1, 1, 0)
    with pytest.raises(ValueError):
        schedule_lr(0.1, 5, 4)
    with pytest.raises(ValueError):
        schedule_lr(0.1, 1, 4, "cosine")


def test_random_init():
    np.testing.assert_array_equal(random_init(5, 0.0, 1), np.zeros(5))
    a = random_init(100000, 0.5, 3)
    assert np.all(np.abs(a) <= 0.5)
    assert abs(a.mean()) <= 3 * 0.5 / math.sqrt(3 * 1e5)
    np.testing.assert_array_equal(random_init(7, 0.5, 9), random_init(7, 0.5, 9))
    with pytest.raises(ValueError):
        random_init(3, -1.0, 0)


# -- attack runs -----------------------------------------------------------------------


@pytest.mark.parametrize("norm", ["l2", "linf", "l1"])
def test_pdpgd_reaches_linear_boundary(norm):
    rng = np.random.default_rng(7)
    tol = {"l2": 0.02, "linf": 0.05, "l1": 0.05}[norm]
    for i in range(5):
        model, x, m, w = oracles.linear_instance(rng)
        ref = oracles.analytic_distances(m, w)[norm]
        out = pdpgd_attack(model, x, 0, AttackConfig(norm=norm, seed=i))
        assert out.success
        assert ref * (1 - 1e-9) <= out.norm <= ref * (1 + tol)


def test_pdgd_reaches_linear_boundary():
    rng = np.random.default_rng(8)
    for i in range(5):
        model, x, m, w = oracles.linear_instance(rng)
        out = pdgd_attack(model, x, 0, AttackConfig(norm="l2", seed=i))
        assert out.success
        assert out.norm <= oracles.analytic_distances(m, w)["l2"] * 1.02


def test_pdgd_rejects_non_smooth_norms():
    model = _linear([1.0, 1.0], -0.5)
    for norm in ("l1", "linf", "l0"):
        with pytest.raises(ConfigError):
            pdgd_attack(model, [0.5, 0.5], 0, AttackConfig(norm=norm))
        with pytest.raises(ConfigError):
            attack_with_restarts(model, [0.5, 0.5], 0, AttackConfig(norm=norm), "pdgd")
    with pytest.raises(ConfigError):
        attack_with_restarts(model, [0.5, 0.5], 0, AttackConfig(), "fgsm")


def test_already_misclassified_returns_zero():
    model = _linear([1.0, 1.0], -0.5)
    x = np.array([0.1, 0.1])  # score -0.3 -> class 1
    for fn in (pdgd_attack, pdpgd_attack):
        out = fn(model, x, 0, AttackConfig())
        assert out.success and out.norm == 0.0
        np.testing.assert_array_equal(out.perturbation, np.zeros(2))


def test_tiny_budget_on_robust_point_fails():
    model = _linear([10.0, 10.0], -2.0)  # boundary far from x = (0.9, 0.9)
    x = np.array([0.9, 0.9])
    out = pdgd_attack(model, x, 0, AttackConfig(iterations=1, init_scale=0.0))
    assert not out.success and out.perturbation is None and out.norm == math.inf
    out = attack_with_restarts(model, x, 0, AttackConfig(iterations=1, finetune_iterations=1,
                                                         init_scale=0.0))
    assert not out.success


def test_unreachable_target_fails_cleanly():
    # class 0 wins everywhere in the unit box
    model = _linear([1.0, 1.0], 5.0)
    out = attack_with_restarts(model, [0.5, 0.5], 0, AttackConfig(iterations=50, finetune_iterations=20))
    assert not out.success and out.restart_index_of_best == -1


def test_input_validation():
    model = _linear([1.0, 1.0], -0.5)
    with pytest.raises(ValueError):
        pdpgd_attack(model, [0.5, 0.5, 0.5], 0, AttackConfig())
    with pytest.raises(ValueError):
        pdpgd_attack(model, [0.5, 1.5], 0, AttackConfig())
    with pytest.raises(ValueError):
        pdpgd_attack(model, [0.5, 0.5], 3, AttackConfig())


@pytest.mark.parametrize("norm", ["linf", "l2", "l1", "l0", "l1/2", "l2/3"])
def test_outcomes_are_feasible_on_mlp(norm, moons_data, moons_mlp):
    X, y = moons_data
    for i in range(3):
        out = attack_with_restarts(moons_mlp, X[i], y[i], AttackConfig(norm=norm, seed=i,
                                                                      iterations=150,
                                                                      finetune_iterations=50))
        assert out.success
        adv = X[i] + out.perturbation
        assert np.all((adv >= 0) & (adv <= 1))
        assert moons_mlp.predict(adv[None])[0] != y[i]
        assert out.norm == norm_value(norm, out.perturbation)


def test_restarts_and_finetune_never_regress(moons_data, moons_mlp):
    X, y = moons_data
    cfg = AttackConfig(norm="l2", iterations=100, finetune_iterations=100, restarts=3, seed=5)
    out = attack_with_restarts(moons_mlp, X[4], y[4], cfg)
    best = np.array(out.trace.best_norm)
    assert best.size == 400
    assert np.all(np.diff(best[np.isfinite(best)]) <= 0)
    assert out.norm == best[-1]
    assert out.iterations_used == 400


def test_more_restarts_never_worse(moons_data, moons_mlp):
    X, y = moons_data
    cfg = AttackConfig(norm="l2", iterations=100, finetune_iterations=0, seed=11)
    one = attack_with_restarts(moons_mlp, X[2], y[2], cfg)
    ten = attack_with_restarts(moons_mlp, X[2], y[2], replace(cfg, restarts=10))
    assert ten.norm <= one.norm


def test_r1_without_finetune_equals_single_run(moons_data, moons_mlp):
    X, y = moons_data
    cfg = AttackConfig(norm="l2", iterations=80, finetune_iterations=0, seed=3)
    single = pdpgd_attack(moons_mlp, X[1], y[1], cfg)
    with_restarts = attack_with_restarts(moons_mlp, X[1], y[1], cfg)
    assert with_restarts.iterations_used == 80
    assert with_restarts.norm == single.norm
    np.testing.assert_array_equal(with_restarts.perturbation, single.perturbation)
    again = attack_with_restarts(moons_mlp, X[1], y[1], cfg)
    np.testing.assert_array_equal(again.perturbation, with_restarts.perturbation)


def test_longer_constant_schedule_never_increases_best(moons_data, moons_mlp):
    X, y = moons_data
    base = AttackConfig(norm="l2", primal_schedule="constant", dual_schedule="constant", seed=2)
    short = pdpgd_attack(moons_mlp, X[6], y[6], replace(base, iterations=60))
    long = pdpgd_attack(moons_mlp, X[6], y[6], replace(base, iterations=200))
    np.testing.assert_array_equal(long.trace.best_norm[:60], short.trace.best_norm)
    assert long.norm <= short.norm


def test_group_l0_attack_clears_or_keeps_whole_groups():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 12))
    model = LinearClassifier.from_weights([W, np.zeros(3)])
    kind = NormKind.parse("group-l0", 3)
    for i in range(5):
        x = rng.uniform(0.1, 0.9, size=12)
        y = int(np.argmax(model.logits(x)))
        out = attack_with_restarts(model, x, y, AttackConfig(norm=kind, seed=i, iterations=200,
                                                            finetune_iterations=100))
        if out.success:
            g = out.perturbation.reshape(4, 3) != 0
            assert np.all(g.all(axis=1) | ~g.any(axis=1))


def test_estimators(moons_data, moons_mlp):
    X, y = moons_data
    att = PDPGD(moons_mlp, norm="linf", iterations=100, finetune_iterations=50, random_state=1)
    adv = att.generate(X[:4], y[:4])
    assert att.success_rate() == 1.0
    assert adv.shape == (4, 2)
    np.testing.assert_array_equal(moons_mlp.predict(adv) != y[:4], att.success_)
    np.testing.assert_allclose(att.norms_, np.abs(att.perturbations_).max(axis=1))
    att2 = PDGD(moons_mlp, iterations=100, finetune_iterations=0, random_state=1).fit(X[:3], y[:3])
    assert att2.success_.all()
    assert PDPGD(moons_mlp).get_params()["norm"] == "l2"
    with pytest.raises(ValueError):
        PDPGD().fit(X[:2], y[:2])
    with pytest.raises(ValueError):
        PDPGD(moons_mlp).fit(X[:2], y[:3])
