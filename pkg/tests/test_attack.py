import numpy as np
import pytest

from cyclespace.attack import (
    AttackScenario,
    ae_residual_attack,
    apply_attack,
    lowrank_svd_attack,
    model_based_fdia,
    pca_blind_attack,
    rank_by_gap,
)
from cyclespace.dcsim import NoiseModel, build_h, generate_measurements, isotropic_states
from cyclespace.estimation import WlsEstimator, chi2_threshold

WINDOW = (100, 200)


@pytest.fixture(scope="module")
def series14(flows14):
    h, _, noisy = flows14
    return h, noisy.segment(2000, 2300), NoiseModel.homoscedastic(0.02, h.m)


def assert_outside_untouched(before, after, window):
    a, b = window
    np.testing.assert_array_equal(before.z[:, :a], after.z[:, :a])
    np.testing.assert_array_equal(before.z[:, b:], after.z[:, b:])
    assert after.labels[a:b].all() and not after.labels[:a].any() and not after.labels[b:].any()


def test_model_based_invariants(series14, rng):
    h, s, noise = series14
    est = WlsEstimator(h, noise)
    u = rng.normal(size=h.n_states)
    att = model_based_fdia(s, h, AttackScenario("model_based", 2.0, WINDOW, u=u))
    assert_outside_untouched(s, att, WINDOW)
    w = slice(*WINDOW)
    base, new = est.lnr(s.z[:, w]), est.lnr(att.z[:, w])
    assert np.max(np.abs(new - base) / np.maximum(base, 1.0)) <= 1e-8
    shift = est.estimate(att.z[:, w]).x_hat - est.estimate(s.z[:, w]).x_hat
    np.testing.assert_allclose(shift, 2.0 * u[:, None] * np.ones((1, 100)), atol=1e-8)
    zero = model_based_fdia(s, h, AttackScenario("model_based", 1.0, WINDOW, u=np.zeros(h.n_states)))
    np.testing.assert_array_equal(zero.z, s.z)


def test_window_checks(series14):
    h, s, noise = series14
    with pytest.raises(ValueError):
        model_based_fdia(s, h, AttackScenario("model_based", 1.0, (250, 400), u=np.ones(h.n_states)))
    with pytest.raises(ValueError):
        AttackScenario("model_based", 1.0, (5, 2))
    with pytest.raises(ValueError):
        AttackScenario("ae_blind", -1.0, WINDOW)
    with pytest.raises(ValueError):
        AttackScenario("ae_blind", 1.0, WINDOW, gamma=1.0)
    with pytest.raises(ValueError):
        AttackScenario("gan", 1.0, WINDOW)
    with pytest.raises(ValueError):
        model_based_fdia(s, h, AttackScenario("ae_blind", 1.0, WINDOW))


def test_scenario_json_round_trip():
    sc = AttackScenario("model_based", 0.5, (3, 9), 0.2, 11, np.array([1.0, -2.0]))
    back = AttackScenario.from_json(sc.to_json())
    assert (back.family, back.kappa, back.window, back.gamma, back.seed) == ("model_based", 0.5, (3, 9), 0.2, 11)
    np.testing.assert_array_equal(back.u, sc.u)


def test_ae_attack_zero_kappa_and_linearity(series14, ae14):
    h, s, noise = series14
    zero = ae_residual_attack(s, ae14, AttackScenario("ae_blind", 0.0, WINDOW), noise)
    np.testing.assert_array_equal(zero.z, s.z)
    a1 = ae_residual_attack(s, ae14, AttackScenario("ae_blind", 0.7, WINDOW, seed=3), noise)
    a2 = ae_residual_attack(s, ae14, AttackScenario("ae_blind", 1.4, WINDOW, seed=3), noise)
    assert_outside_untouched(s, a1, WINDOW)
    d1, d2 = a1.z - s.z, a2.z - s.z
    assert np.linalg.norm(d2 - 2 * d1) <= 1e-6 * np.linalg.norm(d2)


def test_ae_attack_is_mostly_off_manifold(series14, ae14):
    h, s, noise = series14
    att = ae_residual_attack(s, ae14, AttackScenario("ae_blind", 1.0, WINDOW), noise)
    d = (att.z - s.z)[:, slice(*WINDOW)]
    P = h.matrix @ np.linalg.pinv(h.matrix)
    frac = np.linalg.norm(d - P @ d, axis=0) / np.linalg.norm(d, axis=0)
    assert frac.mean() >= 0.5


def test_ae_attack_small_kappa_stays_under_bdd(series14, ae14):
    # the residual is amplified null-space noise, so the LNR grows like (1 + kappa)^2;
    # the bypass only holds for small kappa
    h, s, noise = series14
    est = WlsEstimator(h, noise)
    tau = chi2_threshold(h.m - h.n_states, 0.05)
    w = slice(*WINDOW)
    att = ae_residual_attack(s, ae14, AttackScenario("ae_blind", 0.05, WINDOW), noise)
    assert (est.lnr(att.z[:, w]).mean() - est.lnr(s.z[:, w]).mean()) < 0.1 * tau


def test_ae_attack_dimension_mismatch(series14, ae14):
    h, s, noise = series14
    with pytest.raises(ValueError):
        ae_residual_attack(s.rows(range(10)), ae14, AttackScenario("ae_blind", 1.0, WINDOW), noise)


@pytest.fixture(scope="module")
def iso14(flows14):
    """Isotropic-state history (excites all of Col(H)), noise-free and noisy."""
    h = flows14[0]
    X = isotropic_states(h.n_states, 400, seed=2)
    clean = generate_measurements(h, X, NoiseModel.homoscedastic(1e-300, h.m), seed=2).z
    noisy = generate_measurements(h, X, NoiseModel.homoscedastic(0.02, h.m), seed=2).z
    return clean, noisy


@pytest.mark.parametrize("family", ["pca_blind", "lowrank_blind"])
def test_subspace_attacks_noise_free_history_bypass_bdd(series14, iso14, family):
    h, s, noise = series14
    est = WlsEstimator(h, noise)
    att = apply_attack(s, AttackScenario(family, 1.0, WINDOW, seed=1), history=iso14[0],
                       n_states=h.n_states)
    assert_outside_untouched(s, att, WINDOW)
    np.testing.assert_allclose(est.lnr(att.z), est.lnr(s.z), rtol=1e-6, atol=1e-9)
    zero = apply_attack(s, AttackScenario(family, 0.0, WINDOW), history=iso14[0], n_states=h.n_states)
    np.testing.assert_array_equal(zero.z, s.z)


def test_pca_attack_noisy_history_leaks(series14, iso14):
    h, s, noise = series14
    est = WlsEstimator(h, noise)
    w = slice(*WINDOW)
    att = pca_blind_attack(s, iso14[1], AttackScenario("pca_blind", 1.0, WINDOW, seed=1), h.n_states)
    inc = est.lnr(att.z[:, w]).mean() - est.lnr(s.z[:, w]).mean()
    assert inc > 1e-3 * chi2_threshold(h.m - h.n_states, 0.05)
    assert inc < 10 * chi2_threshold(h.m - h.n_states, 0.05)
    with pytest.raises(ValueError):
        pca_blind_attack(s, iso14[1][:, :5], AttackScenario("pca_blind", 1.0, WINDOW), h.n_states)


def test_subspace_attack_is_linear_in_kappa(series14, iso14):
    h, s, _ = series14
    a = lowrank_svd_attack(s, iso14[1], AttackScenario("lowrank_blind", 1.0, WINDOW, seed=4))
    b = lowrank_svd_attack(s, iso14[1], AttackScenario("lowrank_blind", 2.0, WINDOW, seed=4))
    np.testing.assert_allclose(b.z - s.z, 2 * (a.z - s.z), rtol=1e-6, atol=1e-12)
    d = (a.z - s.z)[:, slice(*WINDOW)]
    np.testing.assert_allclose(d, d[:, :1].repeat(100, axis=1))  # one direction per window


def test_rank_by_gap(flows14, iso14, rng):
    h = flows14[0]
    assert rank_by_gap(iso14[0]) == h.n_states
    assert rank_by_gap(np.outer(rng.normal(size=8), rng.normal(size=30))) == 1
