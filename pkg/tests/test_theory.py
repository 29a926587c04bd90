from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cyclespace import theory
from cyclespace.dcsim import build_h
from cyclespace.graph import build_graph, minimum_cycle_basis

from conftest import make_case


def triangle_h():
    return np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])  # rank 2, null (1, 1, 1)


def test_closed_form_examples():
    assert theory.egen_closed_form(0.1, 0, 40, 1) == pytest.approx(0.01)
    assert theory.egen_closed_form(0.1, 13, 40, 14) == pytest.approx(0.015)
    assert theory.cycle_egen(3, 40, 0.02) == pytest.approx(4.216e-4, rel=1e-4)
    assert theory.cycle_basis_egen([3], 40, 0.02) == pytest.approx(4.216e-4, rel=1e-4)
    assert theory.cycle_basis_egen([3, 3], 40, 1.0) == pytest.approx(2 * (1 + 2 / 37))
    assert theory.cycle_basis_egen([3, 4], 40, 1.0) == pytest.approx(2 + 2 / 37 + 3 / 36)
    assert theory.egen_closed_form(0.1, 4, 10, 5) == pytest.approx(0.018)
    assert theory.egen_closed_form(0.1, 2, 10, 3) == pytest.approx(0.01 * (1 + 2 / 7))
    assert theory.cycle_egen(4, 100, 0.02) == pytest.approx(4e-4 * (1 + 3 / 96))
    assert theory.cycle_egen(4, 100, 0.02) == pytest.approx(4.125e-4)
    # two triangles beat a triangle plus a square
    assert theory.cycle_basis_egen([3, 3], 50, 0.1) < theory.cycle_basis_egen([3, 4], 50, 0.1)
    with pytest.raises(ValueError):
        theory.egen_closed_form(0.1, 4, 5, 5)
    with pytest.raises(ValueError):
        theory.cycle_basis_egen([3, 8], 8, 0.1)


@given(st.floats(1e-3, 10), st.integers(1, 50), st.integers(1, 500))
def test_closed_form_monotone(sigma, rank, extra):
    n = rank + 1
    t_o = n + extra
    e = theory.egen_closed_form(sigma, rank, t_o, n)
    assert e > sigma**2
    assert theory.egen_closed_form(sigma, rank, t_o + 1, n) < e
    assert theory.egen_closed_form(2 * sigma, rank, t_o, n) == pytest.approx(4 * e)
    if rank > 1:
        assert theory.egen_closed_form(sigma, rank - 1, t_o, n) < e


@given(st.lists(st.integers(3, 12), min_size=1, max_size=8))
def test_basis_egen_depends_on_lengths_only(lengths):
    a = theory.cycle_basis_egen(lengths, 40, 0.05)
    assert a == pytest.approx(theory.cycle_basis_egen(sorted(lengths)[::-1], 40, 0.05))
    longer = [lengths[0] + 1, *lengths[1:]]
    assert theory.cycle_basis_egen(longer, 40, 0.05) > a


def test_monte_carlo_reproducible_and_parallel(ieee14):
    cfg = theory.MonteCarloConfig(trials=6, t_star=200, sigmas=(0.05, 0.5), seed=3)
    a = theory.egen_monte_carlo(build_h(ieee14), cfg, t_o=60)
    b = theory.egen_monte_carlo(build_h(ieee14), cfg, t_o=60)
    with ThreadPoolExecutor(3) as ex:
        c = theory.egen_monte_carlo(build_h(ieee14), cfg, t_o=60, executor=ex)
    assert a == b == c
    assert a[0].rank_h == 13 and a[0].n == 14
    one = theory.egen_monte_carlo(build_h(ieee14), theory.MonteCarloConfig(trials=1, sigmas=(0.1,)), 60)
    assert one[0].std_err == 0.0


def test_monte_carlo_rejects_tree():
    tree = make_case([(1, 2), (2, 3), (2, 4)], [0.1, 0.2, 0.3], [0, 0.2, 0.2, 0.1])
    with pytest.raises(ValueError, match="nullity"):
        theory.egen_monte_carlo(build_h(tree), theory.MonteCarloConfig(trials=2), 20)


def test_monte_carlo_ieee14_at_twice_m(ieee14):
    est = theory.egen_monte_carlo(build_h(ieee14), theory.MonteCarloConfig(), t_o=40)
    assert [e.sigma for e in est] == [0.01, 0.02, 0.05, 0.1, 0.5, 1.0]
    assert all(e.rel_dev < 0.10 for e in est)


def test_monte_carlo_matches_closed_form_triangle():
    cfg = theory.MonteCarloConfig(trials=400, t_star=500, sigmas=(0.05,), seed=1)
    est = theory.egen_monte_carlo(triangle_h(), cfg, t_o=30)[0]
    assert abs(est.e_gen_empirical - est.e_gen_closed) <= 3 * est.std_err + 0.02 * est.e_gen_closed


def test_monte_carlo_converges(ieee14):
    h = build_h(ieee14)
    cfg = dict(t_star=300, sigmas=(0.1,), seed=5)
    small = theory.egen_monte_carlo(h, theory.MonteCarloConfig(trials=25, **cfg), 100)[0]
    large = theory.egen_monte_carlo(h, theory.MonteCarloConfig(trials=400, **cfg), 100)[0]
    assert large.std_err < small.std_err
    assert large.rel_dev <= small.rel_dev + 2 * small.std_err / small.e_gen_closed


def test_first_order_err_properties(rng):
    H = triangle_h()
    n_true = np.ones(3) / np.sqrt(3)
    X = rng.standard_normal((2, 40))
    assert np.allclose(theory.first_order_err(H, X, np.zeros((3, 40)), n_true), 0.0)
    err = theory.first_order_err(H, X, 0.1 * rng.standard_normal((3, 40)), n_true)
    assert abs(n_true @ err) <= 1e-10
    with pytest.raises(ValueError):
        theory.first_order_err(H, X, np.zeros((3, 39)), n_true)


def test_first_order_err_matches_numeric_fit(rng):
    H = triangle_h()
    n_true = np.ones(3) / np.sqrt(3)
    X = rng.standard_normal((2, 40))
    E = 1e-3 * rng.standard_normal((3, 40))
    err = theory.first_order_err(H, X, E, n_true)
    n_hat = theory.smallest_left_singular(H @ X + E)
    approx = (n_true + err) / np.linalg.norm(n_true + err)
    n_hat = n_hat if n_hat @ approx > 0 else -n_hat
    assert np.linalg.norm(approx - n_hat) <= 0.05 * np.linalg.norm(err) + 1e-8


def test_covariance_matches_closed_form():
    chk = theory.err_covariance_check(triangle_h(), 40, 0.01, 2000, seed=2)
    assert chk.rel_err <= 0.15
    assert np.all(np.abs(chk.mean) <= 3 * chk.std / np.sqrt(chk.trials))
    double = theory.err_covariance_check(triangle_h(), 40, 0.02, 2000, seed=2)
    ratio = np.linalg.norm(double.empirical) / np.linalg.norm(chk.empirical)
    assert ratio == pytest.approx(4.0, rel=0.1)


def test_covariance_on_grid(ieee14):
    chk = theory.err_covariance_check(build_h(ieee14), 200, 0.02, 1000, seed=0)
    assert chk.rel_err <= 0.15


def test_error_decomposition():
    # E_gen - sigma^2 ~ E||Zbar*^T err||^2 / T* at small sigma
    H, sigma, t_o, t_star, trials = triangle_h(), 1e-3, 30, 400, 300
    n_true = np.ones(3) / np.sqrt(3)
    gen, lin = [], []
    for t in range(trials):
        r = np.random.default_rng([7, t])
        X = r.standard_normal((2, t_o + t_star))
        E = sigma * r.standard_normal((3, t_o + t_star))
        Z = H @ X + E
        n_hat = theory.smallest_left_singular(Z[:, :t_o])
        n_hat = n_hat if n_hat @ n_true > 0 else -n_hat
        gen.append(np.sum((n_hat @ Z[:, t_o:]) ** 2) / t_star)
        err = theory.first_order_err(H, X[:, :t_o], E[:, :t_o], n_true)
        lin.append(np.sum((err @ (H @ X[:, t_o:])) ** 2) / t_star)
    assert np.mean(gen) - sigma**2 == pytest.approx(np.mean(lin), rel=0.1)


def test_mcb_optimality(ieee14):
    rows = theory.mcb_optimality_experiment(ieee14, t_o=60, sigma=0.05, trials=10, n_random=15, t_star=200)
    mcb, rest = rows[0], rows[1:]
    assert mcb.kind == "minimum" and mcb.total_length == 27
    assert all(mcb.closed <= r.closed for r in rest)
    assert all(mcb.empirical <= r.empirical + 2 * r.std_err for r in rest)
    for r in rest:
        if sorted(r.lengths) == sorted(mcb.lengths):
            assert r.closed == pytest.approx(mcb.closed)
    again = theory.mcb_optimality_experiment(ieee14, t_o=60, sigma=0.05, trials=10, n_random=15, t_star=200)
    assert rows == again


def test_csv_outputs(ieee14):
    cfg = theory.MonteCarloConfig(trials=2, t_star=50, sigmas=(0.1,))
    text = theory.estimates_to_csv(theory.egen_monte_carlo(build_h(ieee14), cfg, 40), header="x")
    lines = text.splitlines()
    assert lines[0] == "# x" and lines[1].startswith("sigma,t_o,rank") and len(lines) == 3
    rows = theory.mcb_optimality_experiment(ieee14, 40, 0.1, 2, n_random=2, t_star=50)
    assert len(theory.basis_rows_to_csv(rows).splitlines()) == 4
    assert minimum_cycle_basis(build_graph(ieee14)).lengths == list(rows[0].lengths)
