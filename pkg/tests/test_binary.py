import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from batchot.binary import (QuadSpec, binary_euler_error, binary_euler_map,
                            binary_mean, binary_one_step_exact,
                            binom_tail_table, contour_grid, log_q_k,
                            log_slope_product, q_k, slope_product)


def test_tail_table_small():
    assert binom_tail_table(1).b.tolist() == [0.5]
    assert binom_tail_table(2).b.tolist() == [0.75, 0.25]


def test_tail_table_structure():
    for k in (5, 64, 200):
        t = binom_tail_table(k)
        assert t.b[0] == pytest.approx(1 - 2.0**-k, rel=1e-14)
        assert t.b[-1] == pytest.approx(2.0**-k, rel=1e-12)
        assert np.all(np.diff(t.b) < 0)


def test_q1_is_half():
    t = binom_tail_table(1)
    assert np.allclose(q_k(np.linspace(-5, 5, 11), 1, t), 0.5)


def test_q_at_zero_is_half():
    for k in (2, 8, 33):
        assert q_k(0.0, k) == pytest.approx(0.5, abs=1e-12)


def test_q_large_argument_limit():
    # u -> 1 collapses the mixture onto its last term B_k = 2^-k
    for k in (3, 8, 20):
        assert q_k(40.0, k) == pytest.approx(2.0**-k, rel=1e-10)


def test_q_oddness_grid():
    t = binom_tail_table(12)
    x = np.linspace(-6, 6, 41)
    assert np.max(np.abs(q_k(x, 12, t) + q_k(-x, 12, t) - 1)) < 1e-12


def test_binary_mean_k1_tanh_identity():
    for t in (0.1, 0.5, 0.9):
        for z in (-1.2, 0.3, 2.0):
            assert binary_mean(t, z, 1) == pytest.approx(
                np.tanh(t * z / (1 - t) ** 2), abs=1e-12)


def test_binary_mean_odd_in_z():
    tab = binom_tail_table(6)
    zs = np.linspace(-3, 3, 13)
    m = binary_mean(0.4, zs, 6, tab)
    assert np.max(np.abs(m + m[::-1])) < 1e-12


def test_one_step_exact_small():
    assert binary_one_step_exact(1) == 1.0
    assert binary_one_step_exact(2) == 0.75


def test_one_step_asymptote():
    k = 10_000
    ratio = binary_one_step_exact(k) * np.sqrt(np.pi * k) / 2.0
    assert 0.99 <= ratio <= 1.01


def test_euler_error_routes_agree():
    for k in (1, 2, 8, 64):
        assert binary_euler_error(1, k) == pytest.approx(
            binary_one_step_exact(k), abs=1e-8)


def test_euler_error_two_steps_tanh_oracle():
    # hand iteration: f_{1,2}(x) = x/2 (the t=0 mean vanishes), then
    # f_{2,2}(x) = tanh(2 * x/2) = tanh(x)
    ref = 2 * quad(lambda x: (1 - np.tanh(x)) * norm.pdf(x), 0, np.inf)[0]
    assert binary_euler_error(2, 1) == pytest.approx(ref, abs=1e-8)
    x = np.linspace(-3, 3, 7)
    assert np.allclose(binary_euler_map(2, 1, x), np.tanh(x), atol=1e-14)


def test_euler_map_structure():
    x = np.linspace(0.05, 2.5, 30)
    for n in (3, 8, 20):
        f_pos = binary_euler_map(n, 1, x)
        f_neg = binary_euler_map(n, 1, -x)
        assert np.max(np.abs(f_pos + f_neg)) < 1e-12  # odd
        assert np.all(np.abs(f_pos) <= 1 + 1e-12)     # terminal range
        assert np.all(np.diff(f_pos) > 0)             # increasing on x > 0
        assert np.all(np.diff(f_pos, 2) < 1e-9)       # concave on x > 0


def test_slope_product_small():
    assert slope_product(2) == pytest.approx(1.0, rel=1e-14)
    # first factor is n(n-1) for every n
    for n in (3, 7, 20):
        terms = log_slope_product(n) - log_slope_product_tail(n)
        assert terms == pytest.approx(np.log(n * (n - 1)), rel=1e-12)


def log_slope_product_tail(n):
    r = np.arange(2, n + 1, dtype=float)
    return float(np.log1p((n * n - n * r - r * r) / r**3).sum())


def test_slope_product_limit():
    rate = 2 * np.pi / np.sqrt(3)
    ratios = [log_slope_product(n) / n ** (2 / 3) for n in (32, 64, 128, 256)]
    assert all(np.diff(ratios) > 0)
    assert abs(ratios[-1] - rate) <= 0.25 * rate


def test_error_bracket_lower_bound():
    for n in (16, 40, 100, 256):
        lower = norm.pdf(1.0) / (2.0 * slope_product(n))
        assert lower <= binary_euler_error(n, 1)


def test_error_monotone_decay():
    errs_n = [binary_euler_error(n, 1) for n in (1, 2, 4, 8, 16, 32, 64)]
    assert np.all(np.diff(errs_n) < 0)
    errs_k = [binary_one_step_exact(k) for k in (1, 2, 4, 8, 32, 128, 512)]
    assert np.all(np.diff(errs_k) < 0)


def test_contour_grid_consistency():
    tables = {}
    grid = contour_grid([1, 5, 10], [1, 4, 16], tables)
    assert grid.shape == (3, 3)
    # row n = 1 reproduces the exact one-step values
    for jc, k in enumerate([1, 4, 16]):
        assert grid[0, jc] == pytest.approx(binary_one_step_exact(k), abs=1e-8)
    # column k = 1 reproduces the independent-coupling curve
    for jr, n in enumerate([1, 5, 10]):
        assert grid[jr, 0] == pytest.approx(binary_euler_error(n, 1), rel=1e-10)


def test_quadspec_override():
    fine = QuadSpec(panel_width=0.25, gl_order=16)
    assert binary_euler_error(6, 3, quad=fine) == pytest.approx(
        binary_euler_error(6, 3), rel=1e-9)


def test_bad_inputs():
    with pytest.raises(ValueError):
        binom_tail_table(0)
    with pytest.raises(ValueError):
        binary_euler_error(0, 1)
    with pytest.raises(ValueError):
        slope_product(1)
    with pytest.raises(ValueError):
        binary_mean(1.0, 0.0, 2)
