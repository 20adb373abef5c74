import itertools
import math

import numpy as np
import pytest
import sympy

from srk.core.driving import (DrivingSpec, coarsen, derive_seed, generate_path, increments_at_level, make_rng,
                              mu_grid, mu_moment, strat_power_integral_estimate, strat_power_integral_exact,
                              weak_increment, weak_increment_law, weak_increments, weak_moment,
                              wiener_increments_at_level)
from srk.core.errors import ValidationError

SPEC = DrivingSpec(lam=1.0, sigma=0.8, t0=0.0, T=1.0)


def test_path_is_deterministic():
    a = generate_path(SPEC, 8, seed=7)
    b = generate_path(SPEC, 8, seed=7)
    c = generate_path(SPEC, 8, seed=8)
    np.testing.assert_array_equal(a.dW_fine, b.dW_fine)
    assert not np.array_equal(a.dW_fine, c.dW_fine)
    assert a.n_fine == 256
    assert a.h_min == 1.0 / 256


def test_level_zero_path():
    path = generate_path(SPEC, 0, seed=1)
    assert path.dW_fine.shape == (1,)
    assert increments_at_level(path, 0).shape == (1,)
    assert path.wiener_total() == path.dW_fine[0]


def test_invalid_levels():
    with pytest.raises(ValidationError):
        generate_path(SPEC, -1, seed=1)
    with pytest.raises(ValidationError):
        generate_path(SPEC, 31, seed=1)
    path = generate_path(SPEC, 3, seed=1)
    with pytest.raises(ValidationError):
        increments_at_level(path, 4)


def test_spec_requires_positive_length():
    with pytest.raises(ValidationError):
        DrivingSpec(lam=1.0, sigma=1.0, t0=1.0, T=1.0)


def test_fine_increments_are_standard_normal():
    spec = DrivingSpec(lam=0.0, sigma=1.0, t0=0.0, T=2.0 ** 7)
    path = generate_path(spec, 17, seed=123)
    z = path.dW_fine / math.sqrt(path.h_min)
    n = z.size
    assert path.h_min == 2.0 ** -10
    assert abs(z.mean()) < 4.0 / math.sqrt(n)
    assert abs(z.var() - 1.0) < 4.0 * math.sqrt(2.0 / n)


def test_coarsening_is_exact():
    path = generate_path(SPEC, 10, seed=3)
    level4 = wiener_increments_at_level(path, 4)
    np.testing.assert_array_equal(coarsen(level4, 4), wiener_increments_at_level(path, 0))
    np.testing.assert_array_equal(coarsen(path.dW_fine, 6), level4)
    # каждая крупная ячейка - сумма своих мелких
    fine = path.dW_fine.reshape(16, 64)
    np.testing.assert_allclose(level4, fine.sum(axis=1), rtol=0, atol=1e-13)


def test_batched_coarsening_matches_single_paths():
    paths = [generate_path(SPEC, 6, seed=s) for s in range(4)]
    stacked = coarsen(np.stack([p.dW_fine for p in paths]), 3)
    for row, path in zip(stacked, paths):
        np.testing.assert_array_equal(row, wiener_increments_at_level(path, 3))


def test_zero_noise_increments():
    spec = DrivingSpec(lam=2.0, sigma=0.0, t0=0.0, T=1.0)
    path = generate_path(spec, 5, seed=9)
    np.testing.assert_array_equal(increments_at_level(path, 3), np.full(8, 2.0 / 8))


def test_mu_grid_telescopes():
    path = generate_path(SPEC, 9, seed=11)
    for level in (0, 4, 9):
        grid = mu_grid(path, level)
        assert grid[0] == 0.0
        assert grid.shape == (2 ** level + 1,)
        assert abs(grid[-1] - path.mu_total()) < 1e-12


def test_base_cells():
    spec = DrivingSpec(lam=1.0, sigma=1.0, t0=0.0, T=6.0)
    path = generate_path(spec, 2, seed=5, base_cells=3)
    assert path.n_fine == 12
    assert path.step_size(0) == 2.0
    assert increments_at_level(path, 0).shape == (3,)
    assert abs(increments_at_level(path, 1).sum() - path.mu_total()) < 1e-12


def test_strat_integral_low_powers_are_exact():
    path = generate_path(SPEC, 8, seed=21)
    for level in (2, 8):
        assert abs(strat_power_integral_estimate(path, 0, level) - strat_power_integral_exact(path, 0)) < 1e-12
        assert abs(strat_power_integral_estimate(path, 1, level) - strat_power_integral_exact(path, 1)) < 1e-12


def test_strat_integral_converges_for_cubic():
    paths = [generate_path(SPEC, 12, seed=s) for s in range(100)]

    def mean_error(level):
        return np.mean([abs(strat_power_integral_estimate(p, 2, level) - strat_power_integral_exact(p, 2))
                        for p in paths])

    errors = [mean_error(level) for level in range(6, 13)]
    assert all(finer < coarser for coarser, finer in zip(errors, errors[1:]))
    assert errors[-1] < errors[0] / 30


def test_derive_seed():
    assert derive_seed(42, 0) == derive_seed(42, 0)
    assert derive_seed(42, 0) != derive_seed(42, 1)
    assert derive_seed(42, 1, 2) != derive_seed(42, 2, 1)
    assert 0 <= derive_seed(42, 5) < 2 ** 64


def test_from_multinoise():
    spec = DrivingSpec.from_multinoise(1.0, [3.0, 4.0])
    assert spec.sigma == 5.0
    with pytest.raises(ValidationError):
        DrivingSpec.from_multinoise(1.0, [])


def test_mu_moment_closed_form():
    spec = DrivingSpec(lam=0.0, sigma=1.0)
    assert mu_moment(4, 0.5, spec) == pytest.approx(3 * 0.25)
    assert mu_moment(3, 0.5, spec) == 0.0
    drift_only = DrivingSpec(lam=1.0, sigma=0.0)
    assert mu_moment(5, 0.3, drift_only) == pytest.approx(0.3 ** 5)
    both = DrivingSpec(lam=2.0, sigma=3.0)
    assert mu_moment(2, 0.1, both) == pytest.approx(4 * 0.01 + 9 * 0.1)
    assert mu_moment(0, 0.1, both) == 1
    with pytest.raises(ValidationError):
        mu_moment(31, 0.1, both)


@pytest.mark.parametrize("n", range(0, 11))
def test_mu_moment_scaling(symbols, n):
    h, spec = symbols
    poly = sympy.Poly(mu_moment(n, h, spec), h)
    lowest = min(monom[0] for monom in poly.monoms())
    assert lowest == math.ceil(n / 2)
    # E mu(h)^n / h^ceil(n/2) ограничено при h -> 0
    ratios = [abs(mu_moment(n, 2.0 ** -k, SPEC)) / 2.0 ** (-k * math.ceil(n / 2)) for k in range(4, 30)]
    assert max(ratios) <= ratios[0]


@pytest.mark.parametrize("order", [1, 2])
def test_weak_moments_match_low_moments(symbols, order):
    h, spec = symbols
    for n in range(0, 2 * order + 2):
        assert sympy.expand(weak_moment(order, n, h, spec) - mu_moment(n, h, spec)) == 0


@pytest.mark.parametrize("order", [1, 2])
def test_weak_moment_mismatch_is_high_order(symbols, order):
    h, spec = symbols
    t = sympy.Symbol("t", positive=True)
    for n in (2 * order + 2, 2 * order + 3):
        diff = sympy.expand((weak_moment(order, n, h, spec) - mu_moment(n, h, spec)).subs(h, t ** 2))
        assert diff != 0
        poly = sympy.Poly(diff, t)
        lowest = min(monom[0] for monom in poly.monoms())
        assert lowest >= 2 * (order + 1)


def test_weak_law_probabilities():
    for order in (1, 2):
        law = weak_increment_law(order, 0.25)
        assert sum(p for _, p in law) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        weak_increment_law(3, 0.25)


def test_weak_increments_support_and_frequencies():
    spec = DrivingSpec(lam=0.0, sigma=1.0)
    rng = make_rng(derive_seed(1, 2))
    two_point = weak_increments(1, 0.25, 10000, rng, spec)
    assert set(np.unique(two_point)) == {-0.5, 0.5}

    h = 0.25
    root = math.sqrt(3 * h)
    three_point = weak_increments(2, h, 60000, rng, spec)
    values, counts = np.unique(three_point, return_counts=True)
    np.testing.assert_allclose(values, [-root, 0.0, root])
    np.testing.assert_allclose(counts / three_point.size, [1 / 6, 2 / 3, 1 / 6], atol=0.01)

    single = weak_increment(2, h, rng, DrivingSpec(lam=1.0, sigma=0.0))
    assert single == pytest.approx(h)


def test_population_moments_at_quarter_step():
    spec = DrivingSpec(lam=1.0, sigma=1.0, t0=0.0, T=0.25 * 2 ** 17)
    path = generate_path(spec, 17, seed=99)
    h = path.h_min
    assert h == 0.25
    x = increments_at_level(path, 17)
    for n in range(1, 5):
        sample = x ** n
        se = sample.std(ddof=1) / math.sqrt(sample.size)
        assert abs(sample.mean() - mu_moment(n, h, spec)) < 4 * se


def test_discrete_weak_moments_are_exact_averages():
    spec = DrivingSpec(lam=1.0, sigma=0.7)
    h = 0.125
    law = weak_increment_law(2, h)
    for n in range(0, 6):
        direct = sum(p * (spec.lam * h + spec.sigma * v) ** n for v, p in law)
        assert weak_moment(2, n, h, spec) == pytest.approx(direct)
        assert weak_moment(2, n, h, spec) == pytest.approx(mu_moment(n, h, spec), rel=1e-12, abs=1e-15)
    # двухточечный закон перебором
    pairs = itertools.product(*[weak_increment_law(1, h)] * 2)
    assert sum(p1 * p2 for (_, p1), (_, p2) in pairs) == pytest.approx(1.0)
