import itertools
import json
import math

import numpy as np
import pytest

from srk.core.driving import weak_increment_law
from srk.core.errors import UnknownNameError, ValidationError
from srk.core.problems import get_problem, sinh_problem, sinh_weak_mean
from srk.core.solver import StageSolveConfig, integrate_batch
from srk.core.tableau import builtin
from srk.services.study import (CSV_COLUMNS, StudyConfig, fit_order, gauss_hermite_expectation, get_functional,
                                invariant_drift_study, mean_square_study, weak_reference, weak_study)


def test_fit_order_exact_power_law():
    rows = [(2.0 ** -k, 3.0 * 2.0 ** (-2 * k)) for k in range(4, 9)]
    fit = fit_order(rows)
    assert abs(fit.order - 2.0) < 1e-12
    assert fit.constant == pytest.approx(3.0)
    assert fit.n_used == 5


def test_fit_order_floor():
    fit = fit_order([(2.0 ** -4, 1e-3), (2.0 ** -5, 1e-20)], error_floor=1e-14)
    assert fit.order is None
    assert fit.n_used == 1
    assert fit.reason == "not enough data"


def test_fit_order_scale_invariant():
    rows = [(0.5, 0.2), (0.25, 0.07), (0.125, 0.02), (0.0625, 0.006)]
    scaled = [(h, 1000.0 * e) for h, e in rows]
    assert fit_order(rows).order == pytest.approx(fit_order(scaled).order, abs=1e-12)


@pytest.mark.parametrize("kwargs", [
    {"n_paths": 0},
    {"levels": [4, 10], "finest_level": 9},
    {"levels": []},
    {"error_floor": 0.0},
    {"methods": []},
    {"weak_order": 3},
    {"reference": "analytic"},
])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        StudyConfig(**kwargs)


def test_echo_excludes_parallelism():
    a = StudyConfig(workers=1, show_progress=False).echo()
    b = StudyConfig(workers=8, show_progress=True).echo()
    assert a == b
    assert "workers" not in a


def test_functionals():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(get_functional("identity")(x), [1.0, 3.0])
    np.testing.assert_array_equal(get_functional("square")(x), [5.0, 10.0])
    np.testing.assert_array_equal(get_functional("constant")(x), [1.0, 1.0])
    with pytest.raises(UnknownNameError):
        get_functional("cube")


def _small_config(**kwargs):
    defaults = dict(problem="sinh", methods=["heun", "gauss1"], n_paths=10, finest_level=5, levels=[2, 3],
                    block_size=3, workers=1, show_progress=False)
    defaults.update(kwargs)
    return StudyConfig(**defaults)


def test_mean_square_without_noise_is_deterministic():
    cfg = _small_config(problem_params={"sigma": 0.0}, methods=["erk4_classic"], n_paths=8, levels=[2, 3, 4])
    report = mean_square_study(cfg)
    rows = report.rows_for("erk4_classic")
    assert len(rows) == 3
    for row in rows:
        assert row.n_ok == 8 and row.n_failed == 0
        assert row.mse > 0
        assert row.stderr <= 1e-12 * row.mse
        assert row.mae <= row.mse * (1 + 1e-12)
    assert rows[0].mse > rows[1].mse > rows[2].mse
    assert report.predicted["erk4_classic"] == {"p_d": 4, "sde_order": 2}


def test_mean_square_report_is_independent_of_workers():
    serial = mean_square_study(_small_config(workers=1))
    parallel = mean_square_study(_small_config(workers=4))
    assert serial.to_csv() == parallel.to_csv()
    assert serial.to_json() == parallel.to_json()


def test_mean_square_report_layout():
    report = mean_square_study(_small_config(problem_params={"sigma": 0.8}))
    frame = report.to_frame()
    assert list(frame.columns) == CSV_COLUMNS
    assert len(frame) == 4
    for row in report.rows:
        assert row.mae <= row.mse * (1 + 1e-12)
        assert row.h == 2.0 ** -row.level
    document = json.loads(report.to_json())
    assert document["kind"] == "mean-square"
    assert document["metadata"]["config"]["master_seed"] == report.metadata["config"]["master_seed"]
    assert set(document["fits"]) == {"heun", "gauss1"}
    assert report.to_csv().splitlines()[0] == ",".join(CSV_COLUMNS)


def test_stderr_shrinks_with_more_paths():
    small = mean_square_study(_small_config(problem="kubo", methods=["gauss1"], n_paths=200, levels=[5],
                                            block_size=50))
    large = mean_square_study(_small_config(problem="kubo", methods=["gauss1"], n_paths=800, levels=[5],
                                            block_size=50))
    ratio = small.rows[0].stderr / large.rows[0].stderr
    assert 1.4 < ratio < 2.9


def test_self_convergence_reference():
    cfg = _small_config(problem="rigid_body", methods=["gauss1"], n_paths=4)
    report = mean_square_study(cfg)
    assert report.metadata["reference"] == "finest level 5"
    assert all(row.valid for row in report.rows)
    with pytest.raises(ValidationError):
        mean_square_study(_small_config(problem="rigid_body", reference="exact"))


def test_weak_reference_quadrature_matches_closed_form():
    problem = sinh_problem(sigma=0.8)
    closed = weak_reference(problem, "identity")
    assert closed == pytest.approx(sinh_weak_mean(0.8, 1.0))
    quadrature = gauss_hermite_expectation(problem, get_functional("identity"))
    assert quadrature == pytest.approx(closed, rel=1e-12)


def test_weak_reference_kubo():
    problem = get_problem("kubo")
    assert weak_reference(problem, "identity") == pytest.approx(math.cos(1.0) * math.exp(-0.5), rel=1e-12)
    assert weak_reference(problem, "square") == pytest.approx(1.0, rel=1e-12)
    assert weak_reference(get_problem("rigid_body"), "constant") == 1.0
    with pytest.raises(ValidationError):
        weak_reference(get_problem("rigid_body"), "identity")


def test_weak_constant_functional_has_zero_error():
    cfg = _small_config(methods=["erk4_classic"], weak_functional="constant", n_paths=20)
    report = weak_study(cfg)
    assert all(row.mse == 0.0 for row in report.rows)
    assert report.fits["erk4_classic"].order is None


def test_weak_study_rows():
    cfg = _small_config(methods=["erk4_classic"], n_paths=200, levels=[1, 2], block_size=64)
    report = weak_study(cfg)
    assert report.kind == "weak"
    assert report.metadata["reference_value"] == pytest.approx(sinh_weak_mean(0.8, 1.0))
    for row in report.rows:
        assert row.n_ok == 200
        assert math.isnan(row.mae)
        assert row.ci_low <= row.estimate <= row.ci_high
        assert row.mse == pytest.approx(abs(row.estimate - report.metadata["reference_value"]))


def _exact_weak_error(tableau, n_steps, sigma=0.8):
    # математическое ожидание перебором всех исходов трёхточечного закона
    problem = sinh_problem(sigma=sigma)
    h = 1.0 / n_steps
    law = weak_increment_law(2, h)
    outcomes = list(itertools.product(law, repeat=n_steps))
    dmu = np.array([[h + sigma * value for value, _ in outcome] for outcome in outcomes])
    weights = np.array([math.prod(p for _, p in outcome) for outcome in outcomes])
    result = integrate_batch(problem, tableau, dmu)
    assert not result.failed.any()
    return abs(float(weights @ result.final[:, 0]) - sinh_weak_mean(sigma, 1.0))


def test_weak_order_of_erk4_by_enumeration():
    tableau = builtin("erk4_classic")
    rows = [(1.0 / n, _exact_weak_error(tableau, n)) for n in (2, 4, 8)]
    assert rows[0][1] > rows[1][1] > rows[2][1]
    fit = fit_order(rows)
    assert abs(fit.order - 2.0) <= 0.4


def test_invariant_drift_on_kubo():
    problem = get_problem("kubo")
    report = invariant_drift_study(problem, ["gauss2", "erk4_classic"], h=0.5, horizon=50.0, seed=7)
    gauss = report.by_method("gauss2")
    assert gauss.times.shape == (101,)
    assert gauss.times[-1] == pytest.approx(50.0)
    assert gauss.failed_step is None
    assert gauss.max_drift["I"] < 1e-9
    assert report.by_method("erk4_classic").max_drift["I"] > 1e-3
    frame = report.to_frame()
    assert list(frame.columns) == ["method", "t", "I"]
    assert len(frame) == 202


def test_invariant_drift_on_rigid_body():
    problem = get_problem("rigid_body")
    report = invariant_drift_study(problem, ["gauss2"], h=0.25, horizon=10.0, seed=3)
    drift = report.by_method("gauss2").max_drift
    assert drift["C"] < 1e-9
    assert set(drift) == {"H", "C"}


def test_invariant_drift_truncated_on_failure():
    problem = get_problem("kubo")
    cfg = StageSolveConfig(method="fixed_point", max_iter=1)
    report = invariant_drift_study(problem, ["gauss2"], h=0.5, horizon=5.0, seed=7, cfg=cfg)
    series = report.by_method("gauss2")
    assert series.failed_step == 0
    assert series.times.shape == (1,)
    assert series.max_drift["I"] == 0.0


def test_invariant_drift_validation():
    with pytest.raises(ValidationError):
        invariant_drift_study(get_problem("sinh"), ["gauss2"], h=0.5, horizon=5.0, seed=1)
    with pytest.raises(ValidationError):
        invariant_drift_study(get_problem("kubo"), ["gauss2"], h=0.3, horizon=1.0, seed=1)


@pytest.mark.slow
def test_mean_square_orders_on_sinh():
    cfg = StudyConfig(problem="sinh", problem_params={"sigma": 0.8}, methods=["gauss1", "gauss2"], n_paths=500,
                      finest_level=8, levels=[4, 5, 6, 7, 8], workers=0, show_progress=False)
    report = mean_square_study(cfg)
    assert report.fitted_order("gauss1") == pytest.approx(1.0, abs=0.3)
    assert report.fitted_order("gauss2") == pytest.approx(2.0, abs=0.3)


@pytest.mark.slow
def test_long_horizon_drift():
    report = invariant_drift_study(get_problem("kubo"), ["gauss2", "erk5_fehlberg"], h=0.5, horizon=1000.0, seed=42)
    assert report.by_method("gauss2").max_drift["I"] < 1e-9
    assert report.by_method("erk5_fehlberg").max_drift["I"] > 1e-3


@pytest.mark.slow
def test_mean_square_orders_of_radau_and_explicit_methods():
    cfg = StudyConfig(problem="sinh", problem_params={"sigma": 0.8}, master_seed=42, n_paths=2000, finest_level=9,
                      levels=[4, 5, 6, 7, 8, 9], workers=0, show_progress=False,
                      methods=["radau_iia2", "radau_iia3", "erk3", "erk4_classic", "erk5_fehlberg"])
    report = mean_square_study(cfg)
    for name in ("erk3", "erk4_classic", "erk5_fehlberg"):
        expected = report.predicted[name]["sde_order"]
        assert expected - 0.35 <= report.fitted_order(name) <= expected + 0.5
    # методы Радо IIA выходят на асимптотику только при малых шагах, наклон всей серии завышен
    for name in ("radau_iia2", "radau_iia3"):
        expected = report.predicted[name]["sde_order"]
        assert expected - 0.3 <= report.fitted_order(name) <= expected + 0.7
    finest_pair = [(row.h, row.mse) for row in report.rows_for("radau_iia3")[-2:]]
    assert abs(fit_order(finest_pair).order - 2.0) <= 0.4


@pytest.mark.slow
def test_long_horizon_casimir_drift():
    problem = get_problem("rigid_body", sigma=0.5)
    report = invariant_drift_study(problem, ["gauss2", "radau_iia3", "erk5_fehlberg"], h=2.0 ** -5, horizon=1000.0,
                                   seed=42)
    gauss = report.by_method("gauss2").max_drift["C"]
    assert gauss <= 1e-8
    for name in ("radau_iia3", "erk5_fehlberg"):
        drift = report.by_method(name).max_drift["C"]
        assert drift >= 1e-6
        assert drift >= 1e3 * gauss
