import math

import numpy as np
import pytest

from srk.core.errors import UnknownNameError, ValidationError
from srk.core.problems import (available_problems, batched_field, get_problem, kubo_problem, make_problem,
                               reduce_multinoise, rigid_body_problem, sinh_problem, sinh_weak_mean)
from srk.core.solver import fd_jacobian


def test_available_problems():
    assert available_problems() == ["kubo", "rigid_body", "sinh"]


def test_sinh_problem():
    problem = sinh_problem(sigma=0.8)
    np.testing.assert_array_equal(problem.x0, [0.0])
    assert problem.exact(0.0, 0.0)[0] == 0.0
    assert problem.exact(1.0, 0.5)[0] == pytest.approx(math.sinh(1.4))
    w = np.array([0.1, -0.3, 0.7])
    assert problem.exact(1.0, w).shape == (3, 1)
    np.testing.assert_allclose(problem.f(np.array([[0.0], [1.0]])), [[1.0], [math.sqrt(2.0)]])


def test_kubo_problem():
    problem = kubo_problem(a=0.5, sigma=1.0)
    assert problem.spec.lam == 0.5
    np.testing.assert_array_equal(problem.f(problem.x0), [0.0, 1.0])
    states = problem.exact(1.0, np.linspace(-2, 2, 9))
    np.testing.assert_allclose(problem.invariants["I"](states), 1.0, rtol=1e-15)


def test_rigid_body_invariants_are_first_integrals(rng):
    problem = rigid_body_problem()
    i1, i2, i3 = problem.params["I1"], problem.params["I2"], problem.params["I3"]
    x = rng.normal(size=(1000, 3))
    fx = problem.f(x)
    grad_h = x / np.array([i1, i2, i3])
    grad_c = 2.0 * x
    np.testing.assert_allclose(np.sum(grad_h * fx, axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.sum(grad_c * fx, axis=1), 0.0, atol=1e-12)
    assert problem.exact is None
    assert problem.invariants["C"](problem.x0) == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["sinh", "kubo", "rigid_body"])
def test_analytic_jacobians(name, rng):
    problem = get_problem(name)
    x = rng.normal(size=(20, problem.dim))
    np.testing.assert_allclose(problem.jacobian(x), fd_jacobian(problem.f, x), atol=1e-6)


def test_reduce_multinoise():
    problem = reduce_multinoise(lambda x: -x, 1.0, [3.0, 4.0], [1.0])
    assert problem.spec.sigma == 5.0
    assert problem.name == "multinoise"


def test_get_problem_errors():
    with pytest.raises(UnknownNameError) as err:
        get_problem("lorenz")
    assert "sinh" in str(err.value)
    with pytest.raises(ValidationError):
        get_problem("sinh", a=1.0)


def test_get_problem_ignores_unset_params():
    assert get_problem("kubo", a=None, sigma=0.3).spec.sigma == 0.3


def test_make_problem_validation():
    with pytest.raises(ValidationError):
        make_problem("bad_shape", lambda x: np.ones(2), [1.0])
    with pytest.raises(ValidationError):
        make_problem("bad_exact", lambda x: x, [1.0], exact=lambda t, w: np.array([2.0]))
    with pytest.raises(ValidationError):
        make_problem("bad_value", lambda x: np.full_like(x, np.nan), [0.0])


def test_describe():
    info = get_problem("rigid_body").describe()
    assert info["dim"] == 3
    assert info["invariants"] == ["C", "H"]
    assert info["has_exact"] is False


def test_sinh_weak_mean():
    assert sinh_weak_mean(0.8, 1.0) == pytest.approx(1.6184, abs=1e-4)
    assert sinh_weak_mean(0.0, 1.0) == pytest.approx(math.sinh(1.0))


def test_vector_field_modes():
    per_vector = make_problem("rotation", lambda x: np.array([-x[1], x[0]]), [1.0, 0.0])
    assert not per_vector.f.vectorised
    np.testing.assert_array_equal(per_vector.f(np.array([[1.0, 2.0], [3.0, 4.0]])), [[-2.0, 1.0], [-4.0, 3.0]])
    assert per_vector.f(np.zeros((2, 3, 2))).shape == (2, 3, 2)
    assert get_problem("rigid_body").f.vectorised
    assert batched_field(per_vector.f, [1.0, 0.0]) is per_vector.f


def test_vector_field_that_cannot_be_evaluated():
    with pytest.raises(ValidationError):
        make_problem("broken", lambda x: x[5], [1.0, 2.0])
