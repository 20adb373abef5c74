import numpy as np
import pytest
import sympy

from srk.core.driving import DrivingSpec
from srk.core.problems import make_problem


@pytest.fixture
def deterministic_exp():
    """sigma = 0: обычное ОДУ y' = y"""
    return make_problem("exp", lambda x: x, [1.0], lam=1.0, sigma=0.0)


@pytest.fixture
def symbols():
    h = sympy.Symbol("h", positive=True)
    lam, sigma = sympy.symbols("lam sigma", real=True)
    return h, DrivingSpec(lam=lam, sigma=sigma, t0=0.0, T=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
