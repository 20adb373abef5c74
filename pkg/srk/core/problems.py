"""
Тестовые задачи с одним интегрантом: dX = f(X) (lambda dt + sigma o dW).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from srk.config.constants import PROBLEM_NAMES
from srk.core.driving import DrivingSpec
from srk.core.errors import UnknownNameError, ValidationError

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]
ExactSolution = Callable[[float, Any], np.ndarray]
Invariant = Callable[[np.ndarray], Any]


class BatchedField:
    """Векторное поле на массивах (..., d); поле без трансляции по ведущим осям вызывается построчно"""

    def __init__(self, f: VectorField, vectorised: bool):
        self.f = f
        self.vectorised = vectorised

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.vectorised:
            return self.f(x)
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1])
        out = np.empty_like(flat)
        for k, row in enumerate(flat):
            out[k] = self.f(row)
        return out.reshape(x.shape)


def batched_field(f: VectorField, x0: Any) -> BatchedField:
    """Проверяет f на пачке точек около x0 и выбирает режим вызова"""
    if isinstance(f, BatchedField):
        return f
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    try:
        with np.errstate(all="ignore"):
            fx = np.asarray(f(x0), dtype=np.float64)
    except Exception as e:
        raise ValidationError(f"Vector field cannot be evaluated at x0: {e}") from e
    if fx.shape != x0.shape:
        raise ValidationError(f"Vector field must map R^{x0.shape[0]} to itself, f(x0) has shape {fx.shape}")

    spread = 1.0 + np.abs(x0)
    points = np.stack([x0, x0 + 0.125 * spread, x0 - 0.25 * spread])
    with np.errstate(all="ignore"):
        try:
            rows = np.stack([np.asarray(f(row), dtype=np.float64) for row in points])
            direct = np.asarray(f(points), dtype=np.float64)
            vectorised = direct.shape == points.shape and bool(
                np.allclose(direct, rows, rtol=1e-10, atol=1e-12, equal_nan=True))
        except (ArithmeticError, IndexError, TypeError, ValueError):
            vectorised = False
    if not vectorised:
        logger.debug("Vector field does not broadcast over leading axes, evaluating row by row")
    return BatchedField(f, vectorised)


@dataclass(frozen=True, eq=False)
class SdeProblem:
    name: str
    f: VectorField
    x0: np.ndarray
    spec: DrivingSpec
    exact: Optional[ExactSolution] = None
    invariants: Dict[str, Invariant] = field(default_factory=dict)
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        try:
            object.__setattr__(self, "f", batched_field(self.f, x0))
        except ValidationError as e:
            raise ValidationError(f"{self.name}: {e}") from e

        fx = np.asarray(self.f(x0))
        if not np.all(np.isfinite(fx)):
            raise ValidationError(f"{self.name}: f(x0) is not finite")
        if self.exact is not None:
            start = np.asarray(self.exact(self.spec.t0, 0.0))
            if not np.allclose(start, x0, rtol=0.0, atol=1e-12):
                raise ValidationError(f"{self.name}: exact(t0, 0) = {start} differs from x0 = {x0}")
        for name, invariant in self.invariants.items():
            if not np.isfinite(invariant(x0)):
                raise ValidationError(f"{self.name}: invariant '{name}' is not finite at x0")

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "dim": self.dim,
            "lambda": float(self.spec.lam),
            "sigma": float(self.spec.sigma),
            "t0": float(self.spec.t0),
            "T": float(self.spec.T),
            "params": dict(self.params),
            "invariants": sorted(self.invariants),
            "has_exact": self.exact is not None,
        }


def make_problem(name: str, f: VectorField, x0: Sequence[float], lam: float = 1.0, sigma: float = 1.0,
                 t0: float = 0.0, T: float = 1.0, exact: Optional[ExactSolution] = None,
                 invariants: Optional[Dict[str, Invariant]] = None,
                 jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 **params: float) -> SdeProblem:
    """
    Пользовательская задача. f может быть задана на одном векторе (d,) или
    на массивах (..., d); jacobian, если передан, должен работать на (..., d).
    """
    return SdeProblem(name=name, f=f, x0=np.asarray(x0, dtype=np.float64),
                      spec=DrivingSpec(lam=lam, sigma=sigma, t0=t0, T=T), exact=exact,
                      invariants=invariants or {}, jacobian=jacobian, params=params)


def sinh_problem(sigma: float = 0.8, T: float = 1.0) -> SdeProblem:
    """dX = sqrt(1+X^2)(dt + sigma o dW), X(0)=0, X(t) = sinh(t + sigma W(t))"""

    def f(x: np.ndarray) -> np.ndarray:
        return np.sqrt(1.0 + x * x)

    def jacobian(x: np.ndarray) -> np.ndarray:
        return (x / np.sqrt(1.0 + x * x))[..., None]

    def exact(t: float, w: Any) -> np.ndarray:
        return np.asarray(np.sinh(t + sigma * np.asarray(w, dtype=np.float64)))[..., None]

    return SdeProblem(name="sinh", f=f, x0=np.zeros(1), spec=DrivingSpec(lam=1.0, sigma=sigma, t0=0.0, T=T),
                      exact=exact, jacobian=jacobian, params={"sigma": sigma, "T": T})


_ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


def kubo_problem(a: float = 1.0, sigma: float = 1.0, T: float = 1.0) -> SdeProblem:
    """
    Осциллятор Кубо: интегрант g(x) = [[0,-1],[1,0]] x, мера mu(t) = a*t + sigma*W(t).
    Инвариант I(X) = X1^2 + X2^2.
    """

    def f(x: np.ndarray) -> np.ndarray:
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def jacobian(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(_ROTATION, x.shape[:-1] + (2, 2))

    def exact(t: float, w: Any) -> np.ndarray:
        phase = a * t + sigma * np.asarray(w, dtype=np.float64)
        return np.stack([np.cos(phase), np.sin(phase)], axis=-1)

    def quadratic(x: np.ndarray) -> Any:
        return x[..., 0] ** 2 + x[..., 1] ** 2

    return SdeProblem(name="kubo", f=f, x0=np.array([1.0, 0.0]), spec=DrivingSpec(lam=a, sigma=sigma, t0=0.0, T=T),
                      exact=exact, invariants={"I": quadratic}, jacobian=jacobian,
                      params={"a": a, "sigma": sigma, "T": T})


def rigid_body_problem(sigma: float = 0.5, T: float = 1.0,
                       inertia: Sequence[float] = (2.0, 1.0, 2.0 / 3.0)) -> SdeProblem:
    """
    Стохастическое твёрдое тело dX = A(X)X (dt + sigma o dW).
    Инварианты: энергия H и казимир C.
    """
    i1, i2, i3 = (float(v) for v in inertia)
    k1 = 1.0 / i3 - 1.0 / i2
    k2 = 1.0 / i1 - 1.0 / i3
    k3 = 1.0 / i2 - 1.0 / i1

    def f(x: np.ndarray) -> np.ndarray:
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([k1 * x2 * x3, k2 * x1 * x3, k3 * x1 * x2], axis=-1)

    def jacobian(x: np.ndarray) -> np.ndarray:
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        zero = np.zeros_like(x1)
        rows = [
            np.stack([zero, k1 * x3, k1 * x2], axis=-1),
            np.stack([k2 * x3, zero, k2 * x1], axis=-1),
            np.stack([k3 * x2, k3 * x1, zero], axis=-1),
        ]
        return np.stack(rows, axis=-2)

    def energy(x: np.ndarray) -> Any:
        return 0.5 * (x[..., 0] ** 2 / i1 + x[..., 1] ** 2 / i2 + x[..., 2] ** 2 / i3)

    def casimir(x: np.ndarray) -> Any:
        return x[..., 0] ** 2 + x[..., 1] ** 2 + x[..., 2] ** 2

    x0 = np.array([math.cos(1.1), 0.0, math.sin(1.1)])
    return SdeProblem(name="rigid_body", f=f, x0=x0, spec=DrivingSpec(lam=1.0, sigma=sigma, t0=0.0, T=T),
                      invariants={"H": energy, "C": casimir}, jacobian=jacobian,
                      params={"sigma": sigma, "T": T, "I1": i1, "I2": i2, "I3": i3})


def reduce_multinoise(f: VectorField, lam: float, sigmas: Sequence[float], x0: Sequence[float],
                      t0: float = 0.0, T: float = 1.0, name: str = "multinoise", **kwargs: Any) -> SdeProblem:
    """m шумов с общим интегрантом сводятся к одному с sigma = sqrt(sum sigma_i^2)"""
    spec = DrivingSpec.from_multinoise(lam, sigmas, t0=t0, T=T)
    logger.debug(f"Reduced {len(sigmas)} noise terms to sigma={spec.sigma}")
    return make_problem(name, f, x0, lam=lam, sigma=spec.sigma, t0=t0, T=T, **kwargs)


_FACTORIES: Dict[str, Callable[..., SdeProblem]] = {
    "sinh": sinh_problem,
    "kubo": kubo_problem,
    "rigid_body": rigid_body_problem,
}

assert set(_FACTORIES) == set(PROBLEM_NAMES)


def available_problems() -> List[str]:
    return sorted(_FACTORIES)


def get_problem(name: str, **params: Any) -> SdeProblem:
    factory = _FACTORIES.get(name)
    if factory is None:
        raise UnknownNameError("problem", name, _FACTORIES)
    try:
        return factory(**{k: v for k, v in params.items() if v is not None})
    except TypeError as e:
        raise ValidationError(f"Invalid parameters for problem '{name}': {e}") from e


def sinh_weak_mean(sigma: float, T: float = 1.0) -> float:
    """E sinh(T + sigma W(T)) = exp(sigma^2 T / 2) sinh(T)"""
    return math.exp(0.5 * sigma * sigma * T) * math.sinh(T)
