"""
Управляющая мера mu(t) = lambda*t + sigma*W(t): воспроизводимые траектории
на диадической сетке, точное огрубление, слабые приращения и моменты mu(h).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Sequence, Tuple

import numpy as np
import sympy

from srk.config.constants import MAX_LEVELS, MAX_MOMENT, WEAK_ORDERS
from srk.core.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DrivingSpec:
    lam: Any = 1.0
    sigma: Any = 1.0
    t0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValidationError(f"Need T > t0, got t0={self.t0}, T={self.T}")

    @property
    def length(self) -> float:
        return self.T - self.t0

    @classmethod
    def from_multinoise(cls, lam: float, sigmas: Sequence[float], t0: float = 0.0,
                        T: float = 1.0) -> "DrivingSpec":
        """m независимых шумов с общим интегрантом: sigma = sqrt(sum sigma_i^2)"""
        if len(sigmas) == 0:
            raise ValidationError("At least one noise intensity is required")
        return cls(lam=lam, sigma=float(np.sqrt(np.sum(np.square(sigmas)))), t0=t0, T=T)


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-битный сид из (master_seed, ключи) через SeedSequence"""
    sequence = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Счётчиковый генератор Philox"""
    return np.random.Generator(np.random.Philox(int(seed)))


def coarsen(dW: np.ndarray, steps: int) -> np.ndarray:
    """Огрубление на steps диадических уровней попарным суммированием по последней оси"""
    out = np.asarray(dW, dtype=np.float64)
    for _ in range(steps):
        out = out[..., 0::2] + out[..., 1::2]
    return out


@dataclass(frozen=True, eq=False)
class DrivingPath:
    spec: DrivingSpec
    levels: int
    seed: int
    dW_fine: np.ndarray = field(repr=False)
    base_cells: int = 1

    @property
    def n_fine(self) -> int:
        return self.base_cells * 2 ** self.levels

    @property
    def h_min(self) -> float:
        return self.spec.length / self.n_fine

    def step_size(self, level: int) -> float:
        return self.spec.length / (self.base_cells * 2 ** level)

    def check_level(self, level: int) -> None:
        if not isinstance(level, (int, np.integer)) or not 0 <= level <= self.levels:
            raise ValidationError(f"level must be in 0..{self.levels}, got {level!r}")

    def wiener_total(self) -> float:
        """W(T) - W(t0) как сумма огрублённых до уровня 0 приращений"""
        return float(np.sum(coarsen(self.dW_fine, self.levels)))

    def mu_total(self) -> float:
        return self.spec.lam * self.spec.length + self.spec.sigma * self.wiener_total()


def generate_path(spec: DrivingSpec, levels: int, seed: int, base_cells: int = 1) -> DrivingPath:
    """Приращения Винера на самом мелком уровне; детерминированы по (spec, levels, seed)"""
    if not isinstance(levels, (int, np.integer)) or not 0 <= levels <= MAX_LEVELS:
        raise ValidationError(f"levels must be in 0..{MAX_LEVELS}, got {levels!r}")
    if base_cells < 1:
        raise ValidationError(f"base_cells must be positive, got {base_cells}")
    n_fine = base_cells * 2 ** levels
    h_min = spec.length / n_fine
    rng = make_rng(seed)
    dW = rng.standard_normal(n_fine) * math.sqrt(h_min)
    dW.setflags(write=False)
    return DrivingPath(spec=spec, levels=int(levels), seed=int(seed), dW_fine=dW, base_cells=base_cells)


def wiener_increments_at_level(path: DrivingPath, level: int) -> np.ndarray:
    path.check_level(level)
    return coarsen(path.dW_fine, path.levels - level)


def increments_at_level(path: DrivingPath, level: int) -> np.ndarray:
    """Delta mu_n = lambda*h + sigma*(сумма мелких dW в n-й ячейке)"""
    dW = wiener_increments_at_level(path, level)
    h = path.step_size(level)
    return path.spec.lam * h + path.spec.sigma * dW


def mu_grid(path: DrivingPath, level: int) -> np.ndarray:
    """mu(t_n) - mu(t_0) на сетке уровня level, начиная с 0"""
    return np.concatenate(([0.0], np.cumsum(increments_at_level(path, level))))


def strat_power_integral_estimate(path: DrivingPath, k: int, level: int) -> float:
    """Сумма Римана по средним точкам для int_0^h mu^k o dmu"""
    if k < 0:
        raise ValidationError(f"k must be non-negative, got {k}")
    mu = mu_grid(path, level)
    dmu = np.diff(mu)
    midpoints = 0.5 * (mu[:-1] + mu[1:])
    return float(np.sum(midpoints ** k * dmu))


def strat_power_integral_exact(path: DrivingPath, k: int) -> float:
    return path.mu_total() ** (k + 1) / (k + 1)


def _is_symbolic(*values: Any) -> bool:
    return any(isinstance(v, sympy.Basic) for v in values)


def _sqrt(x: Any) -> Any:
    return sympy.sqrt(x) if _is_symbolic(x) else math.sqrt(x)


def weak_increment_law(order: int, h: Any) -> List[Tuple[Any, Any]]:
    """Атомы и вероятности дискретного приращения Винера для слабого порядка"""
    if order not in WEAK_ORDERS:
        raise ValidationError(f"Unsupported weak order {order}; expected one of {WEAK_ORDERS}")
    symbolic = _is_symbolic(h)
    if order == 1:
        half = sympy.Rational(1, 2) if symbolic else 0.5
        root = _sqrt(h)
        return [(-root, half), (root, half)]
    sixth = sympy.Rational(1, 6) if symbolic else 1.0 / 6.0
    two_thirds = sympy.Rational(2, 3) if symbolic else 2.0 / 3.0
    root = _sqrt(3 * h)
    return [(-root, sixth), (0 * h, two_thirds), (root, sixth)]


def weak_moment(order: int, n: int, h: Any, spec: DrivingSpec) -> Any:
    """Точный момент E(lambda*h + sigma*dW_hat)^n дискретного закона"""
    total = 0
    for value, prob in weak_increment_law(order, h):
        total += prob * (spec.lam * h + spec.sigma * value) ** n
    return sympy.expand(total) if _is_symbolic(total) else total


def weak_increments(order: int, h: float, size, rng: np.random.Generator,
                    spec: DrivingSpec) -> np.ndarray:
    if order not in WEAK_ORDERS:
        raise ValidationError(f"Unsupported weak order {order}; expected one of {WEAK_ORDERS}")
    if not h > 0:
        raise ValidationError(f"Step must be positive, got {h}")
    if order == 1:
        signs = rng.integers(0, 2, size=size) * 2 - 1
        dW = signs * math.sqrt(h)
    else:
        u = rng.random(size=size)
        root = math.sqrt(3.0 * h)
        dW = np.where(u < 1.0 / 6.0, -root, np.where(u < 1.0 / 3.0, root, 0.0))
    return spec.lam * h + spec.sigma * dW


def weak_increment(order: int, h: float, rng: np.random.Generator, spec: DrivingSpec) -> float:
    return float(weak_increments(order, h, None, rng, spec))


def mu_moment(n: int, h: Any, spec: DrivingSpec) -> Any:
    """E mu(h)^n = sum_i C(n,i) lambda^(n-i) h^(n-i) sigma^i E(dW^i)"""
    if not isinstance(n, int) or not 0 <= n <= MAX_MOMENT:
        raise ValidationError(f"n must be in 0..{MAX_MOMENT}, got {n!r}")
    total = 0
    for i in range(0, n + 1, 2):
        # E dW^i = h^(i/2) (i-1)!!, нечётные моменты равны нулю
        wiener_moment = h ** (i // 2) * math.prod(range(i - 1, 0, -2))
        total += math.comb(n, i) * spec.lam ** (n - i) * h ** (n - i) * spec.sigma ** i * wiener_moment
    return sympy.expand(total) if _is_symbolic(total) else total
