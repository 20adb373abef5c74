"""
Таблицы Бутчера: встроенные семейства методов, загрузка и сериализация.

Коэффициенты хранятся точно (sympy: рациональные числа и корни), из них
выводятся массивы float64 для решателя и значения mpmath для проверки условий
порядка с высокой точностью.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import sympy
import yaml

from srk.config.constants import BUILTIN_METHODS
from srk.config.settings import order_config
from srk.core.errors import UnknownNameError, ValidationError

logger = logging.getLogger(__name__)

R = sympy.Rational
SERIAL_DIGITS = 36


def _parse_coefficient(value: Any) -> sympy.Expr:
    if isinstance(value, sympy.Basic):
        return value
    if isinstance(value, bool):
        raise ValidationError(f"Invalid coefficient: {value!r}")
    if isinstance(value, int):
        return sympy.Integer(value)
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ValidationError(f"Non-finite coefficient: {value!r}")
        return R(repr(value))
    if isinstance(value, str):
        try:
            return R(value.strip())
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Invalid coefficient string '{value}': {e}") from e
    raise ValidationError(f"Invalid coefficient: {value!r}")


def _to_mpf(expr: sympy.Expr, dps: int) -> mpmath.mpf:
    with mpmath.workdps(dps):
        return mpmath.mpf(str(sympy.N(expr, dps + 5)))


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    name: str
    A_exact: Tuple[Tuple[sympy.Expr, ...], ...]
    b_exact: Tuple[sympy.Expr, ...]
    c_exact: Tuple[sympy.Expr, ...]
    A: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    c: np.ndarray = field(init=False, repr=False)
    explicit: bool = field(init=False)

    def __post_init__(self):
        s = len(self.b_exact)
        if s < 1:
            raise ValidationError("Tableau needs at least one stage")
        if len(self.A_exact) != s or any(len(row) != s for row in self.A_exact):
            raise ValidationError(f"A must be {s}x{s} for {s} weights")
        if len(self.c_exact) != s:
            raise ValidationError(f"c must have length {s}, got {len(self.c_exact)}")

        A = np.array([[float(x) for x in row] for row in self.A_exact], dtype=np.float64)
        b = np.array([float(x) for x in self.b_exact], dtype=np.float64)
        c = np.array([float(x) for x in self.c_exact], dtype=np.float64)
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        explicit = all(self.A_exact[i][j] == 0 for i in range(s) for j in range(i, s))
        object.__setattr__(self, "explicit", explicit)

    @classmethod
    def from_coefficients(cls, name: str, A: Sequence[Sequence[Any]], b: Sequence[Any],
                          c: Optional[Sequence[Any]] = None) -> "ButcherTableau":
        try:
            A_exact = tuple(tuple(_parse_coefficient(x) for x in row) for row in A)
            b_exact = tuple(_parse_coefficient(x) for x in b)
        except TypeError as e:
            raise ValidationError(f"Malformed coefficient arrays: {e}") from e
        if c is None:
            # c по умолчанию - суммы строк A
            c_exact = tuple(sympy.expand(sum(row, sympy.Integer(0))) for row in A_exact)
        else:
            c_exact = tuple(_parse_coefficient(x) for x in c)
        return cls(name=name, A_exact=A_exact, b_exact=b_exact, c_exact=c_exact)

    @property
    def s(self) -> int:
        return len(self.b_exact)

    @property
    def explicit_flag(self) -> bool:
        return self.explicit

    def mp_coefficients(self, dps: Optional[int] = None):
        """Коэффициенты (A, b, c) как списки mpmath.mpf с dps знаками"""
        return _mp_coefficients(self, dps or order_config.PRECISION_DIGITS)

    def validate(self, sum_tolerance: float = order_config.ROW_SUM_TOLERANCE) -> "ButcherTableau":
        A_mp, b_mp, c_mp = self.mp_coefficients()
        total = mpmath.fsum(b_mp)
        if abs(total - 1) > sum_tolerance:
            raise ValidationError(
                f"Tableau '{self.name}': sum(b) = {mpmath.nstr(total, 17)} != 1")
        for i, row in enumerate(A_mp):
            defect = abs(mpmath.fsum(row) - c_mp[i])
            if defect > order_config.ROW_SUM_TOLERANCE:
                raise ValidationError(
                    f"Tableau '{self.name}': c[{i}] differs from row sum of A by {mpmath.nstr(defect, 5)}")
        return self

    def stability(self, z: complex) -> complex:
        """Функция устойчивости R(z) = 1 + z b^T (I - zA)^{-1} 1"""
        ones = np.ones(self.s)
        stages = np.linalg.solve(np.eye(self.s) - z * self.A, ones.astype(complex))
        return complex(1.0 + z * (self.b @ stages))

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "s": self.s,
            "explicit": self.explicit,
            "c": [float(x) for x in self.c],
        }


@lru_cache(maxsize=None)
def _mp_coefficients(tableau: ButcherTableau, dps: int):
    A_mp = [[_to_mpf(x, dps) for x in row] for row in tableau.A_exact]
    b_mp = [_to_mpf(x, dps) for x in tableau.b_exact]
    c_mp = [_to_mpf(x, dps) for x in tableau.c_exact]
    return A_mp, b_mp, c_mp


# Встроенные методы

def _euler() -> ButcherTableau:
    return ButcherTableau.from_coefficients("euler", [[0]], [1])


def _heun() -> ButcherTableau:
    return ButcherTableau.from_coefficients("heun", [[0, 0], [1, 0]], [R(1, 2), R(1, 2)])


def _erk3() -> ButcherTableau:
    # Третий порядок Кутты
    return ButcherTableau.from_coefficients(
        "erk3",
        [[0, 0, 0],
         [R(1, 2), 0, 0],
         [-1, 2, 0]],
        [R(1, 6), R(2, 3), R(1, 6)],
    )


def _erk4_classic() -> ButcherTableau:
    return ButcherTableau.from_coefficients(
        "erk4_classic",
        [[0, 0, 0, 0],
         [R(1, 2), 0, 0, 0],
         [0, R(1, 2), 0, 0],
         [0, 0, 1, 0]],
        [R(1, 6), R(1, 3), R(1, 3), R(1, 6)],
    )


def _erk5_fehlberg() -> ButcherTableau:
    # Решение пятого порядка пары Фельберга 4(5)
    return ButcherTableau.from_coefficients(
        "erk5_fehlberg",
        [[0, 0, 0, 0, 0, 0],
         [R(1, 4), 0, 0, 0, 0, 0],
         [R(3, 32), R(9, 32), 0, 0, 0, 0],
         [R(1932, 2197), R(-7200, 2197), R(7296, 2197), 0, 0, 0],
         [R(439, 216), -8, R(3680, 513), R(-845, 4104), 0, 0],
         [R(-8, 27), 2, R(-3544, 2565), R(1859, 4104), R(-11, 40), 0]],
        [R(16, 135), 0, R(6656, 12825), R(28561, 56430), R(-9, 50), R(2, 55)],
    )


def _gauss1() -> ButcherTableau:
    return ButcherTableau.from_coefficients("gauss1", [[R(1, 2)]], [1], [R(1, 2)])


def _gauss2() -> ButcherTableau:
    r3 = sympy.sqrt(3)
    return ButcherTableau.from_coefficients(
        "gauss2",
        [[R(1, 4), R(1, 4) - r3 / 6],
         [R(1, 4) + r3 / 6, R(1, 4)]],
        [R(1, 2), R(1, 2)],
        [R(1, 2) - r3 / 6, R(1, 2) + r3 / 6],
    )


def _gauss3() -> ButcherTableau:
    r15 = sympy.sqrt(15)
    return ButcherTableau.from_coefficients(
        "gauss3",
        [[R(5, 36), R(2, 9) - r15 / 15, R(5, 36) - r15 / 30],
         [R(5, 36) + r15 / 24, R(2, 9), R(5, 36) - r15 / 24],
         [R(5, 36) + r15 / 30, R(2, 9) + r15 / 15, R(5, 36)]],
        [R(5, 18), R(4, 9), R(5, 18)],
        [R(1, 2) - r15 / 10, R(1, 2), R(1, 2) + r15 / 10],
    )


def _radau_iia1() -> ButcherTableau:
    # неявный Эйлер
    return ButcherTableau.from_coefficients("radau_iia1", [[1]], [1], [1])


def _radau_iia2() -> ButcherTableau:
    return ButcherTableau.from_coefficients(
        "radau_iia2",
        [[R(5, 12), R(-1, 12)],
         [R(3, 4), R(1, 4)]],
        [R(3, 4), R(1, 4)],
        [R(1, 3), 1],
    )


def _radau_iia3() -> ButcherTableau:
    r6 = sympy.sqrt(6)
    return ButcherTableau.from_coefficients(
        "radau_iia3",
        [[(88 - 7 * r6) / 360, (296 - 169 * r6) / 1800, (-2 + 3 * r6) / 225],
         [(296 + 169 * r6) / 1800, (88 + 7 * r6) / 360, (-2 - 3 * r6) / 225],
         [(16 - r6) / 36, (16 + r6) / 36, R(1, 9)]],
        [(16 - r6) / 36, (16 + r6) / 36, R(1, 9)],
        [(4 - r6) / 10, (4 + r6) / 10, 1],
    )


_BUILTINS: Dict[str, Callable[[], ButcherTableau]] = {
    "euler": _euler,
    "heun": _heun,
    "erk3": _erk3,
    "erk4_classic": _erk4_classic,
    "erk5_fehlberg": _erk5_fehlberg,
    "gauss1": _gauss1,
    "gauss2": _gauss2,
    "gauss3": _gauss3,
    "radau_iia1": _radau_iia1,
    "radau_iia2": _radau_iia2,
    "radau_iia3": _radau_iia3,
}

assert set(_BUILTINS) == set(BUILTIN_METHODS)


def available_methods() -> List[str]:
    return sorted(_BUILTINS)


@lru_cache(maxsize=None)
def builtin(name: str) -> ButcherTableau:
    """Встроенная таблица по имени"""
    factory = _BUILTINS.get(name)
    if factory is None:
        raise UnknownNameError("method", name, _BUILTINS)
    return factory().validate()


def _decimal(expr: sympy.Expr) -> str:
    return mpmath.nstr(_to_mpf(expr, SERIAL_DIGITS + 4), SERIAL_DIGITS)


def serialize(tableau: ButcherTableau) -> Dict[str, Any]:
    return {
        "name": tableau.name,
        "s": tableau.s,
        "A": [[_decimal(x) for x in row] for row in tableau.A_exact],
        "b": [_decimal(x) for x in tableau.b_exact],
        "c": [_decimal(x) for x in tableau.c_exact],
    }


def load_tableau(document: Union[str, Mapping[str, Any]]) -> ButcherTableau:
    """Загрузка таблицы из документа JSON/YAML (или уже разобранного словаря)"""
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as e:
            raise ValidationError(f"Cannot parse tableau document: {e}") from e
    if not isinstance(document, Mapping):
        raise ValidationError("Tableau document must be a mapping")

    missing = [key for key in ("s", "A", "b") if key not in document]
    if missing:
        raise ValidationError(f"Tableau document lacks keys: {', '.join(missing)}")

    s = document["s"]
    if not isinstance(s, int) or isinstance(s, bool) or s < 1:
        raise ValidationError(f"s must be a positive integer, got {s!r}")
    A, b, c = document["A"], document["b"], document.get("c")
    if not isinstance(A, list) or len(A) != s or any(not isinstance(row, list) or len(row) != s for row in A):
        raise ValidationError(f"A must be a list of {s} rows with {s} entries each")
    if not isinstance(b, list) or len(b) != s:
        raise ValidationError(f"b must have {s} entries")
    if c is not None and (not isinstance(c, list) or len(c) != s):
        raise ValidationError(f"c must have {s} entries")

    tableau = ButcherTableau.from_coefficients(str(document.get("name", "custom")), A, b, c)
    tableau.validate(sum_tolerance=order_config.LOAD_SUM_TOLERANCE)
    logger.debug(f"Loaded tableau '{tableau.name}' with {s} stages (explicit={tableau.explicit})")
    return tableau


def load_tableau_file(path: str) -> ButcherTableau:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ValidationError(f"Cannot read tableau file {path}: {e}") from e
    return load_tableau(text)
