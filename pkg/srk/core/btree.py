"""
Корневые деревья: перечисление, плотность gamma, коэффициент alpha,
элементарные веса таблицы и проверка условий порядка phi(t) = 1/gamma(t).
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import mpmath
import sympy

from srk.config.constants import MAX_TREE_ORDER
from srk.config.settings import order_config
from srk.core.errors import ValidationError
from srk.core.tableau import ButcherTableau

logger = logging.getLogger(__name__)

NODE = "•"


@dataclass(frozen=True)
class RootedTree:
    children: Tuple["RootedTree", ...] = ()
    empty: bool = False
    rho: int = field(init=False, compare=False)
    key: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.empty and self.children:
            raise ValidationError("Empty tree cannot have children")
        # канонический порядок детей: по (rho, ключ)
        ordered = tuple(sorted(self.children, key=lambda t: t.key))
        object.__setattr__(self, "children", ordered)
        rho = 0 if self.empty else 1 + sum(t.rho for t in ordered)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "key", (rho, tuple(t.key for t in ordered)))

    @classmethod
    def graft(cls, children: Sequence["RootedTree"]) -> "RootedTree":
        """[t1, ..., tk]: новый корень над поддеревьями"""
        if any(t.empty for t in children):
            raise ValidationError("Cannot graft the empty tree")
        return cls(children=tuple(children))

    def __str__(self) -> str:
        if self.empty:
            return "∅"
        if not self.children:
            return NODE
        return "[" + ",".join(str(t) for t in self.children) + "]"

    def __lt__(self, other: "RootedTree") -> bool:
        return self.key < other.key


EMPTY = RootedTree(empty=True)
LEAF = RootedTree()


def parse_tree(text: str) -> RootedTree:
    """Разбор скобочной записи: '•', '[•]', '[•,[•]]' ('*' тоже узел)"""
    source = text.replace(" ", "")
    if source in ("", "∅"):
        return EMPTY
    pos = 0

    def parse() -> RootedTree:
        nonlocal pos
        if pos >= len(source):
            raise ValidationError(f"Unexpected end of tree notation '{text}'")
        ch = source[pos]
        if ch in (NODE, "*"):
            pos += 1
            return LEAF
        if ch != "[":
            raise ValidationError(f"Unexpected '{ch}' at {pos} in '{text}'")
        pos += 1
        children = [parse()]
        while pos < len(source) and source[pos] == ",":
            pos += 1
            children.append(parse())
        if pos >= len(source) or source[pos] != "]":
            raise ValidationError(f"Missing ']' in '{text}'")
        pos += 1
        return RootedTree.graft(children)

    tree = parse()
    if pos != len(source):
        raise ValidationError(f"Trailing characters in '{text}'")
    return tree


def _forests(pool: List[RootedTree], remaining: int, start: int) -> Iterator[Tuple[RootedTree, ...]]:
    # мультимножества деревьев из pool с суммарным порядком remaining
    if remaining == 0:
        yield ()
        return
    for i in range(start, len(pool)):
        tree = pool[i]
        if tree.rho > remaining:
            break
        for rest in _forests(pool, remaining - tree.rho, i):
            yield (tree,) + rest


@lru_cache(maxsize=None)
def _trees_up_to(max_order: int) -> Tuple[RootedTree, ...]:
    trees: List[RootedTree] = [LEAF]
    for n in range(2, max_order + 1):
        pool = list(trees)
        layer = {RootedTree.graft(forest) for forest in _forests(pool, n - 1, 0)}
        trees.extend(sorted(layer))
    return tuple(trees)


def enumerate_trees(max_order: int) -> List[RootedTree]:
    """Все непустые деревья с rho <= max_order, отсортированные по (rho, ключ)"""
    if not isinstance(max_order, int) or not 1 <= max_order <= MAX_TREE_ORDER:
        raise ValidationError(f"max_order must be in 1..{MAX_TREE_ORDER}, got {max_order!r}")
    return list(_trees_up_to(max_order))


def tree_counts(max_order: int) -> List[int]:
    counts = Counter(t.rho for t in enumerate_trees(max_order))
    return [counts[n] for n in range(1, max_order + 1)]


@lru_cache(maxsize=None)
def gamma(tree: RootedTree) -> sympy.Rational:
    """Плотность: gamma([t1..tk]) = rho * prod gamma(tj)"""
    if tree.empty or not tree.children:
        return sympy.Integer(1)
    value = sympy.Integer(tree.rho)
    for child in tree.children:
        value *= gamma(child)
    return value


@lru_cache(maxsize=None)
def alpha(tree: RootedTree) -> sympy.Rational:
    """alpha([t1..tk]) = prod alpha(tj) / (r1! ... rq!), r - кратности равных поддеревьев"""
    if tree.empty or not tree.children:
        return sympy.Integer(1)
    value = sympy.Integer(1)
    for child, multiplicity in Counter(tree.children).items():
        value *= alpha(child) ** multiplicity / sympy.factorial(multiplicity)
    return value


def labelling_count(tree: RootedTree) -> sympy.Rational:
    """Число монотонных разметок rho! * alpha / gamma"""
    return sympy.factorial(tree.rho) * alpha(tree) / gamma(tree)


class ElementaryWeights:
    """Элементарные веса таблицы с мемоизацией стадийных весов (на экземпляр)"""

    def __init__(self, tableau: ButcherTableau, dps: Optional[int] = None):
        self.tableau = tableau
        self.dps = dps or order_config.PRECISION_DIGITS
        self.A, self.b, self.c = tableau.mp_coefficients(self.dps)
        self._stage: Dict[RootedTree, List[mpmath.mpf]] = {}

    def _product_over_children(self, tree: RootedTree) -> List[mpmath.mpf]:
        s = self.tableau.s
        with mpmath.workdps(self.dps):
            values = [mpmath.mpf(1)] * s
            for child in tree.children:
                child_stage = self.stage(child)
                values = [values[i] * child_stage[i] for i in range(s)]
        return values

    def stage(self, tree: RootedTree) -> List[mpmath.mpf]:
        """Стадийные веса phi_i(t) = sum_j a_ij prod_k phi_j(t_k)"""
        cached = self._stage.get(tree)
        if cached is not None:
            return cached
        inner = self._product_over_children(tree)
        with mpmath.workdps(self.dps):
            values = [mpmath.fsum(self.A[i][j] * inner[j] for j in range(self.tableau.s))
                      for i in range(self.tableau.s)]
        self._stage[tree] = values
        return values

    def weight(self, tree: RootedTree) -> mpmath.mpf:
        if tree.empty:
            return mpmath.mpf(1)
        inner = self._product_over_children(tree)
        with mpmath.workdps(self.dps):
            return mpmath.fsum(self.b[i] * inner[i] for i in range(self.tableau.s))


def elementary_weight(tableau: ButcherTableau, tree: RootedTree) -> mpmath.mpf:
    return ElementaryWeights(tableau).weight(tree)


@dataclass(frozen=True)
class OrderCheck:
    method: str
    order: int
    max_check: int
    failing_tree: Optional[RootedTree] = None
    defect: Optional[float] = None

    @property
    def sde_order(self) -> int:
        return predicted_sde_order(self.order)


def deterministic_order(tableau: ButcherTableau, max_check: int = order_config.MAX_CHECK,
                        tol: float = order_config.TOLERANCE) -> OrderCheck:
    """Наибольший p <= max_check, для которого |phi(t) - 1/gamma(t)| <= tol при rho(t) <= p"""
    weights = ElementaryWeights(tableau)
    for tree in enumerate_trees(max_check):
        with mpmath.workdps(weights.dps):
            target = mpmath.mpf(1) / int(gamma(tree))
            defect = abs(weights.weight(tree) - target)
        if defect > tol:
            order = tree.rho - 1
            logger.debug(f"{tableau.name}: order {order}, condition fails for {tree} (defect {float(defect):.3e})")
            return OrderCheck(tableau.name, order, max_check, tree, float(defect))
    return OrderCheck(tableau.name, max_check, max_check)


def predicted_sde_order(p_d: int) -> int:
    """Порядок в среднеквадратичном и слабом смысле: floor(p_d / 2)"""
    if p_d < 0:
        raise ValidationError(f"Deterministic order must be non-negative, got {p_d}")
    return p_d // 2


def chain(n: int) -> RootedTree:
    """Высокое дерево из n узлов [[...[•]...]]"""
    tree = LEAF
    for _ in range(n - 1):
        tree = RootedTree.graft([tree])
    return tree
