import math
from typing import Any, List

import numpy as np

from srk.core.errors import ValidationError


def parse_name_list(text: str) -> List[str]:
    """'gauss1, gauss2' -> ['gauss1', 'gauss2'] без повторов"""
    names: List[str] = []
    for item in text.split(","):
        item = item.strip()
        if item and item not in names:
            names.append(item)
    if not names:
        raise ValidationError("Empty name list")
    return names


def parse_levels(text: str) -> List[int]:
    """'4-9' или '4,6,8' -> список уровней по возрастанию"""
    levels = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = (int(v) for v in part.split("-", 1))
                if lo > hi:
                    raise ValidationError(f"Empty level range '{part}'")
                levels.update(range(lo, hi + 1))
            else:
                levels.add(int(part))
    except ValueError as e:
        raise ValidationError(f"Invalid levels '{text}': {e}") from e
    if not levels:
        raise ValidationError("No levels given")
    return sorted(levels)


def level_for_step(length: float, h: float) -> int:
    """Диадический уровень, для которого (T - t0) / 2^level == h"""
    if not h > 0:
        raise ValidationError(f"Step must be positive, got {h}")
    ratio = length / h
    level = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if level < 0 or not math.isclose(length / 2 ** level, h, rel_tol=1e-12):
        raise ValidationError(f"Step h={h} is not a dyadic fraction of the interval length {length}")
    return level


def json_safe(value: Any) -> Any:
    """NaN/Inf -> None, numpy -> python, рекурсивно"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value
