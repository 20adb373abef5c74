from typing import Iterable, Optional


class SrkError(Exception):
    """Базовая ошибка пакета"""


class ValidationError(SrkError, ValueError):
    """Нарушено предусловие или некорректный документ"""


class UnknownNameError(SrkError, LookupError):
    """Неизвестное имя метода / задачи / функционала"""

    def __init__(self, kind: str, name: str, available: Iterable[str]):
        self.kind = kind
        self.name = name
        self.available = sorted(available)
        super().__init__(f"Unknown {kind} '{name}'. Available: {', '.join(self.available)}")

    def __str__(self) -> str:
        return self.args[0]


class StepFailureError(SrkError):
    """Стадийная система не сошлась за max_iter итераций"""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0,
                 step_index: Optional[int] = None, trajectory=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        self.trajectory = trajectory


class NumericalBlowupError(StepFailureError):
    """В стадиях или решении появились NaN/Inf"""
