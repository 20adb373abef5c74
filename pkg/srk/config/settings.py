import os
from dataclasses import dataclass
from typing import List

from dotenv import load_dotenv

# Локальный .env подхватывается до создания конфигов
load_dotenv()


@dataclass
class SolverConfig:
    STAGE_SOLVER: str = os.getenv("SRK_STAGE_SOLVER", "newton_fd")
    STAGE_TOL: float = float(os.getenv("SRK_STAGE_TOL", "1e-12"))
    STAGE_MAX_ITER: int = int(os.getenv("SRK_STAGE_MAX_ITER", "50"))


@dataclass
class OrderConfig:
    TOLERANCE: float = 1e-10        # абсолютный допуск условий порядка
    MAX_CHECK: int = 8
    PRECISION_DIGITS: int = 40      # точность mpmath для весов
    LOAD_SUM_TOLERANCE: float = 1e-12
    ROW_SUM_TOLERANCE: float = 1e-15


@dataclass
class StudyConfigDefaults:
    MASTER_SEED: int = int(os.getenv("SRK_SEED", "42"))
    N_PATHS: int = int(os.getenv("SRK_PATHS", "2000"))
    FINEST_LEVEL: int = 9
    LEVELS: List[int] = None
    ERROR_FLOOR: float = 1e-14
    BLOCK_SIZE: int = int(os.getenv("SRK_BLOCK_SIZE", "250"))
    WORKERS: int = int(os.getenv("SRK_WORKERS", "0"))   # 0 = все доступные ядра
    SHOW_PROGRESS: bool = os.getenv("SRK_PROGRESS", "false").lower() == "true"
    QUADRATURE_NODES: int = 80

    def __post_init__(self):
        if self.LEVELS is None:
            self.LEVELS = [4, 5, 6, 7, 8, 9]


@dataclass
class AppConfig:
    LOG_LEVEL: str = os.getenv("SRK_LOG_LEVEL", "INFO")
    OUTPUT_DIR: str = os.getenv("SRK_OUTPUT_DIR", ".")


config = AppConfig()
solver_config = SolverConfig()
order_config = OrderConfig()
study_config = StudyConfigDefaults()
