"""
Монте-Карло эксперименты: среднеквадратичная и слабая сходимость по шагам,
оценка порядка, дрейф инвариантов.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import psutil
from scipy import special, stats
from tqdm import tqdm

from srk.config.constants import WEAK_FUNCTIONALS, WEAK_ORDERS
from srk.config.settings import order_config, study_config
from srk.core.btree import deterministic_order
from srk.core.driving import coarsen, derive_seed, generate_path, make_rng, weak_increments
from srk.core.errors import StepFailureError, UnknownNameError, ValidationError
from srk.core.problems import SdeProblem, get_problem, sinh_weak_mean
from srk.core.solver import StageSolveConfig, integrate, integrate_batch
from srk.core.tableau import ButcherTableau, builtin
from srk.services.storage import StorageService

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["method", "s", "h", "level", "mse", "mae", "stderr", "n_ok", "n_failed"]

# Метки потоков для derive_seed
_WEAK_STREAM = 1

_FUNCTIONALS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x[..., 0],
    "square": lambda x: np.sum(x * x, axis=-1),
    "constant": lambda x: np.ones(x.shape[:-1]),
}

assert set(_FUNCTIONALS) == set(WEAK_FUNCTIONALS)


def get_functional(name: str) -> Callable[[np.ndarray], np.ndarray]:
    functional = _FUNCTIONALS.get(name)
    if functional is None:
        raise UnknownNameError("weak functional", name, _FUNCTIONALS)
    return functional


@dataclass
class StudyConfig:
    problem: str = "sinh"
    problem_params: Dict[str, float] = field(default_factory=dict)
    methods: List[str] = field(default_factory=lambda: ["gauss1", "gauss2", "gauss3"])
    master_seed: int = study_config.MASTER_SEED
    n_paths: int = study_config.N_PATHS
    finest_level: int = study_config.FINEST_LEVEL
    levels: List[int] = field(default_factory=lambda: list(study_config.LEVELS))
    error_floor: float = study_config.ERROR_FLOOR
    reference: str = "auto"          # auto | exact | finest
    weak_functional: str = "identity"
    weak_order: int = 2
    workers: int = study_config.WORKERS
    block_size: int = study_config.BLOCK_SIZE
    show_progress: bool = study_config.SHOW_PROGRESS
    stage_solver: StageSolveConfig = field(default_factory=StageSolveConfig)
    tableaus: Dict[str, ButcherTableau] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError(f"Number of paths must be >= 1, got {self.n_paths}")
        if not self.methods:
            raise ValidationError("At least one method is required")
        if not self.levels:
            raise ValidationError("At least one level is required")
        if any(level < 0 for level in self.levels):
            raise ValidationError(f"Levels must be non-negative, got {self.levels}")
        if max(self.levels) > self.finest_level:
            raise ValidationError(f"Levels {self.levels} exceed the finest level {self.finest_level}")
        if not self.error_floor > 0:
            raise ValidationError(f"error_floor must be positive, got {self.error_floor}")
        if self.reference not in ("auto", "exact", "finest"):
            raise ValidationError(f"Unknown reference mode '{self.reference}'")
        if self.weak_order not in WEAK_ORDERS:
            raise ValidationError(f"Unsupported weak order {self.weak_order}")
        if self.block_size < 1:
            raise ValidationError(f"block_size must be >= 1, got {self.block_size}")
        self.levels = sorted(set(self.levels))

    def resolve_tableau(self, name: str) -> ButcherTableau:
        return self.tableaus.get(name) or builtin(name)

    def echo(self) -> Dict[str, Any]:
        """Параметры, влияющие на результат (без числа потоков)"""
        return {
            "problem": self.problem,
            "problem_params": dict(self.problem_params),
            "methods": list(self.methods),
            "master_seed": self.master_seed,
            "n_paths": self.n_paths,
            "finest_level": self.finest_level,
            "levels": list(self.levels),
            "error_floor": self.error_floor,
            "reference": self.reference,
            "weak_functional": self.weak_functional,
            "weak_order": self.weak_order,
            "block_size": self.block_size,
            "stage_solver": {"method": self.stage_solver.method, "tol": self.stage_solver.tol,
                             "max_iter": self.stage_solver.max_iter},
        }


@dataclass
class ConvergenceRow:
    method: str
    s: int
    h: float
    level: int
    mse: float
    mae: float
    stderr: float
    n_ok: int
    n_failed: int
    estimate: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    @property
    def valid(self) -> bool:
        return self.n_ok > 0


@dataclass
class OrderFit:
    order: Optional[float]
    constant: Optional[float]
    n_used: int
    reason: Optional[str] = None


@dataclass
class ConvergenceReport:
    kind: str
    rows: List[ConvergenceRow]
    fits: Dict[str, OrderFit]
    predicted: Dict[str, Dict[str, int]]
    metadata: Dict[str, Any]

    def rows_for(self, method: str) -> List[ConvergenceRow]:
        return [row for row in self.rows if row.method == method]

    def fitted_order(self, method: str) -> Optional[float]:
        return self.fits[method].order

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{col: getattr(row, col) for col in CSV_COLUMNS} for row in self.rows],
                            columns=CSV_COLUMNS)

    def to_document(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "rows": [dict(asdict(row), valid=row.valid) for row in self.rows],
            "fits": {name: asdict(fit) for name, fit in self.fits.items()},
            "predicted": self.predicted,
            "metadata": self.metadata,
        }

    def to_csv(self) -> str:
        return StorageService.frame_to_csv(self.to_frame())

    def to_json(self) -> str:
        return StorageService.to_json(self.to_document())

    def summary(self) -> str:
        lines = []
        for name, fit in self.fits.items():
            predicted = self.predicted.get(name, {})
            fitted = f"{fit.order:.3f}" if fit.order is not None else f"n/a ({fit.reason})"
            lines.append(f"{name}: p_num={fitted}, p_d={predicted.get('p_d')}, "
                         f"predicted={predicted.get('sde_order')}")
        return "\n".join(lines)


def fit_order(rows: Sequence[Tuple[float, float]], error_floor: float = study_config.ERROR_FLOOR) -> OrderFit:
    """МНК-наклон log(error) от log(h) по строкам с error > error_floor"""
    usable = [(h, e) for h, e in rows if e is not None and math.isfinite(e) and e > error_floor]
    if len(usable) < 2:
        return OrderFit(order=None, constant=None, n_used=len(usable), reason="not enough data")
    h = np.array([u[0] for u in usable], dtype=np.float64)
    e = np.array([u[1] for u in usable], dtype=np.float64)
    slope, intercept = np.polyfit(np.log(h), np.log(e), 1)
    return OrderFit(order=float(slope), constant=float(np.exp(intercept)), n_used=len(usable))


def _worker_count(requested: int) -> int:
    if requested and requested > 0:
        return requested
    return psutil.cpu_count(logical=True) or 1


def _blocks(n_paths: int, block_size: int) -> List[Tuple[int, int, int]]:
    return [(b, start, min(start + block_size, n_paths))
            for b, start in enumerate(range(0, n_paths, block_size))]


def _run_blocks(cfg: StudyConfig, run_block: Callable, description: str) -> List[Any]:
    """Блоки путей в пуле потоков; результаты в порядке индексов блоков"""
    blocks = _blocks(cfg.n_paths, cfg.block_size)
    results: List[Any] = [None] * len(blocks)
    with ThreadPoolExecutor(max_workers=_worker_count(cfg.workers)) as pool:
        futures = {pool.submit(run_block, *block): block[0] for block in blocks}
        for future in tqdm(as_completed(futures), total=len(futures), desc=description,
                           disable=not cfg.show_progress):
            results[futures[future]] = future.result()
    return results


def _predicted(tableau: ButcherTableau) -> Dict[str, int]:
    check = deterministic_order(tableau, max_check=order_config.MAX_CHECK)
    return {"p_d": check.order, "sde_order": check.sde_order}


def _strong_row(name: str, tableau: ButcherTableau, h: float, level: int, errors: np.ndarray) -> ConvergenceRow:
    ok = np.isfinite(errors)
    n_ok = int(np.count_nonzero(ok))
    n_failed = int(errors.shape[0] - n_ok)
    if n_ok == 0:
        logger.warning(f"{name}: all samples failed at level {level}")
        return ConvergenceRow(name, tableau.s, h, level, math.nan, math.nan, math.nan, 0, n_failed)
    err = errors[ok]
    squared = err * err
    mean_sq = float(np.mean(squared))
    rms = math.sqrt(mean_sq)
    mae = float(np.mean(err))
    # дельта-метод для sqrt(mean)
    se_mean_sq = float(np.std(squared, ddof=1)) / math.sqrt(n_ok) if n_ok > 1 else 0.0
    stderr = se_mean_sq / (2.0 * rms) if rms > 0 else 0.0
    return ConvergenceRow(name, tableau.s, h, level, rms, mae, stderr, n_ok, n_failed)


def _report(kind: str, cfg: StudyConfig, problem: SdeProblem, rows: List[ConvergenceRow],
            tableaus: Dict[str, ButcherTableau], extra: Dict[str, Any]) -> ConvergenceReport:
    fits = {}
    for name in cfg.methods:
        points = [(row.h, row.mse) for row in rows if row.method == name and row.valid]
        fits[name] = fit_order(points, cfg.error_floor)
    predicted = {name: _predicted(tableau) for name, tableau in tableaus.items()}
    metadata = {"config": cfg.echo(), "problem": problem.describe(), **extra}
    report = ConvergenceReport(kind=kind, rows=rows, fits=fits, predicted=predicted, metadata=metadata)
    logger.info(f"{kind} study finished:\n{report.summary()}")
    return report


def mean_square_study(cfg: StudyConfig) -> ConvergenceReport:
    """Среднеквадратичная ошибка в T по M путям, одна траектория Винера на все уровни"""
    problem = get_problem(cfg.problem, **cfg.problem_params)
    use_exact = cfg.reference == "exact" or (cfg.reference == "auto" and problem.exact is not None)
    if use_exact and problem.exact is None:
        raise ValidationError(f"Problem '{problem.name}' has no exact solution; use the finest-level reference")
    if not use_exact and cfg.finest_level in cfg.levels:
        logger.warning("Finest level coincides with the self-convergence reference level")
    tableaus = {name: cfg.resolve_tableau(name) for name in cfg.methods}
    spec = problem.spec
    finest = cfg.finest_level

    def dmu_at(dW: np.ndarray, level: int) -> np.ndarray:
        h = spec.length / 2 ** level
        return spec.lam * h + spec.sigma * coarsen(dW, finest - level)

    def run_block(block_index: int, start: int, stop: int) -> Dict[Tuple[str, int], np.ndarray]:
        dW = np.stack([generate_path(spec, finest, derive_seed(cfg.master_seed, i)).dW_fine
                       for i in range(start, stop)])
        out: Dict[Tuple[str, int], np.ndarray] = {}
        if use_exact:
            wiener_total = coarsen(dW, finest).sum(axis=-1)
            exact_final = problem.exact(spec.T, wiener_total)
        for name, tableau in tableaus.items():
            if use_exact:
                reference, ref_failed = exact_final, np.zeros(stop - start, dtype=bool)
            else:
                ref = integrate_batch(problem, tableau, dmu_at(dW, finest), cfg.stage_solver)
                reference, ref_failed = ref.final, ref.failed
            for level in cfg.levels:
                result = integrate_batch(problem, tableau, dmu_at(dW, level), cfg.stage_solver)
                errors = np.linalg.norm(result.final - reference, axis=1)
                errors[result.failed | ref_failed] = np.nan
                out[(name, level)] = errors
        return out

    logger.info(f"Mean-square study: problem={problem.name}, methods={cfg.methods}, "
                f"M={cfg.n_paths}, levels={cfg.levels}, seed={cfg.master_seed}")
    block_results = _run_blocks(cfg, run_block, "mean-square")

    rows = []
    for name, tableau in tableaus.items():
        for level in cfg.levels:
            errors = np.concatenate([block[(name, level)] for block in block_results])
            rows.append(_strong_row(name, tableau, spec.length / 2 ** level, level, errors))
    return _report("mean-square", cfg, problem, rows, tableaus,
                   {"reference": "exact" if use_exact else f"finest level {finest}"})


def weak_reference(problem: SdeProblem, functional: str, n_nodes: int = study_config.QUADRATURE_NODES) -> float:
    """E g(X(T)): замкнутая форма, если известна, иначе квадратура Гаусса-Эрмита по W(T)"""
    g = get_functional(functional)
    if functional == "constant":
        return 1.0
    spec = problem.spec
    if problem.name == "sinh" and functional == "identity" and spec.t0 == 0 and spec.lam == 1:
        return sinh_weak_mean(float(spec.sigma), float(spec.T))
    if problem.exact is None:
        raise ValidationError(f"Problem '{problem.name}' has no exact solution for a weak reference")
    return gauss_hermite_expectation(problem, g, n_nodes)


def gauss_hermite_expectation(problem: SdeProblem, g: Callable[[np.ndarray], np.ndarray],
                              n_nodes: int = study_config.QUADRATURE_NODES) -> float:
    nodes, weights = special.roots_hermitenorm(n_nodes)
    w = math.sqrt(problem.spec.length) * nodes
    values = g(problem.exact(problem.spec.T, w))
    return float(np.sum(weights * values) / math.sqrt(2.0 * math.pi))


def weak_study(cfg: StudyConfig) -> ConvergenceReport:
    """|E g(Y_N) - E g(X(T))| при дискретных слабых приращениях"""
    problem = get_problem(cfg.problem, **cfg.problem_params)
    g = get_functional(cfg.weak_functional)
    reference = weak_reference(problem, cfg.weak_functional)
    tableaus = {name: cfg.resolve_tableau(name) for name in cfg.methods}
    spec = problem.spec
    z = float(stats.norm.ppf(0.975))

    logger.info(f"Weak study: problem={problem.name}, g={cfg.weak_functional}, order={cfg.weak_order}, "
                f"methods={cfg.methods}, M={cfg.n_paths}, levels={cfg.levels}, reference={reference:.12g}")

    samples: Dict[Tuple[str, int], np.ndarray] = {}
    for level in cfg.levels:
        h = spec.length / 2 ** level
        n_steps = 2 ** level

        def run_block(block_index: int, start: int, stop: int, level=level, h=h, n_steps=n_steps):
            rng = make_rng(derive_seed(cfg.master_seed, _WEAK_STREAM, level, block_index))
            dmu = weak_increments(cfg.weak_order, h, (stop - start, n_steps), rng, spec)
            out = {}
            for name, tableau in tableaus.items():
                result = integrate_batch(problem, tableau, dmu, cfg.stage_solver)
                values = np.asarray(g(result.final), dtype=np.float64)
                values[result.failed] = np.nan
                out[name] = values
            return out

        block_results = _run_blocks(cfg, run_block, f"weak level {level}")
        for name in tableaus:
            samples[(name, level)] = np.concatenate([block[name] for block in block_results])

    rows = []
    for name, tableau in tableaus.items():
        for level in cfg.levels:
            values = samples[(name, level)]
            ok = np.isfinite(values)
            n_ok = int(np.count_nonzero(ok))
            h = spec.length / 2 ** level
            if n_ok == 0:
                rows.append(ConvergenceRow(name, tableau.s, h, level, math.nan, math.nan, math.nan, 0, values.size))
                continue
            estimate = float(np.mean(values[ok]))
            stderr = float(np.std(values[ok], ddof=1)) / math.sqrt(n_ok) if n_ok > 1 else 0.0
            rows.append(ConvergenceRow(name, tableau.s, h, level, abs(estimate - reference), math.nan, stderr,
                                       n_ok, int(values.size - n_ok), estimate=estimate,
                                       ci_low=estimate - z * stderr, ci_high=estimate + z * stderr))
    return _report("weak", cfg, problem, rows, tableaus, {"reference_value": reference})


@dataclass
class DriftSeries:
    method: str
    times: np.ndarray
    drifts: Dict[str, np.ndarray]
    failed_step: Optional[int] = None

    @property
    def max_drift(self) -> Dict[str, float]:
        return {name: float(np.max(np.abs(values))) if values.size else 0.0
                for name, values in self.drifts.items()}


@dataclass
class DriftReport:
    series: List[DriftSeries]
    metadata: Dict[str, Any]

    def by_method(self, method: str) -> DriftSeries:
        for item in self.series:
            if item.method == method:
                return item
        raise KeyError(method)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for item in self.series:
            frame = pd.DataFrame({"method": item.method, "t": item.times})
            for name, values in item.drifts.items():
                frame[name] = values
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def to_document(self) -> Dict[str, Any]:
        return {
            "metadata": self.metadata,
            "methods": {
                item.method: {
                    "max_drift": item.max_drift,
                    "failed_step": item.failed_step,
                    "times": item.times,
                    "drifts": item.drifts,
                } for item in self.series
            },
        }


def invariant_drift_study(problem: SdeProblem, methods: Sequence[str], h: float, horizon: float, seed: int,
                          cfg: Optional[StageSolveConfig] = None,
                          tableaus: Optional[Dict[str, ButcherTableau]] = None) -> DriftReport:
    """Одна траектория на метод по общему пути; I(Y_n) - I(Y_0) для всех инвариантов"""
    if not problem.invariants:
        raise ValidationError(f"Problem '{problem.name}' has no invariants")
    if not h > 0 or not horizon > 0:
        raise ValidationError(f"Need h > 0 and horizon > 0, got h={h}, horizon={horizon}")
    n_steps = int(round(horizon / h))
    if n_steps < 1 or not math.isclose(n_steps * h, horizon, rel_tol=1e-9):
        raise ValidationError(f"Horizon {horizon} is not a multiple of h={h}")
    tableaus = tableaus or {}

    spec = replace(problem.spec, T=problem.spec.t0 + n_steps * h)
    path = generate_path(spec, 0, seed, base_cells=n_steps)
    logger.info(f"Invariant drift: problem={problem.name}, methods={list(methods)}, h={h}, steps={n_steps}")

    series = []
    for name in methods:
        tableau = tableaus.get(name) or builtin(name)
        failed_step = None
        try:
            trajectory = integrate(problem, tableau, path, 0, cfg)
        except StepFailureError as e:
            trajectory = e.trajectory
            failed_step = e.step_index
            logger.warning(f"{name}: drift series truncated at step {failed_step}")
        drifts = {inv: np.asarray(fn(trajectory.states)) - fn(trajectory.states[0])
                  for inv, fn in problem.invariants.items()}
        item = DriftSeries(method=name, times=trajectory.times, drifts=drifts, failed_step=failed_step)
        logger.info(f"{name}: max drift {item.max_drift}")
        series.append(item)

    metadata = {"problem": problem.describe(), "h": h, "horizon": horizon, "seed": seed, "steps": n_steps}
    return DriftReport(series=series, metadata=metadata)
