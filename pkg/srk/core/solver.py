"""
Шаг стохастического метода Рунге-Кутты с приращением Delta mu:

    H_i     = Y_n + dmu * sum_j a_ij f(H_j)
    Y_{n+1} = Y_n + dmu * sum_i b_i f(H_i)

Все функции работают с пачкой траекторий (B, d); неявные стадии решаются
методом Ньютона или простой итерацией, несошедшиеся образцы маскируются.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import pandas as pd

from srk.config.constants import STAGE_SOLVERS
from srk.config.settings import solver_config
from srk.core.driving import DrivingPath, increments_at_level, weak_increments
from srk.core.errors import NumericalBlowupError, StepFailureError, ValidationError
from srk.core.problems import SdeProblem, batched_field
from srk.core.tableau import ButcherTableau

logger = logging.getLogger(__name__)

_FD_SCALE = float(np.sqrt(np.finfo(np.float64).eps))


@dataclass(frozen=True)
class StageSolveConfig:
    method: str = solver_config.STAGE_SOLVER
    tol: float = solver_config.STAGE_TOL
    max_iter: int = solver_config.STAGE_MAX_ITER
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.method not in STAGE_SOLVERS:
            raise ValidationError(f"Unknown stage solver '{self.method}'. Available: {', '.join(STAGE_SOLVERS)}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class StepOutcome:
    y: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    failed: np.ndarray
    blowup: np.ndarray


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    dmu_used: np.ndarray
    iterations: np.ndarray
    failed_step: Optional[int] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failed_step is None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for k in range(self.states.shape[1]):
            frame[f"y{k}"] = self.states[:, k]
        return frame


@dataclass
class BatchResult:
    final: np.ndarray
    failed: np.ndarray
    failed_step: np.ndarray
    iterations: np.ndarray

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.failed))


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Центральные разности, шаг sqrt(eps)*(1+|x_q|); J[..., p, q] = df_p/dx_q"""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if x.size:
        f = batched_field(f, x.reshape(-1, d)[0])
    eps = _FD_SCALE * (1.0 + np.abs(x))
    J = np.empty(x.shape + (d,))
    for q in range(d):
        e = np.zeros_like(x)
        e[..., q] = eps[..., q]
        J[..., :, q] = (f(x + e) - f(x - e)) / (2.0 * eps[..., q, None])
    return J


def _stage_residual(A: np.ndarray, y: np.ndarray, dmu: np.ndarray, H: np.ndarray, F: np.ndarray) -> np.ndarray:
    return H - y[:, None, :] - dmu[:, None, None] * np.einsum("ij,bjd->bid", A, F)


def _newton_update(tableau: ButcherTableau, f, H: np.ndarray, dmu: np.ndarray, R: np.ndarray,
                   cfg: StageSolveConfig):
    n, s, d = H.shape
    Jf = cfg.jacobian(H) if cfg.jacobian is not None else fd_jacobian(f, H)
    # J[b, i, p, j, q] = delta_ij delta_pq - dmu_b a_ij f'(H_j)[p, q]
    J = -dmu[:, None, None, None, None] * np.einsum("ij,bjpq->bipjq", tableau.A, Jf)
    J = J.reshape(n, s * d, s * d) + np.eye(s * d)
    rhs = -R.reshape(n, s * d)
    singular = np.zeros(n, dtype=bool)
    try:
        delta = np.linalg.solve(J, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        delta = np.zeros_like(rhs)
        for k in range(n):
            try:
                delta[k] = np.linalg.solve(J[k], rhs[k])
            except np.linalg.LinAlgError:
                singular[k] = True
    return delta.reshape(n, s, d), singular


def _explicit_step(tableau: ButcherTableau, f, y: np.ndarray, dmu: np.ndarray) -> np.ndarray:
    B, d = y.shape
    K = np.empty((B, tableau.s, d))
    for i in range(tableau.s):
        H_i = y + dmu[:, None] * np.einsum("j,bjd->bd", tableau.A[i, :i], K[:, :i])
        K[:, i] = f(H_i)
    return y + dmu[:, None] * np.einsum("i,bid->bd", tableau.b, K)


def _implicit_step(tableau: ButcherTableau, f, y: np.ndarray, dmu: np.ndarray, cfg: StageSolveConfig):
    B, d = y.shape
    s = tableau.s
    H = np.repeat(y[:, None, :], s, axis=1)  # начальное приближение H_i = y
    scale = cfg.tol * (1.0 + np.max(np.abs(y), axis=1))
    residual = np.full(B, np.inf)
    iterations = np.zeros(B, dtype=np.int64)
    converged = np.zeros(B, dtype=bool)
    finished = np.zeros(B, dtype=bool)
    blowup = np.zeros(B, dtype=bool)

    for it in range(cfg.max_iter + 1):
        idx = np.flatnonzero(~finished)
        if idx.size == 0:
            break
        H_a = H[idx]
        F = f(H_a)
        R = _stage_residual(tableau.A, y[idx], dmu[idx], H_a, F)
        res = np.max(np.abs(R).reshape(idx.size, -1), axis=1)
        residual[idx] = res

        bad = ~np.isfinite(res)
        good = res <= scale[idx]
        blowup[idx[bad]] = True
        converged[idx[good]] = True
        finished[idx[good | bad]] = True

        live = ~(good | bad)
        if it == cfg.max_iter:
            live[:] = False
        # принятые стадии уточняются ещё одной итерацией
        update = live | good
        if not update.any():
            break
        if cfg.method == "fixed_point":
            delta = -R[update]
            singular = np.zeros(int(update.sum()), dtype=bool)
        else:
            delta, singular = _newton_update(tableau, f, H_a[update], dmu[idx[update]], R[update], cfg)
        targets = idx[update]
        finished[targets[singular]] = True
        H[targets] = H_a[update] + delta
        iterations[targets] += 1
        if not live.any():
            break

    K = f(H)
    y_new = y + dmu[:, None] * np.einsum("i,bid->bd", tableau.b, K)
    return y_new, iterations, residual, ~converged, blowup


def step_batch(tableau: ButcherTableau, f, y: np.ndarray, dmu, cfg: Optional[StageSolveConfig] = None,
               force_iterative: bool = False) -> StepOutcome:
    """Один шаг для пачки состояний y (B, d) с приращениями dmu (B,)"""
    cfg = cfg or StageSolveConfig()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValidationError(f"Batched state must have shape (B, d), got {y.shape}")
    dmu = np.broadcast_to(np.asarray(dmu, dtype=np.float64), y.shape[:1])
    if not np.all(np.isfinite(dmu)):
        raise ValidationError("Increment dmu must be finite")
    if y.shape[0]:
        f = batched_field(f, y[0])

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if tableau.explicit and not force_iterative:
            y_new = _explicit_step(tableau, f, y, dmu)
            iterations = np.zeros(y.shape[0], dtype=np.int64)
            residual = np.zeros(y.shape[0])
            failed = np.zeros(y.shape[0], dtype=bool)
            blowup = np.zeros(y.shape[0], dtype=bool)
        else:
            y_new, iterations, residual, failed, blowup = _implicit_step(tableau, f, y, dmu, cfg)

    nonfinite = ~np.all(np.isfinite(y_new), axis=1)
    blowup = blowup | nonfinite
    failed = failed | blowup
    return StepOutcome(y=y_new, iterations=iterations, residual=residual, failed=failed, blowup=blowup)


def step(tableau: ButcherTableau, f, y, dmu: float, cfg: Optional[StageSolveConfig] = None) -> np.ndarray:
    """Один шаг для одного состояния; при неудаче - исключение"""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = step_batch(tableau, f, y[None, :], np.array([dmu]), cfg)
    if out.blowup[0]:
        raise NumericalBlowupError(f"{tableau.name}: non-finite values in step (dmu={dmu})",
                                   residual=float(out.residual[0]), iterations=int(out.iterations[0]))
    if out.failed[0]:
        raise StepFailureError(f"{tableau.name}: stage solve did not converge (residual {out.residual[0]:.3e})",
                               residual=float(out.residual[0]), iterations=int(out.iterations[0]))
    return out.y[0]


def _problem_config(problem: SdeProblem, cfg: Optional[StageSolveConfig]) -> StageSolveConfig:
    cfg = cfg or StageSolveConfig()
    if cfg.jacobian is None and problem.jacobian is not None:
        cfg = replace(cfg, jacobian=problem.jacobian)
    return cfg


def integrate(problem: SdeProblem, tableau: ButcherTableau, path: DrivingPath, level: int,
              cfg: Optional[StageSolveConfig] = None) -> Trajectory:
    """Траектория на сетке уровня level; при первой неудаче - исключение с частичной траекторией"""
    cfg = _problem_config(problem, cfg)
    dmu = increments_at_level(path, level)
    n_steps = dmu.shape[0]
    h = path.step_size(level)
    times = path.spec.t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, problem.dim))
    states[0] = problem.x0
    iterations = np.zeros(n_steps, dtype=np.int64)

    for n in range(n_steps):
        out = step_batch(tableau, problem.f, states[n][None, :], dmu[n:n + 1], cfg)
        iterations[n] = out.iterations[0]
        if out.failed[0]:
            reason = "blowup" if out.blowup[0] else "stage solve failed"
            partial = Trajectory(times[:n + 1], states[:n + 1], dmu[:n], iterations[:n], failed_step=n, failure=reason)
            logger.warning(f"{tableau.name} on {problem.name}: {reason} at step {n} (t={times[n]:.6g})")
            error_cls = NumericalBlowupError if out.blowup[0] else StepFailureError
            raise error_cls(f"{tableau.name}: {reason} at step {n}", residual=float(out.residual[0]),
                            iterations=int(out.iterations[0]), step_index=n, trajectory=partial)
        states[n + 1] = out.y[0]

    return Trajectory(times=times, states=states, dmu_used=dmu, iterations=iterations)


def integrate_batch(problem: SdeProblem, tableau: ButcherTableau, dmu: np.ndarray,
                    cfg: Optional[StageSolveConfig] = None) -> BatchResult:
    """B траекторий по строкам dmu (B, N); упавшие образцы замораживаются"""
    cfg = _problem_config(problem, cfg)
    dmu = np.asarray(dmu, dtype=np.float64)
    B, n_steps = dmu.shape
    y = np.repeat(problem.x0[None, :], B, axis=0)
    alive = np.ones(B, dtype=bool)
    failed_step = np.full(B, -1, dtype=np.int64)
    iterations = np.zeros(B, dtype=np.int64)

    for n in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        out = step_batch(tableau, problem.f, y[idx], dmu[idx, n], cfg)
        iterations[idx] += out.iterations
        y[idx[~out.failed]] = out.y[~out.failed]
        dead = idx[out.failed]
        failed_step[dead] = n
        alive[dead] = False

    failed = ~alive
    if failed.any():
        logger.debug(f"{tableau.name} on {problem.name}: {int(failed.sum())}/{B} samples failed")
    return BatchResult(final=y, failed=failed, failed_step=failed_step, iterations=iterations)


def integrate_weak(problem: SdeProblem, tableau: ButcherTableau, h: float, n_steps: int, order: int,
                   rng: np.random.Generator, cfg: Optional[StageSolveConfig] = None) -> np.ndarray:
    """Финальное состояние при независимых слабых приращениях на каждом шаге"""
    dmu = weak_increments(order, h, (1, n_steps), rng, problem.spec)
    result = integrate_batch(problem, tableau, dmu, cfg)
    if result.failed[0]:
        raise StepFailureError(f"{tableau.name}: weak run failed at step {int(result.failed_step[0])}",
                               step_index=int(result.failed_step[0]))
    return result.final[0]
