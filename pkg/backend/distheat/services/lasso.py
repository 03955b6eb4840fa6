"""
Cyclic coordinate descent for centered l1-penalized least squares.

    minimize (1/(2n)) ||y - X b||^2 + penalty * ||b||_1

Small problems run on the cached Gram form G = X^T X / n, c = X^T y / n;
wider designs fall back to residual updates.
"""

import logging
from typing import List, Optional

import numpy as np

from distheat.core.config import settings
from distheat.core.errors import DimensionError, ValidationError
from distheat.schemas.config import LassoConfig

logger = logging.getLogger(__name__)

CENTERING_TOL = 1e-10


def soft_threshold(x: float, level: float) -> float:
    if x > level:
        return x - level
    if x < -level:
        return x + level
    return 0.0


class LassoProblem:
    """Centered design / response pair with a nonnegative penalty"""

    def __init__(self, design: np.ndarray, response: np.ndarray, penalty: float):
        design = np.asarray(design, dtype=np.float64)
        response = np.asarray(response, dtype=np.float64)
        if design.ndim != 2 or response.ndim != 1:
            raise DimensionError("design must be n x q and response an n-vector")
        if design.shape[0] != response.shape[0]:
            raise DimensionError(
                f"design has {design.shape[0]} rows, response has {response.shape[0]}"
            )
        if not (np.all(np.isfinite(design)) and np.all(np.isfinite(response))):
            raise ValidationError("lasso inputs contain non-finite values")
        if not np.isfinite(penalty) or penalty < 0:
            raise ValidationError(f"penalty must be finite and >= 0, got {penalty!r}")

        scale = max(1.0, float(np.max(np.abs(design), initial=0.0)), float(np.max(np.abs(response), initial=0.0)))
        if np.max(np.abs(design.mean(axis=0)), initial=0.0) > CENTERING_TOL * scale or abs(
            response.mean()
        ) > CENTERING_TOL * scale:
            raise ValidationError("design columns and response must be centered")

        self.design = design
        self.response = response
        self.penalty = float(penalty)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def q(self) -> int:
        return self.design.shape[1]

    def gram(self) -> np.ndarray:
        return self.design.T @ self.design / self.n

    def correlation(self) -> np.ndarray:
        return self.design.T @ self.response / self.n

    def objective(self, coefficients: np.ndarray) -> float:
        resid = self.response - self.design @ coefficients
        return float(resid @ resid / (2 * self.n) + self.penalty * np.sum(np.abs(coefficients)))


class LassoSolution:
    """Coefficients plus convergence certificate"""

    def __init__(
        self,
        coefficients: np.ndarray,
        iterations: int,
        converged: bool,
        objective: float,
        kkt: float,
        objectives: Optional[List[float]] = None,
    ):
        self.coefficients = coefficients
        self.iterations = iterations
        self.converged = converged
        self.objective = objective
        self.kkt = kkt
        self.objectives = objectives or []

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
            "kkt": self.kkt,
            "nonzero": int(np.count_nonzero(self.coefficients)),
        }


def kkt_residual(gradient: np.ndarray, coefficients: np.ndarray, penalty: float) -> float:
    """
    Largest violation of the Lasso optimality conditions.

    ``gradient`` is c - G b, i.e. X^T (y - X b) / n.
    """
    active = coefficients != 0
    violation = np.where(
        active,
        np.abs(gradient - penalty * np.sign(coefficients)),
        np.maximum(np.abs(gradient) - penalty, 0.0),
    )
    return float(np.max(violation, initial=0.0))


def _gram_objective(gram, corr, coefficients, penalty, yy_half):
    quad = 0.5 * coefficients @ gram @ coefficients - corr @ coefficients
    return float(yy_half + quad + penalty * np.sum(np.abs(coefficients)))


def solve_gram(
    gram: np.ndarray,
    corr: np.ndarray,
    penalty: float,
    config: Optional[LassoConfig] = None,
    init: Optional[np.ndarray] = None,
    yy_half: float = 0.0,
) -> LassoSolution:
    """
    Coordinate descent on the Gram form.

    ``yy_half`` is y^T y / (2n); it only shifts the reported objective.
    """
    config = config or LassoConfig()
    q = corr.shape[0]
    if gram.shape != (q, q):
        raise DimensionError(f"gram has shape {gram.shape}, expected {(q, q)}")

    b = np.zeros(q) if init is None else np.array(init, dtype=np.float64)
    if b.shape != (q,):
        raise DimensionError(f"warm start has shape {b.shape}, expected {(q,)}")
    diag = np.diag(gram).copy()
    gb = gram @ b

    objectives = [_gram_objective(gram, corr, b, penalty, yy_half)]
    converged = False
    kkt = float("inf")
    iterations = 0
    while iterations < config.max_iters:
        iterations += 1
        max_change = 0.0
        for j in range(q):
            if diag[j] <= 0.0:
                if b[j] != 0.0:
                    b[j] = 0.0
                continue
            old = b[j]
            rho = corr[j] - gb[j] + diag[j] * old
            new = soft_threshold(rho, penalty) / diag[j]
            delta = new - old
            if delta != 0.0:
                b[j] = new
                gb += gram[:, j] * delta
                max_change = max(max_change, abs(delta))
        objectives.append(_gram_objective(gram, corr, b, penalty, yy_half))

        if max_change <= config.coord_tol:
            gb = gram @ b
            kkt = kkt_residual(corr - gb, b, penalty)
            if kkt <= config.kkt_tol:
                converged = True
                break

    if not converged:
        kkt = kkt_residual(corr - gram @ b, b, penalty)
        logger.warning(
            "Lasso did not converge in %d sweeps (kkt=%.3g)", iterations, kkt
        )

    return LassoSolution(
        coefficients=b,
        iterations=iterations,
        converged=converged,
        objective=objectives[-1],
        kkt=kkt,
        objectives=objectives,
    )


def _solve_residual(
    problem: LassoProblem, config: LassoConfig, init: Optional[np.ndarray]
) -> LassoSolution:
    x, y, n = problem.design, problem.response, problem.n
    b = np.zeros(problem.q) if init is None else np.array(init, dtype=np.float64)
    col_sq = np.einsum("ij,ij->j", x, x) / n
    resid = y - x @ b

    objectives = [problem.objective(b)]
    converged = False
    kkt = float("inf")
    iterations = 0
    while iterations < config.max_iters:
        iterations += 1
        max_change = 0.0
        for j in range(problem.q):
            if col_sq[j] <= 0.0:
                b[j] = 0.0
                continue
            old = b[j]
            rho = x[:, j] @ resid / n + col_sq[j] * old
            new = soft_threshold(rho, problem.penalty) / col_sq[j]
            delta = new - old
            if delta != 0.0:
                b[j] = new
                resid -= x[:, j] * delta
                max_change = max(max_change, abs(delta))
        objectives.append(problem.objective(b))

        if max_change <= config.coord_tol:
            resid = y - x @ b
            kkt = kkt_residual(x.T @ resid / n, b, problem.penalty)
            if kkt <= config.kkt_tol:
                converged = True
                break

    if not converged:
        kkt = kkt_residual(x.T @ (y - x @ b) / n, b, problem.penalty)
        logger.warning(
            "Lasso did not converge in %d sweeps (kkt=%.3g)", iterations, kkt
        )

    return LassoSolution(b, iterations, converged, objectives[-1], kkt, objectives)


def solve(
    problem: LassoProblem,
    config: Optional[LassoConfig] = None,
    init: Optional[np.ndarray] = None,
) -> LassoSolution:
    """Solve a Lasso problem, caching the Gram matrix for narrow designs"""
    config = config or LassoConfig()
    if problem.q <= settings.GRAM_CACHE_LIMIT:
        yy_half = float(problem.response @ problem.response) / (2 * problem.n)
        return solve_gram(
            problem.gram(),
            problem.correlation(),
            problem.penalty,
            config=config,
            init=init,
            yy_half=yy_half,
        )
    return _solve_residual(problem, config, init)
