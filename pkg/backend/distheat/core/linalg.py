"""
Dense matrix kernels and weighted norms shared by every module.

Matrices are plain float64 ``numpy.ndarray`` values. Reductions run in a fixed
left-to-right order over sites so results do not depend on thread count.
"""

from enum import Enum
from typing import Sequence, Union

import numpy as np

from distheat.core.errors import DimensionError, ValidationError

SYMMETRY_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12

# Power iteration for the spectral norm
POWER_ITER_MAX = 10_000
POWER_ITER_RTOL = 1e-10
POWER_ITER_SEED = 20240101

ArrayLike = Union[Sequence[float], np.ndarray]


class MatrixNorm(str, Enum):
    one = "one"
    two = "two"
    inf = "inf"
    frobenius = "frobenius"


def as_matrix(values: ArrayLike, name: str = "matrix") -> np.ndarray:
    """Return a finite 2-D float64 array, raising on anything else"""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T) / 2, exactly symmetric in floating point"""
    return (a + a.T) / 2.0


def is_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    return a.shape[0] == a.shape[1] and bool(np.max(np.abs(a - a.T), initial=0.0) <= tol)


def validate_weights(weights: ArrayLike) -> np.ndarray:
    """Site weights must be positive and sum to one"""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError("weights must be a non-empty vector")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be positive and finite")
    if abs(float(np.sum(w)) - 1.0) > WEIGHT_SUM_TOL:
        raise ValidationError(f"weights must sum to 1, got {float(np.sum(w))!r}")
    return w


def weights_from_sizes(sizes: Sequence[int]) -> np.ndarray:
    """n_m / N"""
    n = np.asarray(sizes, dtype=np.float64)
    if n.ndim != 1 or n.size == 0 or np.any(n <= 0):
        raise ValidationError("sample sizes must be positive")
    return n / n.sum()


def _check_pair(a: np.ndarray, weights: np.ndarray) -> None:
    if a.shape[0] != weights.shape[0]:
        raise DimensionError(
            f"length mismatch: vector has {a.shape[0]} entries, "
            f"weights have {weights.shape[0]}"
        )


def weighted_l1_norm(a: ArrayLike, weights: ArrayLike) -> float:
    """sum_m w_m |a_m|"""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    _check_pair(a, w)
    return float(np.sum(w * np.abs(a)))


def weighted_l2_norm(a: ArrayLike, weights: ArrayLike) -> float:
    """sqrt(sum_m w_m a_m^2)"""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    _check_pair(a, w)
    return float(np.sqrt(np.sum(w * a * a)))


def weighted_l1_entrywise(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted l1 norm over the leading (site) axis of an M x p x p stack"""
    out = np.zeros(stack.shape[1:])
    for m in range(stack.shape[0]):
        out += weights[m] * np.abs(stack[m])
    return out


def weighted_l2_entrywise(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted l2 norm over the leading (site) axis of an M x p x p stack"""
    out = np.zeros(stack.shape[1:])
    for m in range(stack.shape[0]):
        out += weights[m] * stack[m] * stack[m]
    return np.sqrt(out)


def weighted_sum(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_m w_m A_m accumulated in site order"""
    out = np.zeros(stack.shape[1:])
    for m in range(stack.shape[0]):
        out += weights[m] * stack[m]
    return out


def _spectral_norm(a: np.ndarray) -> float:
    gram = a.T @ a
    rng = np.random.default_rng(POWER_ITER_SEED)
    v = rng.standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(POWER_ITER_MAX):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        w /= norm_w
        # A^T A is PSD, so the iterate never flips sign
        converged = np.linalg.norm(w - v) <= POWER_ITER_RTOL
        v = w
        if converged:
            break
    rayleigh = float(v @ (gram @ v))
    return float(np.sqrt(max(rayleigh, 0.0)))


def matrix_norm(a: ArrayLike, kind: Union[MatrixNorm, str]) -> float:
    """Matrix 1-, 2-, inf- or Frobenius norm"""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError("matrix_norm requires a non-empty 2-D matrix")
    kind = MatrixNorm(kind)
    if kind is MatrixNorm.one:
        return float(np.max(np.sum(np.abs(a), axis=0)))
    if kind is MatrixNorm.inf:
        return float(np.max(np.sum(np.abs(a), axis=1)))
    if kind is MatrixNorm.frobenius:
        return float(np.sqrt(np.sum(a * a)))
    return _spectral_norm(a)


def center(x: np.ndarray) -> np.ndarray:
    """Subtract column means"""
    return x - x.mean(axis=0, keepdims=True)


def sample_covariance(x: np.ndarray) -> np.ndarray:
    """Centered sample covariance with 1/n normalization, exactly symmetric"""
    xc = center(x)
    return symmetrize(xc.T @ xc / xc.shape[0])
