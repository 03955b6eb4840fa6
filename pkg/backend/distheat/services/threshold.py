"""
Thresholding rules: soft, hard, SCAD and MCP.

Every rule T satisfies T(x) = 0 for |x| <= level and |T(x) - x| <= level.
Multivariate rules act radially: T(x) = x * g(||x||_{2,w}) / ||x||_{2,w} where
g is the univariate rule, so the output is a nonnegative multiple of x.
"""

from typing import Sequence, Union

import numpy as np

from distheat.core.errors import ValidationError
from distheat.core.linalg import (
    validate_weights,
    weighted_l2_entrywise,
    weighted_l2_norm,
)
from distheat.schemas.config import ThresholdFamily, ThresholdRule

ArrayOrFloat = Union[np.ndarray, float]


def threshold_array(rule: ThresholdRule, x: ArrayOrFloat, level: ArrayOrFloat) -> np.ndarray:
    """Entrywise univariate thresholding; ``level`` broadcasts against ``x``"""
    x = np.asarray(x, dtype=np.float64)
    level = np.asarray(level, dtype=np.float64)
    if np.any(level < 0):
        raise ValidationError("threshold level must be >= 0")

    ax = np.abs(x)
    sign = np.sign(x)
    family = ThresholdFamily(rule.family)

    if family is ThresholdFamily.hard:
        return np.where(ax > level, x, 0.0)

    soft = sign * np.maximum(ax - level, 0.0)
    if family is ThresholdFamily.soft:
        return soft

    if family is ThresholdFamily.scad:
        a = rule.scad_a
        middle = ((a - 1.0) * x - sign * a * level) / (a - 2.0)
        return np.where(ax <= 2.0 * level, soft, np.where(ax <= a * level, middle, x))

    # mcp
    g = rule.mcp_gamma
    middle = sign * g * (ax - level) / (g - 1.0)
    return np.where(ax <= level, 0.0, np.where(ax <= g * level, middle, x))


def apply_uni(rule: ThresholdRule, x: float, level: float) -> float:
    return float(threshold_array(rule, x, level))


def radial_threshold(
    rule: ThresholdRule, stack: np.ndarray, level: ArrayOrFloat, weights: np.ndarray
) -> np.ndarray:
    """
    Radial thresholding along the leading (site) axis.

    ``stack`` is M x ... and ``level`` broadcasts against ``stack.shape[1:]``.
    """
    radius = weighted_l2_entrywise(stack, weights)
    shrunk = threshold_array(rule, radius, level)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(radius > 0.0, shrunk / radius, 0.0)
    return stack * factor[None, ...]


def apply_multi(
    rule: ThresholdRule,
    x: Sequence[float],
    level: float,
    weights: Sequence[float],
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = validate_weights(weights)
    radius = weighted_l2_norm(x, w)  # raises on length mismatch
    if level < 0:
        raise ValidationError("threshold level must be >= 0")
    if radius <= level or radius == 0.0:
        return np.zeros_like(x)
    return x * (apply_uni(rule, radius, level) / radius)
