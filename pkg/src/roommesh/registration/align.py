"""Closed-form scale/shift alignment of estimated depth to condition depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import DepthMap, DimensionError


class InsufficientOverlapError(ValueError):
    pass


class DegenerateFitError(ValueError):
    def __init__(self, msg: str, fallback: "AffineDepthParams"):
        super().__init__(msg)
        self.fallback = fallback


@dataclass(frozen=True)
class AffineDepthParams:
    gamma: float
    beta: float


def fit_scale_shift(est: DepthMap, cond: DepthMap) -> AffineDepthParams:
    """Least-squares (gamma, beta) minimizing ||gamma * est + beta - cond||^2 on the joint mask.

    Raises DegenerateFitError (carrying the shift-only fallback) when the
    estimate is constant or the fitted scale is not positive.
    """
    if est.resolution != cond.resolution:
        raise DimensionError("depth maps differ in resolution")
    joint = est.mask & cond.mask
    n = int(joint.sum())
    if n < 2:
        raise InsufficientOverlapError(f"only {n} jointly valid pixels")
    x = est.values[joint]
    y = cond.values[joint]
    mx, my = x.mean(), y.mean()
    dx = x - mx
    var = float(np.dot(dx, dx) / n)
    fallback = AffineDepthParams(1.0, float(my - mx))
    if var < 1e-12:
        raise DegenerateFitError("estimated depth has zero variance on the overlap", fallback)
    gamma = float(np.dot(dx, y - my) / n / var)
    if not gamma > 0:
        raise DegenerateFitError(f"fitted scale {gamma:.4g} is not positive", fallback)
    return AffineDepthParams(gamma, float(my - gamma * mx))


def apply_affine(depth: DepthMap, p: AffineDepthParams) -> DepthMap:
    vals = np.where(depth.mask, p.gamma * depth.values + p.beta, 0.0)
    return DepthMap(vals, depth.mask & (vals > 0))


def align(est: DepthMap, cond: DepthMap) -> tuple[DepthMap, AffineDepthParams, str]:
    """Fit and apply, falling back as documented; returns the fit status too."""
    try:
        p = fit_scale_shift(est, cond)
        status = "ok"
    except DegenerateFitError as exc:
        p, status = exc.fallback, "degenerate"
    except InsufficientOverlapError:
        p, status = AffineDepthParams(1.0, 0.0), "no-overlap"
    return apply_affine(est, p), p, status
