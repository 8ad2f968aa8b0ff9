"""Numerically hardened Poincare ball kernel at constant negative curvature c.

Points live in the open ball {x in R^n : c * ||x||^2 < 1} carrying the
conformal factor lambda_x = 2 / (1 - c * ||x||^2).  All array functions accept
a trailing feature axis and broadcast over leading axes.  Every ball-valued
result is projected back to norm at most (1 - margin) / sqrt(c); atanh inputs
are clamped below 1 so boundary blow-up cannot occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PROJECTION_MARGIN",
    "Curvature",
    "BallPoint",
    "mobius_add",
    "mobius_matvec",
    "exp_origin",
    "log_origin",
    "exp_at",
    "log_at",
    "hyp_distance",
    "project_to_ball",
]

PROJECTION_MARGIN = 1e-5
_ATANH_MAX = 1.0 - 1e-15
_MIN_NORM = 1e-15


@dataclass(frozen=True)
class Curvature:
    """Positive curvature magnitude; the ball radius is 1/sqrt(c)."""

    c: float = 1.0

    def __post_init__(self) -> None:
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"curvature must be positive and finite, got {self.c}")

    @property
    def radius(self) -> float:
        return 1.0 / math.sqrt(self.c)


@dataclass(frozen=True, eq=False)
class BallPoint:
    """A validated point of the curvature-c ball."""

    coords: np.ndarray
    curvature: Curvature

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        limit = (1.0 - PROJECTION_MARGIN) * self.curvature.radius
        if np.linalg.norm(coords) > limit * (1.0 + 1e-12):
            raise ValueError("point lies outside the ball margin")

    @property
    def c(self) -> float:
        return self.curvature.c

    def _check_compatible(self, other: "BallPoint") -> None:
        if self.coords.shape != other.coords.shape:
            raise ValueError("dimension mismatch between ball points")
        if self.curvature.c != other.curvature.c:
            raise ValueError("curvature mismatch between ball points")


def _sq_norm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq_norm(x))


def _project_array(x: np.ndarray, c: float) -> np.ndarray:
    max_norm = (1.0 - PROJECTION_MARGIN) / math.sqrt(c)
    norm = _norm(x)
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, _MIN_NORM), 1.0)
    return x * scale


def _atanh(x: np.ndarray) -> np.ndarray:
    return np.arctanh(np.clip(x, 0.0, _ATANH_MAX))


def _mobius_add_array(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    x2 = _sq_norm(x)
    y2 = _sq_norm(y)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    denom = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return _project_array(num / np.maximum(denom, _MIN_NORM), c)


def _exp_origin_array(v: np.ndarray, c: float) -> np.ndarray:
    sqrt_c = math.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, _MIN_NORM)
    out = np.tanh(sqrt_c * norm) * v / (sqrt_c * safe)
    out = np.where(norm > 0.0, out, 0.0)
    return _project_array(out, c)


def _log_origin_array(y: np.ndarray, c: float) -> np.ndarray:
    sqrt_c = math.sqrt(c)
    norm = _norm(y)
    safe = np.maximum(norm, _MIN_NORM)
    out = _atanh(sqrt_c * norm) * y / (sqrt_c * safe)
    return np.where(norm > 0.0, out, 0.0)


def _lambda(x: np.ndarray, c: float) -> np.ndarray:
    return 2.0 / np.maximum(1.0 - c * _sq_norm(x), _MIN_NORM)


def _exp_at_array(x: np.ndarray, v: np.ndarray, c: float) -> np.ndarray:
    sqrt_c = math.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, _MIN_NORM)
    lam = _lambda(x, c)
    step = np.tanh(sqrt_c * lam * norm / 2.0) * v / (sqrt_c * safe)
    step = np.where(norm > 0.0, step, 0.0)
    return _mobius_add_array(x, step, c)


def _log_at_array(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    sqrt_c = math.sqrt(c)
    u = _mobius_add_array(-x, y, c)
    norm = _norm(u)
    safe = np.maximum(norm, _MIN_NORM)
    lam = _lambda(x, c)
    out = (2.0 / (sqrt_c * lam)) * _atanh(sqrt_c * norm) * u / safe
    return np.where(norm > 0.0, out, 0.0)


def _distance_array(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    sqrt_c = math.sqrt(c)
    diff_norm = _norm(_mobius_add_array(-x, y, c))
    # Identical points must give exactly zero, not Mobius round-off dust.
    same = np.all(x == y, axis=-1, keepdims=True)
    diff_norm = np.where(same, 0.0, diff_norm)
    return (2.0 / sqrt_c) * _atanh(sqrt_c * diff_norm)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def project_to_ball(v: np.ndarray, c: float | Curvature = 1.0) -> BallPoint:
    """Rescale any vector into the ball margin; interior points pass through."""
    curv = c if isinstance(c, Curvature) else Curvature(c)
    return BallPoint(_project_array(np.asarray(v, dtype=np.float64), curv.c), curv)


def mobius_add(x: BallPoint, y: BallPoint) -> BallPoint:
    """Mobius addition x (+)_c y, projected back to the ball margin."""
    x._check_compatible(y)
    return BallPoint(_mobius_add_array(x.coords, y.coords, x.c), x.curvature)


def mobius_matvec(w: np.ndarray, x: BallPoint) -> BallPoint:
    """Mobius matrix action: exp at the origin of W applied to log at the origin.

    A zero image maps exactly to the origin.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] != x.coords.shape[-1]:
        raise ValueError(f"matrix columns {w.shape[1]} != point dimension "
                         f"{x.coords.shape[-1]}")
    t = _log_origin_array(x.coords, x.c) @ w.T
    return BallPoint(_exp_origin_array(t, x.c), x.curvature)


def exp_origin(v: np.ndarray, c: float | Curvature = 1.0) -> BallPoint:
    """Exponential map at the origin: tanh(sqrt(c)||v||) * v / (sqrt(c)||v||)."""
    curv = c if isinstance(c, Curvature) else Curvature(c)
    return BallPoint(_exp_origin_array(np.asarray(v, dtype=np.float64), curv.c), curv)


def log_origin(y: BallPoint) -> np.ndarray:
    """Logarithmic map at the origin: atanh(sqrt(c)||y||) * y / (sqrt(c)||y||)."""
    return _log_origin_array(y.coords, y.c)


def exp_at(x: BallPoint, v: np.ndarray) -> BallPoint:
    """Exponential map at base x, using the conformal factor lambda_x."""
    return BallPoint(_exp_at_array(x.coords, np.asarray(v, dtype=np.float64), x.c),
                     x.curvature)


def log_at(x: BallPoint, y: BallPoint) -> np.ndarray:
    """Logarithmic map at base x; log_x(x) is exactly zero."""
    x._check_compatible(y)
    return _log_at_array(x.coords, y.coords, x.c)


def hyp_distance(x: BallPoint, y: BallPoint) -> float | np.ndarray:
    """Geodesic distance (2/sqrt(c)) * atanh(sqrt(c) || -x (+)_c y ||)."""
    x._check_compatible(y)
    out = np.squeeze(_distance_array(x.coords, y.coords, x.c), axis=-1)
    return float(out) if out.ndim == 0 else out
