"""Minimal cubic B-spline fits to pen trajectories.

A stroke is summarized by the fewest control points of a clamped,
uniform-knot cubic B-spline whose least-squares fit stays within a pixel
residual threshold.  Fitting parameterizes the data by normalized chord
length and solves one linear system per candidate control-point count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateStrokeError, DimensionError

DEGREE = 3
MIN_CONTROL_POINTS = 4


@dataclass
class SplineStroke:
    """Control polygon of one stroke: absolute start plus offset steps."""

    start: np.ndarray
    offsets: np.ndarray
    residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.float64).reshape(2)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(self.start).all() or not np.isfinite(self.offsets).all():
            raise DimensionError("spline stroke contains non-finite coordinates")

    @property
    def control_points(self) -> np.ndarray:
        return np.vstack([self.start, self.start + np.cumsum(self.offsets, axis=0)]) if len(
            self.offsets
        ) else self.start.reshape(1, 2)

    @property
    def n_control(self) -> int:
        return 1 + len(self.offsets)


SplineDrawing = list[SplineStroke]


def knot_vector(n_ctrl: int) -> np.ndarray:
    """Clamped uniform knots for a cubic with ``n_ctrl`` control points."""
    if n_ctrl < MIN_CONTROL_POINTS:
        raise ConfigError(f"cubic B-spline needs at least 4 control points, got {n_ctrl}")
    spans = n_ctrl - DEGREE
    return np.concatenate([np.zeros(4), np.arange(1, spans) / spans, np.ones(4)])


def design_matrix(params: np.ndarray, n_ctrl: int) -> np.ndarray:
    """Cubic basis functions evaluated at each parameter, shape (T, n_ctrl).

    Parameters live in [0, 1]; the right endpoint is folded into the last
    span so rows at t=1 equal the final unit vector (clamped endpoint).
    """
    t = np.asarray(params, dtype=np.float64)
    if t.ndim != 1:
        raise DimensionError(f"params must be 1-d, got shape {t.shape}")
    knots = knot_vector(n_ctrl)
    m = len(knots)
    basis = np.zeros((len(t), m - 1))
    for j in range(m - 1):
        basis[:, j] = (t >= knots[j]) & (t < knots[j + 1])
    last_span = n_ctrl - 1  # final non-empty span [k, 1)
    basis[t >= 1.0, :] = 0.0
    basis[t >= 1.0, last_span] = 1.0
    for d in range(1, DEGREE + 1):
        nxt = np.zeros((len(t), m - 1 - d))
        for j in range(m - 1 - d):
            den1 = knots[j + d] - knots[j]
            den2 = knots[j + d + 1] - knots[j + 1]
            acc = np.zeros(len(t))
            if den1 > 0:
                acc += (t - knots[j]) / den1 * basis[:, j]
            if den2 > 0:
                acc += (knots[j + d + 1] - t) / den2 * basis[:, j + 1]
            nxt[:, j] = acc
        basis = nxt
    return basis


def chord_parameters(points: np.ndarray) -> np.ndarray:
    """Normalized cumulative chord length of a polyline, in [0, 1]."""
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = steps.sum()
    if total <= 0.0:
        raise DegenerateStrokeError("all points coincide, no chord length")
    u = np.concatenate([[0.0], np.cumsum(steps)]) / total
    u[-1] = 1.0
    return u


def trajectory_length(points: np.ndarray) -> float:
    """Polyline length of a point sequence in source pixels."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Linear interpolation of a polyline at n uniform chord positions."""
    keep = np.concatenate([[True], np.any(np.diff(points, axis=0) != 0.0, axis=1)])
    points = points[keep]  # consecutive duplicates carry no chord length
    u = chord_parameters(points)
    grid = np.linspace(0.0, 1.0, n)
    return np.column_stack([np.interp(grid, u, points[:, k]) for k in range(2)])


def fit_spline_fixed(points: np.ndarray, params: np.ndarray, n_ctrl: int) -> tuple[np.ndarray, float]:
    """Least-squares control points at a fixed count; returns (points, rms)."""
    basis = design_matrix(params, n_ctrl)
    ctrl, *_ = np.linalg.lstsq(basis, points, rcond=None)
    resid = basis @ ctrl - points
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return ctrl, rms


def fit_minimal_spline(
    points: np.ndarray,
    residual_threshold: float = 1.5,
    max_control_points: int = 30,
) -> SplineStroke:
    """Fewest-control-point fit within the residual threshold.

    Counts 4..min(T, max) are tried in order and the first fit whose RMS
    point residual is at or below the threshold wins; if none qualifies
    the largest count is returned with its residual attached.  Strokes
    with fewer than 4 points are padded by linear interpolation first;
    fewer than 2 distinct points is a degenerate error.
    """
    if residual_threshold <= 0.0:
        raise ConfigError(f"residual threshold must be positive, got {residual_threshold}")
    if max_control_points < MIN_CONTROL_POINTS:
        raise ConfigError(f"max control points must be >= 4, got {max_control_points}")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"stroke points must be (T, 2), got {points.shape}")
    if not np.isfinite(points).all():
        raise DimensionError("stroke points contain non-finite values")
    distinct = np.unique(points, axis=0)
    if len(distinct) < 2:
        raise DegenerateStrokeError("stroke has fewer than 2 distinct points")
    if len(points) < MIN_CONTROL_POINTS:
        points = resample_polyline(points, MIN_CONTROL_POINTS)
    params = chord_parameters(points)
    top = min(len(points), max_control_points)
    best: tuple[np.ndarray, float] | None = None
    for n_ctrl in range(MIN_CONTROL_POINTS, top + 1):
        ctrl, rms = fit_spline_fixed(points, params, n_ctrl)
        best = (ctrl, rms)
        if rms <= residual_threshold:
            break
    ctrl, rms = best
    return SplineStroke(start=ctrl[0], offsets=np.diff(ctrl, axis=0), residual=rms)


def eval_spline_at(stroke: SplineStroke, params: np.ndarray) -> np.ndarray:
    """Evaluate the stroke's curve at explicit parameters in [0, 1]."""
    ctrl = stroke.control_points
    if len(ctrl) < MIN_CONTROL_POINTS:
        pad = np.repeat(ctrl[-1:], MIN_CONTROL_POINTS - len(ctrl), axis=0)
        ctrl = np.vstack([ctrl, pad])
    return design_matrix(np.asarray(params, dtype=np.float64), len(ctrl)) @ ctrl


def eval_spline(stroke: SplineStroke, samples_per_segment: int = 20) -> np.ndarray:
    """Uniform-parameter trajectory along the stroke's curve.

    Output has segments * samples_per_segment + 1 points and hits both
    endpoints of the control polygon exactly (clamped knots).
    """
    if samples_per_segment < 1:
        raise ConfigError(f"samples_per_segment must be >= 1, got {samples_per_segment}")
    n_ctrl = max(stroke.n_control, MIN_CONTROL_POINTS)
    segments = n_ctrl - DEGREE
    t = np.linspace(0.0, 1.0, segments * samples_per_segment + 1)
    return eval_spline_at(stroke, t)
