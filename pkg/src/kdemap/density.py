"""Kernel density estimation on grids and at arbitrary points, plus
probability contour levels (highest-density-region heights) and the
fixed-break aggregation used to compare several estimates on one scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    BandwidthMatrix,
    DensityField,
    FieldKind,
    Grid2D,
    KdemapError,
    PointSet,
    quantile,
)

GRID_EXTEND_SD = 3.7  # kernel standard deviations added around the data box
DEFAULT_GRIDSIZE = 151


@dataclass(frozen=True, eq=False)
class KdeResult:
    """A density estimate: the sample, its bandwidth, the evaluated grid
    field and the estimate at the data points themselves (used for
    probability contour levels)."""

    points: PointSet
    H: BandwidthMatrix
    field: DensityField
    density_at_data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.density_at_data, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "density_at_data", arr)
        if arr.shape != (self.points.n,):
            raise KdemapError("density_at_data must have one entry per point")


@dataclass(frozen=True)
class ContourLevels:
    """Probability contour heights: heights[k] is the density level whose
    super-level set holds ~probs[k] of the sample mass."""

    probs: tuple[float, ...]
    heights: tuple[float, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.heights):
            raise KdemapError("probs and heights must pair up")
        if any(not 0.0 < p < 1.0 for p in self.probs):
            raise KdemapError("probabilities must lie in (0, 1)")


def make_grid(
    points: PointSet,
    H: BandwidthMatrix,
    nx: int = DEFAULT_GRIDSIZE,
    ny: int = DEFAULT_GRIDSIZE,
) -> Grid2D:
    """Evaluation grid over the data box extended by 3.7 kernel standard
    deviations per axis, so essentially all kernel mass is covered."""
    ex = GRID_EXTEND_SD * math.sqrt(H.h11)
    ey = GRID_EXTEND_SD * math.sqrt(H.h22)
    x0 = float(points.xs.min()) - ex
    x1 = float(points.xs.max()) + ex
    y0 = float(points.ys.min()) - ey
    y1 = float(points.ys.max()) + ey
    return Grid2D(
        x0=x0,
        y0=y0,
        dx=(x1 - x0) / (nx - 1),
        dy=(y1 - y0) / (ny - 1),
        nx=nx,
        ny=ny,
    )


def _eval_chunks(n_eval: int, n_data: int) -> int:
    return max(1, int(4e6) // max(n_data, 1))


def kde_at(points: PointSet, H: BandwidthMatrix, eval_points) -> np.ndarray:
    """Direct-sum density estimate at arbitrary evaluation points.

    f(x) = n^-1 sum_i (2 pi)^-1 |H|^-1/2 exp(-(x - X_i)^T H^-1 (x - X_i) / 2)
    """
    ev = np.atleast_2d(np.asarray(eval_points, dtype=float))
    a, b, c = H.inv_entries
    norm = 1.0 / (2.0 * math.pi * math.sqrt(H.det) * points.n)
    out = np.empty(ev.shape[0])
    chunk = _eval_chunks(ev.shape[0], points.n)
    for start in range(0, ev.shape[0], chunk):
        stop = min(start + chunk, ev.shape[0])
        dx = ev[start:stop, 0][:, None] - points.xs[None, :]
        dy = ev[start:stop, 1][:, None] - points.ys[None, :]
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        out[start:stop] = norm * np.exp(-0.5 * q).sum(axis=1)
    return out


def kde_grid(
    points: PointSet, H: BandwidthMatrix, grid: Grid2D | None = None
) -> KdeResult:
    """Density estimate evaluated on every grid vertex and at the sample."""
    if grid is None:
        grid = make_grid(points, H)
    values = kde_at(points, H, grid.vertices()).reshape(grid.nx, grid.ny)
    at_data = kde_at(points, H, points.xy())
    field = DensityField(grid=grid, values=values, kind=FieldKind.DENSITY)
    return KdeResult(points=points, H=H, field=field, density_at_data=at_data)


def contour_levels(kde: KdeResult, probs: Sequence[float]) -> ContourLevels:
    """Heights of the probability contour regions.

    The height for probability p is the (1 - p) quantile of the estimate
    evaluated at the data points: the super-level set at that height then
    holds ~p of the sample mass (the smallest such region).
    """
    probs = tuple(float(p) for p in probs)
    if any(not 0.0 < p < 1.0 for p in probs):
        raise KdemapError("probabilities must lie strictly inside (0, 1)")
    heights = tuple(
        quantile(kde.density_at_data, 1.0 - p) for p in probs
    )
    return ContourLevels(probs=probs, heights=heights)


def _implied_prob(kde: KdeResult, height: float) -> float:
    """Probability whose contour height would be `height` for this estimate
    (interpolated inverse of the height-from-quantile map)."""
    vals = np.sort(kde.density_at_data)
    n = vals.size
    if n == 1:
        return 0.5
    pos = np.interp(height, vals, np.arange(n) / (n - 1))
    return float(1.0 - pos)


def contour_breaks(
    kdes: Sequence[KdeResult], probs: Sequence[float], min_gap: float = 0.05
) -> tuple[float, ...]:
    """One fixed, aggregated set of contour heights for several estimates.

    Per-estimate heights at the requested probabilities are averaged
    elementwise, then thinned: walking the aggregated heights in ascending
    probability order, a height is dropped when its implied probability
    (averaged across the estimates) is within `min_gap` of the previously
    retained one. Returns descending heights.
    """
    if not kdes:
        raise KdemapError("need at least one estimate")
    probs = tuple(sorted(float(p) for p in probs))
    per_est = [contour_levels(k, probs).heights for k in kdes]
    pooled = [float(np.mean([h[k] for h in per_est])) for k in range(len(probs))]

    kept: list[float] = []
    last_prob = None
    for height in pooled:  # probs ascending == heights descending
        implied = float(np.mean([_implied_prob(k, height) for k in kdes]))
        if last_prob is None or abs(implied - last_prob) >= min_gap:
            kept.append(height)
            last_prob = implied
    return tuple(kept)


def grid_mass(kde: KdeResult) -> float:
    """Trapezoid integral of the field over its grid (normalization check)."""
    v = kde.field.values
    wx = np.full(kde.field.grid.nx, kde.field.grid.dx)
    wx[0] *= 0.5
    wx[-1] *= 0.5
    wy = np.full(kde.field.grid.ny, kde.field.grid.dy)
    wy[0] *= 0.5
    wy[-1] *= 0.5
    return float(wx @ v @ wy)
