"""Kernel density gradient estimation and quiver-field generation.

The gradient kernel is the analytic derivative of the Gaussian kernel:
DK_H(x) = -(2 pi)^-1 |H|^-1/2 H^-1 x exp(-x^T H^-1 x / 2), so the gradient
estimate is exactly the gradient of the density estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BandwidthMatrix,
    DensityField,
    FieldKind,
    Grid2D,
    KdemapError,
    PointSet,
    ThinTooLarge,
)
from .density import kde_at, make_grid

QUIVER_FILL = 0.9  # longest arrow as a fraction of the anchor spacing


@dataclass(frozen=True, eq=False)
class GradientResult:
    """Density gradient estimate: both partial-derivative fields plus the
    density itself, all on one grid."""

    points: PointSet
    H: BandwidthMatrix
    dx_field: DensityField
    dy_field: DensityField
    density_field: DensityField

    def __post_init__(self):
        if not (
            self.dx_field.grid == self.dy_field.grid == self.density_field.grid
        ):
            raise KdemapError("gradient and density fields must share one grid")


@dataclass(frozen=True, eq=False)
class QuiverField:
    """Regular subgrid of gradient arrows with a shared display scale.

    u, v are the raw gradient components at the anchors; `scale` multiplies
    them for display so the longest arrow spans QUIVER_FILL of the anchor
    spacing (1.0 when every arrow is zero).
    """

    anchors: np.ndarray  # (m, 2)
    u: np.ndarray
    v: np.ndarray
    thin: int
    scale: float
    spacing: float

    def __post_init__(self):
        for name in ("anchors", "u", "v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.anchors.shape[0] == self.u.size == self.v.size):
            raise KdemapError("anchors, u, v must have equal length")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise KdemapError("gradient components must be finite")


def kdde_grad_at(
    points: PointSet, H: BandwidthMatrix, eval_points
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient estimate components (d/dx, d/dy) at arbitrary points."""
    ev = np.atleast_2d(np.asarray(eval_points, dtype=float))
    a, b, c = H.inv_entries
    norm = 1.0 / (2.0 * math.pi * math.sqrt(H.det) * points.n)
    gx = np.empty(ev.shape[0])
    gy = np.empty(ev.shape[0])
    chunk = max(1, int(4e6) // points.n)
    for start in range(0, ev.shape[0], chunk):
        stop = min(start + chunk, ev.shape[0])
        dx = ev[start:stop, 0][:, None] - points.xs[None, :]
        dy = ev[start:stop, 1][:, None] - points.ys[None, :]
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        ker = np.exp(-0.5 * q)
        # H^-1 (x - X_i) componentwise
        gx[start:stop] = -norm * ((a * dx + b * dy) * ker).sum(axis=1)
        gy[start:stop] = -norm * ((b * dx + c * dy) * ker).sum(axis=1)
    return gx, gy


def kdde_grad_grid(
    points: PointSet, H: BandwidthMatrix, grid: Grid2D | None = None
) -> GradientResult:
    """Gradient and density estimates evaluated on every grid vertex."""
    if grid is None:
        grid = make_grid(points, H)
    verts = grid.vertices()
    gx, gy = kdde_grad_at(points, H, verts)
    dens = kde_at(points, H, verts)
    shape = (grid.nx, grid.ny)
    return GradientResult(
        points=points,
        H=H,
        dx_field=DensityField(grid, gx.reshape(shape), FieldKind.GRADIENT_DX),
        dy_field=DensityField(grid, gy.reshape(shape), FieldKind.GRADIENT_DY),
        density_field=DensityField(grid, dens.reshape(shape), FieldKind.DENSITY),
    )


def quiver(grad: GradientResult, thin: int = 9) -> QuiverField:
    """thin x thin regular subgrid of gradient arrows.

    Anchor k along an axis with N vertices sits at index
    round(k (N - 1) / (thin - 1)).
    """
    if thin < 2:
        raise KdemapError("thin must be >= 2")
    grid = grad.dx_field.grid
    if thin > min(grid.nx, grid.ny):
        raise ThinTooLarge(f"thin={thin} exceeds grid size {grid.nx}x{grid.ny}")
    ix = np.array([round(k * (grid.nx - 1) / (thin - 1)) for k in range(thin)])
    iy = np.array([round(k * (grid.ny - 1) / (thin - 1)) for k in range(thin)])
    gi, gj = np.meshgrid(ix, iy, indexing="ij")
    gi = gi.ravel()
    gj = gj.ravel()
    anchors = np.column_stack(
        [grid.x0 + gi * grid.dx, grid.y0 + gj * grid.dy]
    )
    u = grad.dx_field.values[gi, gj]
    v = grad.dy_field.values[gi, gj]
    spacing = min(
        (grid.nx - 1) * grid.dx / (thin - 1), (grid.ny - 1) * grid.dy / (thin - 1)
    )
    longest = float(np.hypot(u, v).max())
    scale = QUIVER_FILL * spacing / longest if longest > 0.0 else 1.0
    return QuiverField(
        anchors=anchors, u=u, v=v, thin=thin, scale=scale, spacing=spacing
    )
