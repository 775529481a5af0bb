"""Shared numeric types: SPD bandwidth matrices, point sets, evaluation grids,
and the order-statistics helpers (quantile, IQR) used across the package.

All matrix work is 2x2 and uses explicit closed forms (adjugate inverse,
analytic Cholesky). Types are immutable after construction and safe to share
across threads; every function here is pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class KdemapError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(KdemapError):
    """Matrix is not symmetric positive definite."""


class EmptyInput(KdemapError):
    """An operation received an empty array."""


class DegenerateSample(KdemapError):
    """Sample has no usable spread (singular covariance or zero scale)."""


class NonFiniteObjective(KdemapError):
    """Objective function returned a non-finite value during optimization."""


class NumericalUnderflow(KdemapError):
    """A weighted sum underflowed to zero."""


class ThinTooLarge(KdemapError):
    """Quiver thinning factor exceeds the grid dimensions."""


class TooFewClasses(KdemapError):
    """Classifier training data has fewer than two classes."""


class TooFewPointsInClass(KdemapError):
    """A class sub-sample is too small to select a bandwidth."""


class InvalidGeometry(KdemapError):
    """A ring or polygon violates its closure/orientation invariants."""


class MissingColumn(KdemapError):
    """CSV header lacks a requested column."""


class EmptyAfterFiltering(KdemapError):
    """No usable rows remain after dropping bad records."""


class IoFailure(KdemapError):
    """Reading an input file failed."""


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyInput(f"{name} is empty")
    return arr


@dataclass(frozen=True)
class BandwidthMatrix:
    """Symmetric positive-definite 2x2 smoothing matrix [h11 h12; h12 h22].

    Entries are in squared data units. Construction validates positive
    definiteness; determinant, inverse and Cholesky factor are exposed as
    cached closed forms.
    """

    h11: float
    h12: float
    h22: float

    def __post_init__(self):
        for v in (self.h11, self.h12, self.h22):
            if not np.isfinite(v):
                raise NotPositiveDefinite(f"non-finite entry {v!r}")
        if self.h11 <= 0.0 or self.det <= 0.0:
            raise NotPositiveDefinite(
                f"[{self.h11}, {self.h12}; {self.h12}, {self.h22}] is not SPD "
                f"(h11={self.h11}, det={self.det})"
            )

    @cached_property
    def det(self) -> float:
        return self.h11 * self.h22 - self.h12 * self.h12

    @cached_property
    def inv_entries(self) -> tuple[float, float, float]:
        """(a, b, c) of the adjugate inverse H^-1 = [a b; b c]."""
        d = self.det
        return (self.h22 / d, -self.h12 / d, self.h11 / d)

    @cached_property
    def chol(self) -> tuple[float, float, float]:
        """(l11, l21, l22) of the lower factor L with L L^T = H."""
        l11 = np.sqrt(self.h11)
        l21 = self.h12 / l11
        l22sq = self.h22 - l21 * l21
        if l22sq <= 0.0:
            raise NotPositiveDefinite("Cholesky failed: trailing pivot <= 0")
        return (l11, l21, np.sqrt(l22sq))

    def inverse(self) -> "BandwidthMatrix":
        a, b, c = self.inv_entries
        return BandwidthMatrix(a, b, c)

    def scaled(self, factor: float) -> "BandwidthMatrix":
        return BandwidthMatrix(factor * self.h11, factor * self.h12, factor * self.h22)

    def matrix(self) -> np.ndarray:
        return np.array([[self.h11, self.h12], [self.h12, self.h22]])

    @classmethod
    def from_matrix(cls, m) -> "BandwidthMatrix":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))


def spd_from_upper(h11: float, h12: float, h22: float) -> BandwidthMatrix:
    """Validated SPD matrix from its upper-triangle entries.

    Raises NotPositiveDefinite when h11 <= 0 or h11*h22 - h12^2 <= 0.
    """
    return BandwidthMatrix(float(h11), float(h12), float(h22))


def mahalanobis_sq(H: BandwidthMatrix, u) -> float | np.ndarray:
    """Quadratic form u^T H^-1 u, >= 0, zero iff u = 0.

    `u` is a 2-vector or an (n, 2) array; returns a scalar or length-n array.
    """
    a, b, c = H.inv_entries
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        ux, uy = u[0], u[1]
    else:
        ux, uy = u[..., 0], u[..., 1]
    q = a * ux * ux + 2.0 * b * ux * uy + c * uy * uy
    return float(q) if np.ndim(q) == 0 else q


def quantile(values, p) -> float | np.ndarray:
    """Linear-interpolation sample quantile with plotting position (k-1)/(n-1).

    This is the widespread continuous default ("type 7"), fixed here so that
    contour levels are bit-reproducible.
    """
    arr = _as_float_array(values, "values")
    out = np.quantile(arr, p, method="linear")
    return float(out) if np.ndim(out) == 0 else out


def iqr(values) -> float:
    """Interquartile range quantile(.75) - quantile(.25); >= 0."""
    arr = _as_float_array(values, "values")
    q25, q75 = np.quantile(arr, [0.25, 0.75], method="linear")
    return float(q75 - q25)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PointSet:
    """n observed 2-D points with optional per-point group labels."""

    xs: np.ndarray
    ys: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        xs = _readonly(np.atleast_1d(np.asarray(self.xs, dtype=float)))
        ys = _readonly(np.atleast_1d(np.asarray(self.ys, dtype=float)))
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise KdemapError("xs and ys must be equal-length 1-D arrays")
        if xs.size < 1:
            raise EmptyInput("point set is empty")
        if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise KdemapError("coordinates must be finite")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != xs.size:
                raise KdemapError("labels must cover every point exactly once")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.xs.size

    def xy(self) -> np.ndarray:
        """Points stacked as an (n, 2) array."""
        return np.column_stack([self.xs, self.ys])

    def select(self, mask) -> "PointSet":
        mask = np.asarray(mask)
        labels = None
        if self.labels is not None:
            labels = tuple(lab for lab, keep in zip(self.labels, mask) if keep)
        return PointSet(self.xs[mask], self.ys[mask], labels)


class FieldKind(enum.Enum):
    DENSITY = "density"
    GRADIENT_DX = "gradient_dx"
    GRADIENT_DY = "gradient_dy"
    LABEL = "label"


@dataclass(frozen=True)
class Grid2D:
    """Rectangular evaluation grid; vertex(i, j) = (x0 + i*dx, y0 + j*dy)."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise KdemapError("grid needs at least 2 vertices per axis")
        if not (self.dx > 0 and self.dy > 0):
            raise KdemapError("grid steps must be positive")

    @cached_property
    def xcoords(self) -> np.ndarray:
        return _readonly(self.x0 + self.dx * np.arange(self.nx))

    @cached_property
    def ycoords(self) -> np.ndarray:
        return _readonly(self.y0 + self.dy * np.arange(self.ny))

    @property
    def x1(self) -> float:
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def y1(self) -> float:
        return self.y0 + (self.ny - 1) * self.dy

    def vertices(self) -> np.ndarray:
        """All nx*ny vertices as an (nx*ny, 2) array, x varying fastest."""
        gx, gy = np.meshgrid(self.xcoords, self.ycoords, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True, eq=False)
class DensityField:
    """Per-vertex values on a Grid2D: a density, a gradient component or labels."""

    grid: Grid2D
    values: np.ndarray
    kind: FieldKind = FieldKind.DENSITY

    def __post_init__(self):
        vals = _readonly(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.nx, self.grid.ny):
            raise KdemapError(
                f"values shape {vals.shape} != grid shape {(self.grid.nx, self.grid.ny)}"
            )
        if not np.isfinite(vals).all():
            raise KdemapError("field values must be finite")
        if self.kind is FieldKind.DENSITY and (vals < 0).any():
            raise KdemapError("density values must be non-negative")
