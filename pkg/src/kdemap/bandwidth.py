"""Data-driven selection of the 2x2 bandwidth matrix.

Selectors
---------
h_normal_scale          scaled sample covariance (closed form)
h_diag_univariate_plugin  diagonal matrix of univariate two-stage plug-in
                        bandwidths, the classic "sub-optimal" comparator
h_plugin                full plug-in: minimizes an asymptotic MISE estimate
                        whose unknown curvature functionals are replaced by
                        pairwise kernel-derivative sums (deriv_order 0 or 1)
h_ucv                   unbiased (leave-one-out) cross validation

The minimizer works over the symmetric-positive-definite cone via a
log-Cholesky parametrization, so every iterate is SPD by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from ._pairwise import kernel_moment_sums, ucv_pair_sums
from .core import (
    BandwidthMatrix,
    DegenerateSample,
    NonFiniteObjective,
    PointSet,
    iqr,
)

TWO_PI = 2.0 * math.pi


def _c_normal_scale(n: int, r: int) -> float:
    """Normal-reference constant (4 / (n (d + 2r + 2)))^(2 / (d + 2r + 4)), d=2."""
    return (4.0 / (n * (2 * r + 4))) ** (2.0 / (2 * r + 6))


def _sample_cov(points: PointSet) -> tuple[float, float, float]:
    xs, ys = points.xs, points.ys
    mx, my = xs.mean(), ys.mean()
    n = points.n
    sxx = float(np.dot(xs - mx, xs - mx)) / (n - 1)
    syy = float(np.dot(ys - my, ys - my)) / (n - 1)
    sxy = float(np.dot(xs - mx, ys - my)) / (n - 1)
    det = sxx * syy - sxy * sxy
    if not np.isfinite(det) or det <= 1e-14 * max(sxx * syy, 1e-300):
        raise DegenerateSample("sample covariance is singular (collinear points)")
    return sxx, sxy, syy


def _normal_scale_any(points: PointSet, r: int) -> BandwidthMatrix:
    sxx, sxy, syy = _sample_cov(points)
    c = _c_normal_scale(points.n, r)
    return BandwidthMatrix(c * sxx, c * sxy, c * syy)


def h_normal_scale(points: PointSet, deriv_order: int = 0) -> BandwidthMatrix:
    """Normal-scale bandwidth c(n, 2, r) * sample covariance."""
    if points.n < 3:
        raise DegenerateSample("need at least 3 points")
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    return _normal_scale_any(points, deriv_order)


# ---------------------------------------------------------------------------
# univariate two-stage direct plug-in (per-coordinate comparator)

_SQRT_2PI = math.sqrt(TWO_PI)


def _univariate_psi(x: np.ndarray, g: float, order: int) -> float:
    """n^-2 sum_ij of the order-th derivative of the N(0, g^2) density at X_i - X_j."""
    n = x.size
    if order == 4:
        hermite = lambda z2: (z2 - 6.0) * z2 + 3.0
    else:  # order 6
        hermite = lambda z2: ((z2 - 15.0) * z2 + 45.0) * z2 - 15.0
    total = 0.0
    chunk = max(1, int(4e6) // n)
    for start in range(0, n, chunk):
        d = (x[start : start + chunk, None] - x[None, :]) / g
        z2 = d * d
        total += float(np.sum(hermite(z2) * np.exp(-0.5 * z2)))
    return total / (n * n * _SQRT_2PI * g ** (order + 1))


def _dpik(x: np.ndarray) -> float:
    """Two-stage direct plug-in bandwidth (std-dev scale) with a normal-reference start."""
    n = x.size
    sd = float(x.std(ddof=1))
    spread = iqr(x) / 1.349
    scales = [s for s in (sd, spread) if s > 0.0]
    if not scales:
        raise DegenerateSample("coordinate has zero IQR and zero variance")
    scale = min(scales)

    psi8 = 105.0 / (32.0 * math.sqrt(math.pi) * scale**9)
    g6 = ((30.0 / _SQRT_2PI) / (psi8 * n)) ** (1.0 / 9.0)
    psi6 = _univariate_psi(x, g6, 6)
    if psi6 >= 0.0:
        raise DegenerateSample("stage-2 functional has the wrong sign")
    g4 = ((-6.0 / _SQRT_2PI) / (psi6 * n)) ** (1.0 / 7.0)
    psi4 = _univariate_psi(x, g4, 4)
    if psi4 <= 0.0:
        raise DegenerateSample("stage-1 functional has the wrong sign")
    return (1.0 / (2.0 * math.sqrt(math.pi) * psi4 * n)) ** 0.2


def h_diag_univariate_plugin(points: PointSet) -> BandwidthMatrix:
    """diag(h1^2, h2^2) from per-coordinate univariate plug-in bandwidths."""
    if points.n < 10:
        raise DegenerateSample("need at least 10 points")
    h1 = _dpik(points.xs)
    h2 = _dpik(points.ys)
    return BandwidthMatrix(h1 * h1, 0.0, h2 * h2)


# ---------------------------------------------------------------------------
# Gaussian kernel derivative polynomials (Rodrigues recursion)
#
# d^m K_G(x) = P_m(x) K_G(x) where P_m is a bivariate polynomial built by
# repeatedly applying  d_i (P K) = (d_i P - P * (G^-1 x)_i) K.
# Polynomials are dicts {(ax, ay): coeff}.


def _poly_diff(p: dict, var: int) -> dict:
    out: dict = {}
    for (a, b), c in p.items():
        if var == 0 and a > 0:
            out[(a - 1, b)] = out.get((a - 1, b), 0.0) + c * a
        elif var == 1 and b > 0:
            out[(a, b - 1)] = out.get((a, b - 1), 0.0) + c * b
    return out


def _poly_axpy(p: dict, q: dict) -> dict:
    out = dict(p)
    for k, c in q.items():
        out[k] = out.get(k, 0.0) + c
    return out


def _poly_mul_linear(p: dict, cx: float, cy: float) -> dict:
    out: dict = {}
    for (a, b), c in p.items():
        if cx != 0.0:
            out[(a + 1, b)] = out.get((a + 1, b), 0.0) + c * cx
        if cy != 0.0:
            out[(a, b + 1)] = out.get((a, b + 1), 0.0) + c * cy
    return out


def gaussian_derivative_polynomial(
    inv_entries: tuple[float, float, float], m1: int, m2: int
) -> dict:
    """Polynomial factor of the (m1, m2) partial derivative of a Gaussian kernel
    with inverse bandwidth [a b; b c]."""
    a, b, c = inv_entries
    p = {(0, 0): 1.0}
    for _ in range(m1):
        p = _poly_axpy(_poly_diff(p, 0), _poly_mul_linear(p, -a, -b))
    for _ in range(m2):
        p = _poly_axpy(_poly_diff(p, 1), _poly_mul_linear(p, -b, -c))
    return {k: v for k, v in p.items() if v != 0.0}


def multi_indices(order: int) -> list[tuple[int, int]]:
    """Distinct bivariate multi-indices of the given total order, m1 descending."""
    return [(m1, order - m1) for m1 in range(order, -1, -1)]


@dataclass(frozen=True)
class PsiFunctionals:
    """Integrated density-derivative functional estimates of one even order.

    components[k] estimates psi_m for m = multi_indices(order)[k]:
    psi_m = n^-2 sum_ij (d^m K_G)(X_i - X_j) with pilot bandwidth G.
    """

    order: int
    components: tuple[float, ...]
    pilot_G: BandwidthMatrix

    def __post_init__(self):
        if self.order not in (4, 6):
            raise ValueError("order must be 4 or 6")
        if len(self.components) != self.order + 1:
            raise ValueError(
                f"expected {self.order + 1} components, got {len(self.components)}"
            )
        if not all(np.isfinite(v) for v in self.components):
            raise ValueError("components must be finite")

    def component(self, m1: int, m2: int) -> float:
        if m1 + m2 != self.order:
            raise ValueError(f"({m1}, {m2}) is not an order-{self.order} index")
        return self.components[self.order - m1]


def psi_functionals(
    points: PointSet, order: int, pilot_G: BandwidthMatrix
) -> PsiFunctionals:
    """Pairwise kernel-derivative estimates of all order-4 or order-6 functionals.

    Every derivative polynomial only contains monomials of even total degree,
    so the (i, j) and (j, i) terms coincide and the double sum reduces to
    twice the upper triangle plus the n zero-lag diagonal terms.
    """
    if order not in (4, 6):
        raise ValueError("order must be 4 or 6")
    if points.n < 2:
        raise DegenerateSample("need at least 2 points")
    n = points.n
    inv = pilot_G.inv_entries
    norm = 1.0 / (TWO_PI * math.sqrt(pilot_G.det))

    monos = [
        (a, tot - a) for tot in range(0, order + 1, 2) for a in range(tot, -1, -1)
    ]
    mono_pos = {m: k for k, m in enumerate(monos)}
    ea = np.array([m[0] for m in monos], dtype=np.int64)
    eb = np.array([m[1] for m in monos], dtype=np.int64)

    sums = kernel_moment_sums(points.xs, points.ys, inv[0], inv[1], inv[2], ea, eb)
    total = 2.0 * sums
    total[mono_pos[(0, 0)]] += n  # zero-lag pairs: kernel exponent is 0

    comps = []
    for m1, m2 in multi_indices(order):
        poly = gaussian_derivative_polynomial(inv, m1, m2)
        comps.append(
            norm / (n * n) * sum(c * total[mono_pos[m]] for m, c in poly.items())
        )
    return PsiFunctionals(order=order, components=tuple(comps), pilot_G=pilot_G)


# ---------------------------------------------------------------------------
# the smoothing objective and its minimizer


def amise_objective(
    H: BandwidthMatrix, psi: PsiFunctionals, n: int, deriv_order: int
) -> float:
    """Two-term asymptotic MISE estimate: variance + squared bias.

    deriv_order 0:  (4 pi)^-1 n^-1 |H|^-1/2
                    + 1/4 sum_{ijkl} H_ij H_kl psi_(count of 1s, count of 2s)
    deriv_order 1:  the variance term gains the factor tr(H^-1)/2 and the bias
                    contracts order-6 functionals with one extra repeated
                    derivative index (sign from integration by parts).

    Multinomial multiplicities come from explicit multi-index enumeration.
    """
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    if psi.order != 4 + 2 * deriv_order:
        raise ValueError(
            f"psi order {psi.order} does not match deriv_order {deriv_order}"
        )
    h = ((H.h11, H.h12), (H.h12, H.h22))
    variance = 1.0 / (4.0 * math.pi * n * math.sqrt(H.det))
    if deriv_order == 0:
        bias = 0.0
        for i, j, k, l in itertools.product((0, 1), repeat=4):
            m1 = (i == 0) + (j == 0) + (k == 0) + (l == 0)
            bias += h[i][j] * h[k][l] * psi.component(m1, 4 - m1)
        return variance + 0.25 * bias
    a, b, c = H.inv_entries
    variance *= 0.5 * (a + c)
    bias = 0.0
    for i, j, k, l, r in itertools.product((0, 1), repeat=5):
        m1 = (i == 0) + (j == 0) + (k == 0) + (l == 0) + 2 * (r == 0)
        bias -= h[i][j] * h[k][l] * psi.component(m1, 6 - m1)
    return variance + 0.25 * bias


def _chol_params(H: BandwidthMatrix) -> np.ndarray:
    l11, l21, l22 = H.chol
    return np.array([math.log(l11), l21, math.log(l22)])


def _params_to_matrix(t: np.ndarray) -> BandwidthMatrix:
    l11 = math.exp(t[0])
    l21 = t[1]
    l22 = math.exp(t[2])
    return BandwidthMatrix(l11 * l11, l21 * l11, l21 * l21 + l22 * l22)


def minimize_spd(
    objective: Callable[[BandwidthMatrix], float],
    H_init: BandwidthMatrix,
    max_evals: int = 500,
) -> BandwidthMatrix:
    """Derivative-free simplex minimization over the SPD cone.

    The matrix is parametrized as (log l11, l21, log l22) over its Cholesky
    factor, so every iterate is SPD by construction. Each simplex run stops
    when its diameter falls below 1e-8 in parameter space or after
    `max_evals` objective evaluations; the search is restarted once from the
    returned point. Raises NonFiniteObjective if the objective produces a
    non-finite value anywhere in the search.
    """

    def wrapped(t: np.ndarray) -> float:
        val = float(objective(_params_to_matrix(t)))
        if not np.isfinite(val):
            raise NonFiniteObjective(f"objective returned {val!r}")
        return val

    t0 = _chol_params(H_init)
    wrapped(t0)  # fail fast when the start is already bad
    best = t0
    for _ in range(2):
        res = _scipy_minimize(
            wrapped,
            best,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": np.inf, "maxfev": max_evals},
        )
        best = res.x
    return _params_to_matrix(best)


def h_plugin(points: PointSet, deriv_order: int = 0) -> BandwidthMatrix:
    """Plug-in bandwidth: minimize the asymptotic MISE estimate whose
    curvature functionals use a single normal-scale pilot stage.

    The pilot is the normal-scale matrix tuned for estimation order
    deriv_order + 2; the search starts from the normal-scale matrix for
    deriv_order itself.
    """
    if points.n < 10:
        raise DegenerateSample("need at least 10 points")
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    pilot = _normal_scale_any(points, deriv_order + 2)
    psi = psi_functionals(points, 4 + 2 * deriv_order, pilot)
    start = _normal_scale_any(points, deriv_order)
    n = points.n
    return minimize_spd(lambda H: amise_objective(H, psi, n, deriv_order), start)


def ucv_objective(points: PointSet, H: BandwidthMatrix) -> float:
    """Leave-one-out cross-validation criterion.

    UCV(H) = n^-2 sum_ij K_2H(X_i - X_j)
             - 2 [n (n-1)]^-1 sum_{i != j} K_H(X_i - X_j)

    using the Gaussian convolution identity K_H * K_H = K_2H.
    """
    n = points.n
    a, b, c = H.inv_entries
    s_h, s_2h = ucv_pair_sums(points.xs, points.ys, a, b, c)
    norm_h = 1.0 / (TWO_PI * math.sqrt(H.det))
    norm_2h = 0.5 * norm_h  # |2H|^-1/2 = |H|^-1/2 / 2 in d=2
    term1 = (n * norm_2h + 2.0 * s_2h * norm_2h) / (n * n)
    term2 = 4.0 * s_h * norm_h / (n * (n - 1))
    return term1 - term2


def h_ucv(points: PointSet) -> BandwidthMatrix:
    """Unbiased cross-validation bandwidth from the normal-scale start.

    Duplicate-heavy samples make the criterion unbounded below as |H| -> 0;
    if the search drives the determinant under 1e-12 x |cov| x c(n)^2 the
    selector aborts with NonFiniteObjective rather than return a degenerate
    matrix.
    """
    if points.n < 10:
        raise DegenerateSample("need at least 10 points")
    sxx, sxy, syy = _sample_cov(points)
    c = _c_normal_scale(points.n, 0)
    det_floor = 1e-12 * (sxx * syy - sxy * sxy) * c * c

    def objective(H: BandwidthMatrix) -> float:
        if H.det < det_floor:
            raise NonFiniteObjective(
                "cross-validation criterion is collapsing toward |H| = 0"
            )
        return ucv_objective(points, H)

    return minimize_spd(objective, h_normal_scale(points, 0))


# ---------------------------------------------------------------------------
# selector dispatch (used by the command-line front end)


@dataclass(frozen=True)
class SelectorSpec:
    """Which bandwidth selector to run, and at which derivative order."""

    method: str = "plugin"  # normal_scale | diag_plugin | plugin | ucv | fixed
    deriv_order: int = 0
    fixed_H: BandwidthMatrix | None = None

    def __post_init__(self):
        if self.method not in ("normal_scale", "diag_plugin", "plugin", "ucv", "fixed"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "fixed" and self.fixed_H is None:
            raise ValueError("method 'fixed' needs fixed_H")
        if self.deriv_order == 1 and self.method not in ("normal_scale", "plugin"):
            raise ValueError(f"deriv_order=1 is not supported for {self.method!r}")
        if self.deriv_order not in (0, 1):
            raise ValueError("deriv_order must be 0 or 1")


def select_bandwidth(points: PointSet, spec: SelectorSpec) -> BandwidthMatrix:
    if spec.method == "fixed":
        return spec.fixed_H
    if spec.method == "normal_scale":
        return h_normal_scale(points, spec.deriv_order)
    if spec.method == "diag_plugin":
        return h_diag_univariate_plugin(points)
    if spec.method == "ucv":
        return h_ucv(points)
    return h_plugin(points, spec.deriv_order)
