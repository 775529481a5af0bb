"""Mean shift clustering: iterate every data point to the mode of its basin
of attraction, merge coincident modes, drop undersized clusters.

One step moves x to the kernel-weighted mean of the sample,

    x  ->  sum_l X_l w_l / sum_l w_l,   w_l = exp(-(x - X_l)^T H^-1 (x - X_l) / 2),

which equals x + H grad(f)(x) / f(x) for the Gaussian kernel, i.e. normalized
density-gradient ascent. Weights are evaluated in log space so far-away
starting points cannot underflow the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BandwidthMatrix,
    KdemapError,
    NumericalUnderflow,
    PointSet,
    iqr,
    mahalanobis_sq,
)


@dataclass(frozen=True)
class MeanShiftConfig:
    max_iter: int = 400
    tol_frac: float = 0.001  # of the minimal marginal IQR
    min_clust_size: int = 1
    merge_frac: float = 0.01  # of the minimal marginal IQR

    def __post_init__(self):
        if self.max_iter < 1:
            raise KdemapError("max_iter must be >= 1")
        if self.tol_frac <= 0 or self.merge_frac <= 0:
            raise KdemapError("tolerances must be positive")
        if self.min_clust_size < 1:
            raise KdemapError("min_clust_size must be >= 1")


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """Per-point cluster labels (0 = filtered out), one mode per cluster,
    the gradient-ascent paths and per-point iteration counts."""

    labels: np.ndarray
    modes: np.ndarray
    iterations: np.ndarray
    paths: tuple[np.ndarray, ...] | None = None

    @property
    def n_clusters(self) -> int:
        return self.modes.shape[0]


def _min_marginal_iqr(points: PointSet) -> float:
    return min(iqr(points.xs), iqr(points.ys))


def ms_step(points: PointSet, H: BandwidthMatrix, x) -> np.ndarray:
    """One mean-shift step from x: the kernel-weighted sample mean."""
    x = np.asarray(x, dtype=float)
    d = points.xy() - x
    e = -0.5 * mahalanobis_sq(H, d)
    e -= e.max()  # log-sum-exp shift: the largest weight is exactly 1
    w = np.exp(e)
    total = w.sum()
    if not total > 0.0:
        raise NumericalUnderflow("all kernel weights underflowed")
    return np.array([np.dot(w, points.xs), np.dot(w, points.ys)]) / total


def ms_converge(
    points: PointSet,
    H: BandwidthMatrix,
    x0,
    cfg: MeanShiftConfig = MeanShiftConfig(),
) -> tuple[np.ndarray, int, np.ndarray]:
    """Iterate ms_step from x0 until the step length drops under
    tol_frac x min marginal IQR, or max_iter steps. Returns the final
    iterate, the step count and the full path (starting at x0)."""
    tol = cfg.tol_frac * _min_marginal_iqr(points)
    x = np.asarray(x0, dtype=float)
    path = [x]
    iters = 0
    for _ in range(cfg.max_iter):
        nxt = ms_step(points, H, x)
        iters += 1
        step = float(np.hypot(nxt[0] - x[0], nxt[1] - x[1]))
        x = nxt
        path.append(x)
        if step < tol or step == 0.0:
            break
    return x, iters, np.array(path)


def _merge_modes(finals: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-linkage transitive closure of final iterates within `threshold`.

    Returns (assignment of each final to a group, group centroids)."""
    n = finals.shape[0]
    d2 = (finals[:, 0][:, None] - finals[:, 0][None, :]) ** 2 + (
        finals[:, 1][:, None] - finals[:, 1][None, :]
    ) ** 2
    adj = d2 < threshold * threshold
    group = np.full(n, -1, dtype=int)
    n_groups = 0
    for seed in range(n):
        if group[seed] >= 0:
            continue
        members = np.zeros(n, dtype=bool)
        members[seed] = True
        frontier = members.copy()
        while frontier.any():
            reached = adj[frontier].any(axis=0) & ~members
            members |= reached
            frontier = reached
        group[members] = n_groups
        n_groups += 1
    centroids = np.array([finals[group == g].mean(axis=0) for g in range(n_groups)])
    return group, centroids


def ms_cluster(
    points: PointSet,
    H: BandwidthMatrix,
    cfg: MeanShiftConfig = MeanShiftConfig(),
    keep_paths: bool = False,
) -> ClusterResult:
    """Cluster every data point by the mode its ascent path converges to.

    Final iterates closer than merge_frac x min marginal IQR are merged
    (single linkage; the merged mode is the centroid of the merged iterates).
    Clusters smaller than min_clust_size get label 0. Cluster indices are
    assigned by descending size; ties break by first-point order.
    """
    n = points.n
    finals = np.empty((n, 2))
    iters = np.empty(n, dtype=int)
    paths: list[np.ndarray] = []
    for i in range(n):
        x, it, path = ms_converge(points, H, (points.xs[i], points.ys[i]), cfg)
        finals[i] = x
        iters[i] = it
        if keep_paths:
            paths.append(path)

    threshold = cfg.merge_frac * _min_marginal_iqr(points)
    group, centroids = _merge_modes(finals, threshold)

    sizes = np.bincount(group, minlength=centroids.shape[0])
    first_member = np.array(
        [int(np.argmax(group == g)) for g in range(centroids.shape[0])]
    )
    order = sorted(
        range(centroids.shape[0]), key=lambda g: (-sizes[g], first_member[g])
    )
    labels = np.zeros(n, dtype=int)
    kept_modes = []
    next_label = 1
    for g in order:
        if sizes[g] >= cfg.min_clust_size:
            labels[group == g] = next_label
            kept_modes.append(centroids[g])
            next_label += 1
    modes = np.array(kept_modes) if kept_modes else np.empty((0, 2))
    return ClusterResult(
        labels=labels,
        modes=modes,
        iterations=iters,
        paths=tuple(paths) if keep_paths else None,
    )


def convex_hull(pts: np.ndarray) -> np.ndarray:
    """Convex hull by monotone chain; vertices in counterclockwise order.

    Degenerate inputs give a point (1 vertex) or a segment (2 vertices).
    """
    pts = np.asarray(pts, dtype=float)
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] <= 2:
        return uniq
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    p = uniq[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for pt in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], pt) <= 0:
            lower.pop()
        lower.append(pt)
    upper: list[np.ndarray] = []
    for pt in p[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], pt) <= 0:
            upper.pop()
        upper.append(pt)
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:  # collinear points
        ends = np.array([p[0], p[-1]])
        return ends
    return hull


def cluster_hulls(
    result: ClusterResult, points: PointSet
) -> list[tuple[int, np.ndarray]]:
    """Convex hull of each retained cluster's members, counterclockwise.

    Clusters with fewer than 3 non-collinear members come back as segment or
    point geometries (2 or 1 vertices)."""
    out = []
    for label in range(1, result.n_clusters + 1):
        members = points.xy()[result.labels == label]
        out.append((label, convex_hull(members)))
    return out
