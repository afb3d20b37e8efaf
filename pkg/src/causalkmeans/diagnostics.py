"""Cluster-count diagnostics, codebook error metrics, Voronoi-margin
diagnostics, and subgroup interpretation summaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset
from .errors import InitError
from .kmeans import Codebook, as_points, empirical_risk, lloyd, plug_in_estimate, sq_distances

PERMUTATION_SEARCH_LIMIT = 8


@dataclass(frozen=True)
class ElbowRow:
    k: int
    wcss: float
    relative_gain: float | None


@dataclass(frozen=True)
class ElbowTable:
    """Within-cluster sum of squares by k, with gains relative to wcss(1)."""

    rows: tuple[ElbowRow, ...]

    def wcss(self, k: int) -> float:
        for row in self.rows:
            if row.k == k:
                return row.wcss
        raise KeyError(k)


def elbow_scan(
    points,
    k_min: int,
    k_max: int,
    restarts: int = 10,
    rng: np.random.Generator | None = None,
) -> ElbowTable:
    """Fit every k in [k_min, k_max] and tabulate wcss and relative gains.

    Each k is fit from fresh seeded restarts plus a warm start built from the
    k-1 solution with one extra distance-weighted draw; the warm start keeps
    wcss nonincreasing in k. relative_gain(k) = (wcss(k-1) - wcss(k)) /
    wcss(1), reported from k=2 on.
    """
    rng = rng if rng is not None else np.random.default_rng()
    pts = as_points(points)
    if k_min < 1 or k_max < k_min:
        raise InitError(f"need 1 <= k_min <= k_max, got [{k_min}, {k_max}]")
    n_distinct = len(np.unique(pts, axis=0))
    if k_max > n_distinct:
        raise InitError(f"k_max={k_max} exceeds the {n_distinct} distinct points")

    n = len(pts)
    wcss: dict[int, float] = {}
    grand = pts.mean(axis=0, keepdims=True)
    wcss[1] = n * empirical_risk(pts, Codebook(grand))
    prev = grand
    for k in range(2, k_max + 1):
        fresh = plug_in_estimate(pts, k, restarts=restarts, rng=rng)
        d2 = sq_distances(pts, prev).min(axis=1)
        total = d2.sum()
        if total > 0:
            extra = pts[int(rng.choice(n, p=d2 / total))]
        else:
            extra = pts[int(rng.integers(n))]
        warm_init = Codebook(np.vstack([prev, extra]))
        warm = lloyd(pts, warm_init)
        best = fresh if fresh.risk <= warm.risk else warm
        wcss[k] = n * best.risk
        prev = best.codebook.centers

    rows = []
    for k in range(k_min, k_max + 1):
        if k == 1 or wcss[1] == 0.0:
            gain = None if k == 1 else 0.0
        else:
            gain = max((wcss[k - 1] - wcss[k]) / wcss[1], 0.0)
        rows.append(ElbowRow(k=k, wcss=wcss[k], relative_gain=gain))
    return ElbowTable(rows=tuple(rows))


def codebook_error(c_hat: Codebook, c_star: Codebook) -> tuple[float, float]:
    """Permutation-aligned L1 distance between codebooks.

    Minimizes sum_j ||c_hat_j - c_star_sigma(j)||_1 over center relabelings
    sigma; returns (raw, raw/k). Exhaustive search up to k=8, assignment
    solver beyond.
    """
    if c_hat.k != c_star.k or c_hat.p != c_star.p:
        raise ValueError(
            f"codebook shapes differ: ({c_hat.k}, {c_hat.p}) vs ({c_star.k}, {c_star.p})"
        )
    k = c_hat.k
    cost = np.abs(c_hat.centers[:, None, :] - c_star.centers[None, :, :]).sum(axis=2)
    if k <= PERMUTATION_SEARCH_LIMIT:
        idx = np.arange(k)
        raw = min(float(cost[idx, list(perm)].sum()) for perm in permutations(range(k)))
    else:
        rows, cols = linear_sum_assignment(cost)
        raw = float(cost[rows, cols].sum())
    return raw, raw / k


def _two_nearest(points: np.ndarray, codebook: Codebook):
    """Distances and indices of the nearest and second-nearest centers."""
    d2 = sq_distances(points, codebook.centers)
    idx = np.argpartition(d2, 1, axis=1)[:, :2]
    rows = np.arange(len(points))
    pair = d2[rows[:, None], idx]
    order = np.argsort(pair, axis=1)
    idx = idx[rows[:, None], order]
    pair = pair[rows[:, None], order]
    return np.sqrt(pair[:, 0]), np.sqrt(pair[:, 1]), idx[:, 0], idx[:, 1]


def boundary_mass(points, codebook: Codebook, t: float) -> float:
    """Fraction of points whose two nearest-center distances differ by <= 2t.

    This is the neighborhood-mass diagnostic for the margin geometry: the
    gap form counts a point whenever (second nearest - nearest) <= 2t. With
    a single center there is no boundary and the mass is zero.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    pts = as_points(points)
    if codebook.k == 1:
        return 0.0
    d1, d2, _, _ = _two_nearest(pts, codebook)
    return float(np.mean((d2 - d1) <= 2.0 * t))


def boundary_distances(points, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Per-point distance to the Voronoi boundary, two ways.

    Returns (bisector, gap): bisector is the exact distance to the bisecting
    hyperplane of the two nearest centers, (d2^2 - d1^2) / (2 |c1 - c2|);
    gap is d2 - d1. With one center both are +inf.
    """
    pts = as_points(points)
    if codebook.k == 1:
        inf = np.full(len(pts), np.inf)
        return inf, inf.copy()
    d1, d2, j1, j2 = _two_nearest(pts, codebook)
    sep = np.linalg.norm(codebook.centers[j1] - codebook.centers[j2], axis=1)
    bisector = (d2**2 - d1**2) / (2.0 * sep)
    return bisector, d2 - d1


def cate_pairs(p: int) -> list[tuple[int, int]]:
    """Ordered arm pairs (a, a') with a > a', matching tau_{a,a'} = mu_a - mu_a'."""
    return [(a, b) for a in range(2, p + 1) for b in range(1, a)]


def pairwise_cates(mu) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Per-unit pairwise effect contrasts from a mean matrix: column a minus
    column a' for each pair. Returns (pairs, values) with values (npairs, n)."""
    m = as_points(mu)
    pairs = cate_pairs(m.shape[1])
    values = np.stack([m[:, a - 1] - m[:, b - 1] for a, b in pairs]) if pairs else np.zeros((0, len(m)))
    return pairs, values


@dataclass(frozen=True)
class ClusterProfile:
    """Per-cluster covariate and effect summaries.

    cov_z holds standardized covariate means against the full-sample mean and
    population standard deviation; zero-variance covariates get z = 0 and a
    flag. cate_mean / cate_sd are (npairs, k). Empty clusters keep size 0 and
    NaN statistics.
    """

    sizes: np.ndarray
    cov_z: np.ndarray
    zero_variance: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    cate_mean: np.ndarray
    cate_sd: np.ndarray


def cluster_profiles(dataset: Dataset, mu_hat, assignments: np.ndarray, k: int | None = None) -> ClusterProfile:
    """Summarize each cluster: size, covariate z-scores, pairwise effects."""
    labels = np.asarray(assignments, dtype=int)
    if labels.min() < 1:
        raise ValueError("assignment labels are 1-based")
    k = int(k if k is not None else labels.max())
    x = dataset.x
    full_mean = x.mean(axis=0)
    full_sd = x.std(axis=0)  # population (n-denominator) scale
    zero_var = full_sd == 0.0
    safe_sd = np.where(zero_var, 1.0, full_sd)

    pairs, cates = pairwise_cates(mu_hat)
    sizes = np.zeros(k, dtype=int)
    cov_z = np.full((k, dataset.d), np.nan)
    cate_mean = np.full((len(pairs), k), np.nan)
    cate_sd = np.full((len(pairs), k), np.nan)
    for j in range(1, k + 1):
        m = labels == j
        sizes[j - 1] = int(m.sum())
        if not m.any():
            continue
        cov_z[j - 1] = (x[m].mean(axis=0) - full_mean) / safe_sd
        cov_z[j - 1, zero_var] = 0.0
        cate_mean[:, j - 1] = cates[:, m].mean(axis=1)
        cate_sd[:, j - 1] = cates[:, m].std(axis=1)
    return ClusterProfile(
        sizes=sizes,
        cov_z=cov_z,
        zero_variance=zero_var,
        pairs=tuple(pairs),
        cate_mean=cate_mean,
        cate_sd=cate_sd,
    )
