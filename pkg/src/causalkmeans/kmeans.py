"""k-means machinery on point matrices: projection, risk, seeding, Lloyd
iteration, the restarted plug-in fitter, and an exhaustive oracle for tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InitError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 300
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class Codebook:
    """A set of k cluster centers in R^p, stored as a (k, p) matrix."""

    centers: np.ndarray

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", centers)
        if centers.shape[0] < 1:
            raise ValueError("codebook needs at least one center")
        if not np.all(np.isfinite(centers)):
            raise ValueError("codebook centers must be finite")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def p(self) -> int:
        return self.centers.shape[1]

    def has_duplicates(self) -> bool:
        return len(np.unique(self.centers, axis=0)) < self.k


@dataclass
class FitResult:
    """Outcome of a codebook fit.

    assignments are 1-based nearest-center labels of the fitted points. For
    the doubly robust fitter, risk is the cross-fitted risk estimate (which
    can be negative) and moment_residual / risk_trace are populated.
    """

    codebook: Codebook
    assignments: np.ndarray
    risk: float
    iterations: int
    converged: bool
    restarts_used: int = 1
    degenerate: bool = False
    moment_residual: float | None = None
    risk_trace: list[float] = field(default_factory=list)
    centers_trace: list[np.ndarray] = field(default_factory=list)


def as_points(points) -> np.ndarray:
    """Accept a raw matrix or anything carrying a .values matrix."""
    values = getattr(points, "values", points)
    return np.atleast_2d(np.asarray(values, dtype=float))


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances."""
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkp,nkp->nk", diff, diff)


def voronoi_labels(points, codebook: Codebook) -> np.ndarray:
    """0-based nearest-center labels; ties go to the lowest center index."""
    return sq_distances(as_points(points), codebook.centers).argmin(axis=1)


def project(x, codebook: Codebook) -> tuple[int, np.ndarray]:
    """Nearest center of the codebook: (1-based index, center vector)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    j = int(sq_distances(x, codebook.centers).argmin())
    return j + 1, codebook.centers[j].copy()


def empirical_risk(points, codebook: Codebook) -> float:
    """Mean squared distance from each point to its nearest center."""
    pts = as_points(points)
    return float(sq_distances(pts, codebook.centers).min(axis=1).mean())


def kmeanspp_init(points, k: int, rng: np.random.Generator) -> Codebook:
    """Squared-distance weighted sequential seeding; centers are data rows."""
    pts = as_points(points)
    n = len(pts)
    if len(np.unique(pts, axis=0)) < k:
        raise InitError(f"need at least {k} distinct points for k={k} seeding")
    chosen = [int(rng.integers(n))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total <= 0.0:
            raise InitError("zero seeding mass; fewer distinct points than k")
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return Codebook(pts[chosen].copy())


def _reseed_centers(pts: np.ndarray, centers: np.ndarray, empty: np.ndarray) -> np.ndarray:
    """Move each listed center onto the point currently farthest from its own
    assigned center. Strictly lowers the risk, so Lloyd stays monotone."""
    centers = centers.copy()
    d2 = sq_distances(pts, centers)
    own = d2.min(axis=1)
    taken: set[int] = set()
    for j in np.flatnonzero(empty):
        order = np.argsort(own)[::-1]
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        centers[j] = pts[pick]
        own[pick] = 0.0
    return centers


def lloyd(
    points,
    init: Codebook,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    keep_trace: bool = False,
) -> FitResult:
    """Alternate nearest-center assignment and mean updates.

    The risk is nonincreasing across iterations; empty cells are reseeded to
    the farthest point. Stops when the relative risk decrease falls below
    tol or after max_iter rounds, whichever comes first.
    """
    pts = as_points(points)
    centers = init.centers.copy()
    risk = risk_prev = empirical_risk(pts, Codebook(centers))
    converged = False
    trace = []
    centers_trace = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels = sq_distances(pts, centers).argmin(axis=1)
        for j in range(len(centers)):
            m = labels == j
            if m.any():
                centers[j] = pts[m].mean(axis=0)
        empty = np.bincount(labels, minlength=len(centers)) == 0
        if empty.any():
            centers = _reseed_centers(pts, centers, empty)
        risk = empirical_risk(pts, Codebook(centers))
        if keep_trace:
            trace.append(risk)
            centers_trace.append(centers.copy())
        if risk_prev - risk <= tol * max(risk_prev, 1e-300):
            converged = True
            break
        risk_prev = risk

    degenerate = False
    book = Codebook(centers)
    if book.has_duplicates():
        # one repair pass, then flag if the collapse persists
        dup = np.zeros(len(centers), dtype=bool)
        seen = {}
        for j, row in enumerate(map(tuple, centers)):
            if row in seen:
                dup[j] = True
            seen[row] = j
        centers = _reseed_centers(pts, centers, dup)
        labels = sq_distances(pts, centers).argmin(axis=1)
        for j in range(len(centers)):
            m = labels == j
            if m.any():
                centers[j] = pts[m].mean(axis=0)
        risk = empirical_risk(pts, Codebook(centers))
        book = Codebook(centers)
        degenerate = book.has_duplicates()

    assignments = voronoi_labels(pts, book) + 1
    return FitResult(
        codebook=book,
        assignments=assignments,
        risk=risk,
        iterations=iterations,
        converged=converged,
        degenerate=degenerate,
        risk_trace=trace,
        centers_trace=centers_trace,
    )


def plug_in_estimate(
    mu_hat,
    k: int,
    restarts: int = DEFAULT_RESTARTS,
    rng: np.random.Generator | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FitResult:
    """k-means on the estimated mean vectors: best of seeded restarts.

    Each restart runs its own generator derived from the master stream by
    restart index, so the winner does not depend on evaluation order.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    pts = as_points(mu_hat)
    seeds = rng.integers(0, 2**63 - 1, size=restarts, dtype=np.uint64)
    best: FitResult | None = None
    for s in seeds:
        sub = np.random.default_rng(int(s))
        init = kmeanspp_init(pts, k, sub)
        result = lloyd(pts, init, tol=tol, max_iter=max_iter)
        if best is None or result.risk < best.risk:
            best = result
    best.restarts_used = restarts
    return best


def brute_force_codebook(points, k: int) -> Codebook:
    """Globally optimal codebook by enumerating partitions into <= k groups.

    Exhaustive test oracle only; guarded to n <= 12 and k <= 3. Branches are
    pruned on the running sum of within-group squared errors, which can only
    grow as points are added.
    """
    pts = as_points(points)
    n, p = pts.shape
    if n > 12 or k > 3:
        raise ValueError(f"enumeration guard: need n <= 12 and k <= 3, got n={n}, k={k}")
    if k < 1:
        raise ValueError("k must be >= 1")

    best_sse = np.inf
    best_labels: np.ndarray | None = None
    labels = np.zeros(n, dtype=int)
    sums = np.zeros((k, p))
    sumsq = np.zeros(k)
    counts = np.zeros(k, dtype=int)

    def block_sse(j: int) -> float:
        if counts[j] == 0:
            return 0.0
        return sumsq[j] - (sums[j] @ sums[j]) / counts[j]

    def recurse(i: int, used: int, sse: float) -> None:
        nonlocal best_sse, best_labels
        if sse >= best_sse:
            return
        if i == n:
            best_sse = sse
            best_labels = labels.copy()
            return
        x = pts[i]
        xx = float(x @ x)
        for j in range(min(used + 1, k)):
            old = block_sse(j)
            sums[j] += x
            sumsq[j] += xx
            counts[j] += 1
            labels[i] = j
            recurse(i + 1, max(used, j + 1), sse + block_sse(j) - old)
            sums[j] -= x
            sumsq[j] -= xx
            counts[j] -= 1

    recurse(0, 0, 0.0)
    centers = np.zeros((k, p))
    for j in range(k):
        m = best_labels == j
        centers[j] = pts[m].mean(axis=0) if m.any() else centers[max(j - 1, 0)]
    return Codebook(centers)
