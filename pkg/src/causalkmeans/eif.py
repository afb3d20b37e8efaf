"""Cross-fitted doubly robust clustering risk and its minimizers.

For a fixed codebook C the per-unit risk score is

    sum_a [ square_score_a - 2 * mean_score_a * c_a + c_a^2 ],

with c the center nearest to the unit's estimated mean vector. Averaging the
score over the sample gives the cross-fitted risk estimate; its bias is
second order in the nuisance errors, which is what buys the faster rates
over plain k-means on the estimated vectors.

Assignment always uses the estimated mean rows; center updates use the
mean_score rows, matching the first-order condition of the averaged score:
the gradient block for center j is the mean over its cell of 2*(c_j -
mean_score row), and the curvature is diagonal with entries 2 * (cell
proportion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OptimizationError
from .kmeans import Codebook, FitResult, as_points, sq_distances, voronoi_labels
from .nuisance import CrossFitScores

GRADIENT_TOL = 1e-8
LLOYD_ROUNDS = 100
GRADIENT_STEPS = 500
NEWTON_ROUNDS = 100

METHODS = ("generalized_lloyd", "gradient_descent", "newton")


@dataclass(frozen=True)
class RiskGradient:
    """Per-center gradient blocks of the risk estimate.

    blocks[j] = (2/n) * sum over units assigned to j of (c_j - mean_score
    row); cells with no assigned units have a zero block.
    """

    blocks: np.ndarray
    active_counts: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.blocks).max())


@dataclass(frozen=True)
class RiskHessian:
    """Diagonal curvature of the averaged gradient: 2 * cell proportion,
    repeated p times per center block."""

    proportions: np.ndarray
    p: int

    @property
    def singular(self) -> bool:
        return bool((self.proportions == 0.0).any())

    def diagonal(self) -> np.ndarray:
        return np.repeat(2.0 * self.proportions, self.p)


@dataclass(frozen=True)
class OptimizeOptions:
    tol: float = GRADIENT_TOL
    max_rounds: int = LLOYD_ROUNDS
    max_steps: int = GRADIENT_STEPS
    step_shrink: float = 0.5
    initial_step: float | None = None


def unit_risk_score(mean_row, square_row, mu_row, codebook: Codebook) -> float:
    """Risk score of a single unit at a fixed codebook.

    The projection index is taken from the estimated mean row; with exact
    noiseless scores this reduces to the squared distance from the mean row
    to its nearest center.
    """
    mean_row = np.asarray(mean_row, dtype=float)
    square_row = np.asarray(square_row, dtype=float)
    mu_row = np.asarray(mu_row, dtype=float)
    _, c = _project_row(mu_row, codebook)
    return float(np.sum(square_row - 2.0 * mean_row * c + c**2))


def _project_row(mu_row: np.ndarray, codebook: Codebook) -> tuple[int, np.ndarray]:
    j = int(sq_distances(mu_row.reshape(1, -1), codebook.centers).argmin())
    return j, codebook.centers[j]


def _unpack(scores: CrossFitScores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return scores.mean_score, scores.square_score, scores.mu_hat


def risk_estimate(scores: CrossFitScores, codebook: Codebook) -> float:
    """Cross-fitted risk estimate: the grand mean of the per-unit scores.

    The fold-weighted average of fold means equals the grand mean because
    the weights are the fold frequencies. Negative values can occur for poor
    codebooks with noisy scores and are reported as-is.
    """
    mean_score, square_score, mu = _unpack(scores)
    labels = voronoi_labels(mu, codebook)
    c = codebook.centers[labels]
    per_unit = square_score.sum(axis=1) - 2.0 * (mean_score * c).sum(axis=1) + (c**2).sum(axis=1)
    return float(per_unit.mean())


def unit_risk_scores(scores: CrossFitScores, codebook: Codebook) -> np.ndarray:
    """Vector of per-unit risk scores (used for the variance report)."""
    mean_score, square_score, mu = _unpack(scores)
    c = codebook.centers[voronoi_labels(mu, codebook)]
    return square_score.sum(axis=1) - 2.0 * (mean_score * c).sum(axis=1) + (c**2).sum(axis=1)


def risk_gradient(scores: CrossFitScores, codebook: Codebook) -> RiskGradient:
    """Analytic gradient of the risk estimate with labels held fixed."""
    mean_score, _, mu = _unpack(scores)
    n = len(mu)
    labels = voronoi_labels(mu, codebook)
    k, p = codebook.centers.shape
    blocks = np.zeros((k, p))
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        m = labels == j
        if m.any():
            blocks[j] = 2.0 * (counts[j] * codebook.centers[j] - mean_score[m].sum(axis=0)) / n
    return RiskGradient(blocks=blocks, active_counts=counts)


def risk_hessian(mu_hat, codebook: Codebook) -> RiskHessian:
    """Empirical cell proportions and the implied diagonal curvature."""
    labels = voronoi_labels(as_points(mu_hat), codebook)
    counts = np.bincount(labels, minlength=codebook.k)
    return RiskHessian(proportions=counts / len(labels), p=codebook.p)


def _update_centers(centers: np.ndarray, labels: np.ndarray, mean_score: np.ndarray) -> np.ndarray:
    """Set each nonempty center to the mean of its assigned mean_score rows;
    empty cells are left where they are (their gradient block is zero)."""
    out = centers.copy()
    for j in range(len(centers)):
        m = labels == j
        if m.any():
            out[j] = mean_score[m].mean(axis=0)
    return out


def minimize_semiparametric(
    scores: CrossFitScores,
    k: int,
    init: Codebook,
    method: str = "generalized_lloyd",
    opts: OptimizeOptions | None = None,
    keep_trace: bool = False,
) -> FitResult:
    """Minimize the cross-fitted risk estimate from a warm start.

    generalized_lloyd alternates nearest-center labeling of the estimated
    mean rows with mean_score center updates, stopping at a label fixed
    point. The objective is not guaranteed monotone along that path, so every
    iterate's risk is tracked and the best one visited is returned; the
    returned risk is therefore never above the risk at init. gradient_descent
    backtracks on any risk increase; newton rescales each gradient block by
    its cell proportion (one such step from a label-stable codebook lands on
    the mean_score cell means).
    """
    opts = opts or OptimizeOptions()
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if scores.n == 0:
        raise OptimizationError("no units: every cell would be empty")
    if init.k != k:
        raise ConfigError(f"init codebook has k={init.k}, expected {k}")
    if init.p != scores.p:
        raise ConfigError("init codebook dimension does not match scores")

    mean_score, _, mu = _unpack(scores)
    centers = init.centers.copy()
    trace: list[float] = []
    centers_trace: list[np.ndarray] = []
    best_risk = np.inf
    best_centers = centers.copy()
    label_fixed = False
    grad_ok = False
    iterations = 0

    def visit(c: np.ndarray) -> float:
        nonlocal best_risk, best_centers
        r = risk_estimate(scores, Codebook(c))
        trace.append(r)
        if keep_trace:
            centers_trace.append(c.copy())
        if r < best_risk:
            best_risk = r
            best_centers = c.copy()
        return r

    if method == "generalized_lloyd":
        labels_prev = None
        for iterations in range(opts.max_rounds + 1):
            visit(centers)
            labels = voronoi_labels(mu, Codebook(centers))
            if labels_prev is not None and np.array_equal(labels, labels_prev):
                label_fixed = True
                break
            centers = _update_centers(centers, labels, mean_score)
            labels_prev = labels
    elif method == "gradient_descent":
        risk = visit(centers)
        span = mu.max(axis=0) - mu.min(axis=0)
        step = opts.initial_step if opts.initial_step is not None else 0.1 * float(
            np.sqrt((span**2).sum())
        )
        if step <= 0.0:
            step = 0.1
        for iterations in range(1, opts.max_steps + 1):
            g = risk_gradient(scores, Codebook(centers))
            if g.max_abs < opts.tol:
                label_fixed = True
                break
            accepted = False
            while step > 1e-18:
                cand = centers - step * g.blocks
                r_cand = risk_estimate(scores, Codebook(cand))
                if r_cand <= risk:
                    accepted = True
                    break
                step *= opts.step_shrink
            if not accepted:
                break
            centers = cand
            risk = visit(centers)
    else:  # newton
        for iterations in range(1, opts.max_rounds + 1):
            visit(centers)
            g = risk_gradient(scores, Codebook(centers))
            if g.max_abs < opts.tol:
                label_fixed = True
                break
            props = risk_hessian(mu, Codebook(centers)).proportions
            nonempty = props > 0
            centers = centers.copy()
            centers[nonempty] -= g.blocks[nonempty] / (2.0 * props[nonempty, None])
        else:
            visit(centers)  # final update never scored inside the loop

    book = Codebook(best_centers)
    residual = risk_gradient(scores, book).max_abs
    grad_ok = residual < opts.tol
    assignments = voronoi_labels(mu, book) + 1
    return FitResult(
        codebook=book,
        assignments=assignments,
        risk=best_risk,
        iterations=iterations,
        converged=bool(label_fixed and grad_ok),
        moment_residual=residual,
        risk_trace=trace,
        centers_trace=centers_trace,
    )


@dataclass(frozen=True)
class SemiObjective:
    """Convenience wrapper binding cross-fitted scores to a cluster count."""

    scores: CrossFitScores
    k: int
    parametrization: str = "levels"

    def risk(self, codebook: Codebook) -> float:
        return risk_estimate(self.scores, codebook)

    def gradient(self, codebook: Codebook) -> RiskGradient:
        return risk_gradient(self.scores, codebook)

    def minimize(self, init: Codebook, method: str = "generalized_lloyd", **kwargs) -> FitResult:
        return minimize_semiparametric(self.scores, self.k, init, method=method, **kwargs)
