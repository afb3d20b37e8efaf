"""Result serialization: delimited tables with reproducible float formatting,
and the study figures rendered to SVG files.

Floats are written with 17 significant digits so a rerun with the same seed
produces byte-identical CSVs. NaN serializes to an empty cell.
"""

from __future__ import annotations

import math
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .diagnostics import ClusterProfile, ElbowTable  # noqa: E402
from .kmeans import FitResult  # noqa: E402
from .simulation import StudyResult  # noqa: E402

plt.rcParams["svg.hashsalt"] = "causalkmeans"


def fmt(value) -> str:
    """One CSV cell: 17-significant-digit floats, empty for NaN/None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    return f"{v:.17g}"


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(c) for c in row) + "\n")


def write_centers(path, fit: FitResult) -> None:
    k, p = fit.codebook.centers.shape
    header = ["center"] + [f"c{j}" for j in range(1, p + 1)]
    rows = [[j + 1, *fit.codebook.centers[j]] for j in range(k)]
    write_csv(path, header, rows)


def write_assignments(path, fit: FitResult) -> None:
    rows = [[i + 1, int(lab)] for i, lab in enumerate(fit.assignments)]
    write_csv(path, ["row", "cluster"], rows)


def write_fit_report(path, fit: FitResult, estimator: str, n: int, score_variance: float | None) -> None:
    header = [
        "estimator",
        "k",
        "n",
        "risk",
        "iterations",
        "converged",
        "restarts_used",
        "moment_residual",
        "score_variance",
    ]
    row = [
        estimator,
        fit.codebook.k,
        n,
        fit.risk,
        fit.iterations,
        fit.converged,
        fit.restarts_used,
        fit.moment_residual if fit.moment_residual is not None else math.nan,
        score_variance if score_variance is not None else math.nan,
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        fh.write(",".join(c if isinstance(c, str) else fmt(c) for c in row) + "\n")


def write_risk_trace(path, fit: FitResult) -> None:
    rows = [[i, r] for i, r in enumerate(fit.risk_trace)]
    write_csv(path, ["iteration", "risk_hat"], rows)


def write_study(raw_path, summary_path, study: StudyResult) -> None:
    raw_rows = [
        [r.n, r.estimator, r.rep, r.excess_risk, r.per_center_l1, r.moment_residual, int(r.failed)]
        for r in study.rows
    ]
    _write_mixed(
        raw_path,
        ["n", "estimator", "rep", "excess_risk", "per_center_l1", "moment_residual", "failed"],
        raw_rows,
    )
    sum_rows = [
        [
            s.n,
            s.estimator,
            s.median_excess_risk,
            s.median_per_center_l1,
            study.slopes[s.estimator]["excess_risk"],
            study.slopes[s.estimator]["per_center_l1"],
            s.n_failed,
        ]
        for s in study.summary
    ]
    _write_mixed(
        summary_path,
        [
            "n",
            "estimator",
            "median_excess_risk",
            "median_per_center_l1",
            "slope_excess_risk",
            "slope_per_center_l1",
            "failed",
        ],
        sum_rows,
    )


def _write_mixed(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else fmt(c) for c in row) + "\n")


def write_elbow(path, table: ElbowTable) -> None:
    rows = [[r.k, r.wcss, r.relative_gain if r.relative_gain is not None else math.nan] for r in table.rows]
    write_csv(path, ["k", "wcss", "relative_gain"], rows)


def write_boundary_mass(path, t_grid, masses, bisector_masses) -> None:
    rows = [[t, m, bm] for t, m, bm in zip(t_grid, masses, bisector_masses)]
    write_csv(path, ["t", "boundary_mass", "bisector_mass"], rows)


def write_boundary_distances(path, bisector: np.ndarray, gap: np.ndarray) -> None:
    rows = [[i + 1, b, g] for i, (b, g) in enumerate(zip(bisector, gap))]
    write_csv(path, ["row", "boundary_distance", "gap"], rows)


def write_profiles(cov_path, cate_path, profile: ClusterProfile) -> None:
    cov_rows = []
    for j in range(len(profile.sizes)):
        for c in range(profile.cov_z.shape[1]):
            cov_rows.append([j + 1, int(profile.sizes[j]), f"x{c + 1}", profile.cov_z[j, c]])
    _write_mixed(cov_path, ["cluster", "size", "cov", "zmean"], cov_rows)

    cate_rows = []
    for q, (a, b) in enumerate(profile.pairs):
        for j in range(len(profile.sizes)):
            cate_rows.append([j + 1, f"tau_{a}_{b}", profile.cate_mean[q, j], profile.cate_sd[q, j]])
    _write_mixed(cate_path, ["cluster", "pair", "cate_mean", "cate_sd"], cate_rows)


def write_cate_values(path, pairs, values: np.ndarray, assignments: np.ndarray) -> None:
    """Raw per-unit pairwise effects with cluster labels, for external plotting."""
    rows = []
    for q, (a, b) in enumerate(pairs):
        for i in range(values.shape[1]):
            rows.append([i + 1, int(assignments[i]), f"tau_{a}_{b}", values[q, i]])
    _write_mixed(path, ["row", "cluster", "pair", "value"], rows)


def _study_series(study: StudyResult, metric: str):
    by_est: dict[str, tuple[list, list]] = {}
    for s in study.summary:
        xs, ys = by_est.setdefault(s.estimator, ([], []))
        xs.append(s.n)
        ys.append(getattr(s, metric))
    return by_est


_STYLE = {"plug_in": dict(color="#d95f02", marker="o"), "semiparametric": dict(color="#1b9e77", marker="s")}


def plot_study(study: StudyResult, out_dir, stem_excess="excess_risk", stem_codebook="codebook_error"):
    """Render the two study figures (log-log medians vs n) to SVG files."""
    paths = []
    for metric, stem, ylabel in [
        ("median_excess_risk", stem_excess, "median excess risk"),
        ("median_per_center_l1", stem_codebook, "median per-center L1 error"),
    ]:
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for est, (xs, ys) in _study_series(study, metric).items():
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            keep = np.isfinite(ys) & (ys > 0)
            style = _STYLE.get(est, {})
            ax.loglog(xs[keep], ys[keep], label=est, **style)
        ax.set_xlabel("sample size n")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
