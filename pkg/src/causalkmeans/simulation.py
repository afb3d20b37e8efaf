"""Six-cluster hexagon benchmark: a data-generating design with known optimal
codebook and oracle risk, plus a seeded Monte Carlo study comparing the
plug-in and doubly robust codebook fitters across sample sizes.

Design: covariates X1..X6 are i.i.d. Uniform[-1, 1]; the polar angle of
(X1, X2) picks one of six sectors; the two potential-outcome means sit at the
matching vertex of a regular hexagon of circumradius 6, perturbed by small
trigonometric jitters of scale delta in (X3..X6). Adjacent vertices are 6
apart, so every mean vector stays at least 3 - 1.5*sqrt(2)*delta from the
optimal Voronoi boundaries. Treatment (arm 2) is drawn from a logistic model
in (X1, X2, X3); outcomes add centered Gaussian noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import Dataset, assign_folds
from .diagnostics import codebook_error
from .eif import OptimizeOptions, minimize_semiparametric
from .errors import ConfigError
from .kmeans import Codebook, plug_in_estimate, sq_distances
from .nuisance import CrossFitScores, FeatureSpec, clip_propensity, cross_fit, influence_scores

PLUG_IN = "plug_in"
SEMIPARAMETRIC = "semiparametric"
ESTIMATORS = (PLUG_IN, SEMIPARAMETRIC)
_EST_CODE = {PLUG_IN: 1, SEMIPARAMETRIC: 2}

SECTOR_BREAKS = np.array(
    [-np.pi, -2 * np.pi / 3, -np.pi / 3, 0.0, np.pi / 3, 2 * np.pi / 3, np.pi]
)
# max Euclidean norm of the jitter pair, in units of delta
JITTER_RADIUS = 1.5 * math.sqrt(2.0)
TREAT_PROB_CLAMP = (0.05, 0.95)


def hexagon_centers() -> Codebook:
    """The six optimal centers: a regular hexagon of circumradius 6 with one
    vertex on the positive first axis, so the side length is 6 and all
    coordinates lie within [-6, 6]^2."""
    ang = np.arange(6) * np.pi / 3.0
    return Codebook(np.column_stack([6.0 * np.cos(ang), 6.0 * np.sin(ang)]))


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the benchmark design and its Monte Carlo study."""

    delta: float = 0.01
    sigma: float = 0.15
    ns: tuple[int, ...] = (500, 1000, 2000, 4000)
    reps: int = 20
    seed: int = 1
    K: int = 5
    estimators: tuple[str, ...] = ESTIMATORS
    k: int = 6
    restarts: int = 10
    eps: float = 0.01
    outcome_spec: FeatureSpec = field(default_factory=lambda: FeatureSpec((1, 2)))
    propensity_spec: FeatureSpec = field(default_factory=lambda: FeatureSpec((1, 2, 3)))
    eval_draws: int = 200_000
    method: str = "generalized_lloyd"
    oracle_nuisances: bool = False

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.ns:
            raise ConfigError("ns must be nonempty")
        for est in self.estimators:
            if est not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {est!r}")


@dataclass(frozen=True)
class SimulatedSample:
    """One draw from the design plus its oracle quantities."""

    dataset: Dataset
    mu: np.ndarray  # (n, 2) true mean vectors
    treat_prob: np.ndarray  # (n,) true probability of arm 2
    sectors: np.ndarray  # (n,) 1-based sector labels


def sector_of(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Sector index 1..6 from the polar angle, left-open right-closed
    breakpoints at multiples of pi/3; angle -pi folds into sector 1."""
    theta = np.arctan2(x2, x1)
    s = np.searchsorted(SECTOR_BREAKS, theta, side="left")
    return np.where(theta == -np.pi, 1, s)


def _oracle_mu(x: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    sectors = sector_of(x[:, 0], x[:, 1])
    centers = hexagon_centers().centers[sectors - 1]
    j0 = delta * (np.sin(np.pi * x[:, 2]) + 0.5 * np.cos(np.pi * x[:, 3]))
    j1 = delta * (np.cos(np.pi * x[:, 4]) + 0.5 * np.sin(np.pi * x[:, 5]))
    return centers + np.column_stack([j0, j1]), sectors


def treatment_probability(x: np.ndarray) -> np.ndarray:
    """Probability of receiving arm 2, clamped to [0.05, 0.95] (the clamp is
    inactive for this design but documents the intended range)."""
    lin = -0.2 + 0.6 * x[:, 0] - 0.25 * x[:, 1] + 0.2 * x[:, 2]
    return np.clip(expit(lin), *TREAT_PROB_CLAMP)


def generate_sample(n: int, rng: np.random.Generator, cfg: SimConfig) -> SimulatedSample:
    """Draw n units: covariates, treatment, noisy outcome, oracle values."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    x = rng.uniform(-1.0, 1.0, size=(n, 6))
    mu, sectors = _oracle_mu(x, cfg.delta)
    prob = treatment_probability(x)
    a = 1 + (rng.random(n) < prob).astype(int)  # arm 2 = treated
    noise = rng.normal(0.0, cfg.sigma, size=n) if cfg.sigma > 0 else np.zeros(n)
    y = mu[np.arange(n), a - 1] + noise
    return SimulatedSample(
        dataset=Dataset(y=y, a=a, x=x, p=2),
        mu=mu,
        treat_prob=prob,
        sectors=sectors,
    )


def oracle_population_risk(delta: float) -> float:
    """Closed-form risk of the optimal codebook: the expected squared jitter
    norm, (1/2 + 1/8 + 1/2 + 1/8) * delta^2 = 1.25 * delta^2."""
    if delta < 0:
        raise ConfigError("delta must be >= 0")
    return 1.25 * delta * delta


def evaluate_population_risk(
    codebook: Codebook, cfg: SimConfig, m: int = 200_000, rng: np.random.Generator | None = None
) -> tuple[float, float]:
    """Monte Carlo population risk of a codebook under the design.

    Averages the squared distance from fresh oracle mean draws to their
    nearest center; returns (estimate, standard error).
    """
    if m < 10_000:
        raise ConfigError("need at least 1e4 evaluation draws")
    rng = rng if rng is not None else np.random.default_rng()
    x = rng.uniform(-1.0, 1.0, size=(m, 6))
    mu, _ = _oracle_mu(x, cfg.delta)
    per_draw = sq_distances(mu, codebook.centers).min(axis=1)
    return float(per_draw.mean()), float(per_draw.std(ddof=1) / math.sqrt(m))


def _oracle_scores(sample: SimulatedSample, cfg: SimConfig) -> CrossFitScores:
    """Influence scores built from the true nuisances (no cross-fitting)."""
    pi = np.column_stack([1.0 - sample.treat_prob, sample.treat_prob])
    pi = clip_propensity(pi, cfg.eps)
    mean_score, square_score = influence_scores(
        sample.dataset.y, sample.dataset.a, sample.mu, pi
    )
    return CrossFitScores(
        mu_hat=sample.mu.copy(),
        pi_hat=pi,
        mean_score=mean_score,
        square_score=square_score,
        fold_of=np.ones(sample.dataset.n, dtype=int),
        K=cfg.K,
    )


@dataclass(frozen=True)
class ReplicationResult:
    excess_risk: float
    per_center_l1: float
    moment_residual: float


def run_replication(n: int, seed: int, estimator: str, cfg: SimConfig) -> ReplicationResult:
    """One full cell: generate, cross-fit, fit the codebook, score it.

    Deterministic in (n, seed, estimator, cfg). The doubly robust fit is
    warm-started at the plug-in codebook.
    """
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    ss = np.random.SeedSequence((int(seed), int(n), _EST_CODE[estimator]))
    rng_data, rng_folds, rng_fit, rng_eval = (np.random.default_rng(c) for c in ss.spawn(4))

    sample = generate_sample(n, rng_data, cfg)
    if cfg.oracle_nuisances:
        scores = _oracle_scores(sample, cfg)
    else:
        folds = assign_folds(n, cfg.K, seed=int(rng_folds.integers(2**63)))
        scores = cross_fit(sample.dataset, folds, cfg.outcome_spec, cfg.propensity_spec, cfg.eps)

    plug = plug_in_estimate(scores.mu_hat, cfg.k, restarts=cfg.restarts, rng=rng_fit)
    if estimator == PLUG_IN:
        fitted = plug
        residual = math.nan
    else:
        fit = minimize_semiparametric(
            scores, cfg.k, init=plug.codebook, method=cfg.method, opts=OptimizeOptions()
        )
        fitted = fit
        residual = float(fit.moment_residual)

    value, _ = evaluate_population_risk(fitted.codebook, cfg, m=cfg.eval_draws, rng=rng_eval)
    excess = value - oracle_population_risk(cfg.delta)
    _, per_center = codebook_error(fitted.codebook, hexagon_centers())
    return ReplicationResult(excess_risk=excess, per_center_l1=per_center, moment_residual=residual)


@dataclass(frozen=True)
class StudyRow:
    n: int
    estimator: str
    rep: int
    excess_risk: float
    per_center_l1: float
    moment_residual: float
    failed: bool


@dataclass(frozen=True)
class SummaryRow:
    n: int
    estimator: str
    median_excess_risk: float
    median_per_center_l1: float
    n_failed: int


@dataclass(frozen=True)
class StudyResult:
    rows: tuple[StudyRow, ...]
    summary: tuple[SummaryRow, ...]
    slopes: dict  # estimator -> {"excess_risk": float, "per_center_l1": float}


def loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) on log(ns), positive values only."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0)
    if keep.sum() < 2:
        return math.nan
    lx = np.log(ns[keep])
    ly = np.log(values[keep])
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence((int(seed), int(rep))).generate_state(1)[0])


def _run_cell(args) -> StudyRow:
    n, estimator, rep, cfg = args
    try:
        res = run_replication(n, _rep_seed(cfg.seed, rep), estimator, cfg)
        return StudyRow(
            n=n,
            estimator=estimator,
            rep=rep,
            excess_risk=res.excess_risk,
            per_center_l1=res.per_center_l1,
            moment_residual=res.moment_residual,
            failed=False,
        )
    except Exception:
        return StudyRow(
            n=n,
            estimator=estimator,
            rep=rep,
            excess_risk=math.nan,
            per_center_l1=math.nan,
            moment_residual=math.nan,
            failed=True,
        )


def run_study(cfg: SimConfig, workers: int = 1) -> StudyResult:
    """Run every (n, estimator, rep) cell and summarize.

    Cells draw from generators derived from (seed, n, estimator, rep), so the
    result is identical for any worker count or scheduling. Failed cells are
    recorded with a flag, never dropped. Summaries use medians; slopes are
    log-log regressions of the medians on n, one per estimator and metric.
    """
    cells = [
        (n, est, rep, cfg)
        for n in cfg.ns
        for est in cfg.estimators
        for rep in range(cfg.reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells, chunksize=1))
    else:
        rows = [_run_cell(c) for c in cells]

    summary = []
    medians: dict[str, dict[str, list]] = {est: {"n": [], "er": [], "cb": []} for est in cfg.estimators}
    for n in cfg.ns:
        for est in cfg.estimators:
            sub = [r for r in rows if r.n == n and r.estimator == est]
            ok = [r for r in sub if not r.failed]
            med_er = float(np.median([r.excess_risk for r in ok])) if ok else math.nan
            med_cb = float(np.median([r.per_center_l1 for r in ok])) if ok else math.nan
            summary.append(
                SummaryRow(
                    n=n,
                    estimator=est,
                    median_excess_risk=med_er,
                    median_per_center_l1=med_cb,
                    n_failed=len(sub) - len(ok),
                )
            )
            medians[est]["n"].append(n)
            medians[est]["er"].append(med_er)
            medians[est]["cb"].append(med_cb)

    slopes = {
        est: {
            "excess_risk": loglog_slope(medians[est]["n"], medians[est]["er"]),
            "per_center_l1": loglog_slope(medians[est]["n"], medians[est]["cb"]),
        }
        for est in cfg.estimators
    }
    return StudyResult(rows=tuple(rows), summary=tuple(summary), slopes=slopes)


def with_overrides(cfg: SimConfig, **kwargs) -> SimConfig:
    """Copy the config with selected fields replaced."""
    return replace(cfg, **kwargs)
