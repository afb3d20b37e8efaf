"""Nuisance estimation: per-arm outcome regressions, a multinomial propensity
model, and cross-fitted per-unit influence scores.

The two per-unit scores produced here are the uncentered doubly robust scores
for the conditional-mean vector and its elementwise square:

    mean_score[a]   = 1(A=a)/pi_a(X) * (Y - mu_A(X)) + mu_a(X)
    square_score[a] = 2*mu_a(X) * 1(A=a)/pi_a(X) * (Y - mu_A(X)) + mu_a(X)^2

Each stays conditionally unbiased for mu_a(X) (resp. mu_a(X)^2) when either
the outcome model or the propensity model is correct, which is what the
downstream risk estimate relies on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldAssignment
from .errors import ConfigError, DegenerateFitError, FitError

RIDGE_CONDITION_LIMIT = 1e12
SEPARATION_NORM_LIMIT = 50.0
SEPARATION_RIDGE = 1e-4
DEFAULT_CLIP = 0.01


@dataclass(frozen=True)
class FeatureSpec:
    """Covariate selection and basis for a nuisance model.

    features holds 1-based covariate indices (column x1 is index 1); degree
    expands each selected covariate into powers 1..degree. family selects the
    model: "linear" for least squares / multinomial logistic, "knn" for the
    flexible nearest-neighbor outcome regressor.
    """

    features: tuple[int, ...]
    degree: int = 1
    family: str = "linear"
    knn_k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        if any(f < 1 for f in self.features):
            raise ConfigError("feature indices are 1-based and must be >= 1")
        if self.degree < 1:
            raise ConfigError("basis degree must be >= 1")
        if self.family not in ("linear", "knn"):
            raise ConfigError(f"unknown model family {self.family!r}")

    @property
    def n_params(self) -> int:
        return 1 + len(self.features) * self.degree

    def design(self, x: np.ndarray) -> np.ndarray:
        """Design matrix: intercept plus powers of the selected covariates."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.features and max(self.features) > x.shape[1]:
            raise ConfigError(
                f"feature index {max(self.features)} exceeds covariate dimension {x.shape[1]}"
            )
        cols = [np.ones(len(x))]
        for f in self.features:
            base = x[:, f - 1]
            for g in range(1, self.degree + 1):
                cols.append(base**g)
        return np.column_stack(cols)


@dataclass(frozen=True)
class OutcomeModel:
    """Least-squares regression of the outcome within one arm."""

    arm: int
    coefficients: np.ndarray
    feature_spec: FeatureSpec
    ridge_used: bool = False

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.feature_spec.design(x) @ self.coefficients


@dataclass(frozen=True)
class KnnOutcomeModel:
    """Nearest-neighbor outcome regressor on the selected covariates."""

    arm: int
    feature_spec: FeatureSpec
    train_x: np.ndarray
    train_y: np.ndarray
    k: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sel = [f - 1 for f in self.feature_spec.features] or slice(None)
        q = x[:, sel]
        t = self.train_x[:, sel]
        d2 = ((q[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
        idx = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
        return self.train_y[idx].mean(axis=1)


@dataclass(frozen=True)
class PropensityModel:
    """Multinomial logistic model over p arms, arm 1 as the reference."""

    coefficients: np.ndarray  # (p-1, q), row a-2 for arm a
    feature_spec: FeatureSpec
    p: int
    clip_epsilon: float = DEFAULT_CLIP
    ridge_used: bool = False

    def predict_proba(self, x: np.ndarray, clipped: bool = True) -> np.ndarray:
        D = self.feature_spec.design(x)
        logits = np.column_stack([np.zeros(len(D)), D @ self.coefficients.T])
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        if clipped:
            probs = clip_propensity(probs, self.clip_epsilon)
        return probs


@dataclass(frozen=True)
class CrossFitScores:
    """Per-unit cross-fitted nuisance values and influence scores.

    Row i of every matrix comes from models trained with fold fold_of[i]
    held out. pi_hat is stored already clipped; the raw value is not kept.
    """

    mu_hat: np.ndarray
    pi_hat: np.ndarray
    mean_score: np.ndarray
    square_score: np.ndarray
    fold_of: np.ndarray
    K: int

    @property
    def n(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def p(self) -> int:
        return self.mu_hat.shape[1]


def clip_propensity(pi: np.ndarray, eps: float) -> np.ndarray:
    """Clamp each probability into [eps, 1-eps], coordinatewise.

    No renormalization: the positivity bound is per-arm, and rescaling the
    row would move interior coordinates that already satisfy it.
    """
    if not 0 < eps < 0.5:
        raise ConfigError(f"clip epsilon must be in (0, 0.5), got {eps}")
    return np.clip(np.asarray(pi, dtype=float), eps, 1.0 - eps)


def fit_outcome_regression(
    dataset: Dataset,
    arm: int,
    feature_spec: FeatureSpec,
    train_mask: np.ndarray | None = None,
    allow_ridge: bool = True,
):
    """Fit the arm-a outcome regression on the masked training units.

    Linear family: ordinary least squares by the normal equations, falling
    back to a small ridge (lambda = 1e-8 * trace(X'X)/dim) when the design is
    near-singular (condition estimate above 1e12). knn family: stores the
    training set with k = ceil(m^(4/5)) neighbors, capped at m.
    """
    if train_mask is None:
        train_mask = np.ones(dataset.n, dtype=bool)
    m = np.asarray(train_mask, dtype=bool) & (dataset.a == arm)
    n_arm = int(m.sum())
    if n_arm == 0:
        raise DegenerateFitError(f"no training units with arm {arm}")

    if feature_spec.family == "knn":
        k = feature_spec.knn_k or min(math.ceil(n_arm ** 0.8), n_arm)
        return KnnOutcomeModel(
            arm=arm,
            feature_spec=feature_spec,
            train_x=dataset.x[m].copy(),
            train_y=dataset.y[m].copy(),
            k=min(k, n_arm),
        )

    D = feature_spec.design(dataset.x[m])
    yv = dataset.y[m]
    q = D.shape[1]
    gram = D.T @ D
    cond = np.linalg.cond(gram)
    needs_ridge = n_arm < q or not np.isfinite(cond) or cond > RIDGE_CONDITION_LIMIT
    if needs_ridge and not allow_ridge:
        raise DegenerateFitError(
            f"arm {arm}: {n_arm} training units for {q} parameters with ridge disabled"
        )
    lam = 1e-8 * np.trace(gram) / q if needs_ridge else 0.0
    try:
        beta = np.linalg.solve(gram + lam * np.eye(q), D.T @ yv)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"arm {arm}: singular design even with ridge") from exc
    if not np.all(np.isfinite(beta)):
        raise FitError(f"arm {arm}: singular design even with ridge")
    return OutcomeModel(arm=arm, coefficients=beta, feature_spec=feature_spec, ridge_used=needs_ridge)


def _mlogit_loglik_grad_hess(D, onehot, B, lam):
    """Mean log-likelihood, gradient and observed information for the
    reference-coded multinomial logistic model."""
    n, q = D.shape
    p = onehot.shape[1]
    logits = np.column_stack([np.zeros(n), D @ B.T])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    P = e / e.sum(axis=1, keepdims=True)
    ll = float(np.mean(np.log(np.clip((P * onehot).sum(axis=1), 1e-300, None))))
    ll -= 0.5 * lam * float((B * B).sum())
    G = (D.T @ (onehot[:, 1:] - P[:, 1:])) / n - lam * B.T  # (q, p-1)
    info = np.zeros((q * (p - 1), q * (p - 1)))
    for a in range(1, p):
        for b in range(1, p):
            w = P[:, a] * ((1.0 if a == b else 0.0) - P[:, b])
            block = (D * w[:, None]).T @ D / n
            info[(a - 1) * q : a * q, (b - 1) * q : b * q] = -block
    info = -info + lam * np.eye(q * (p - 1))
    return ll, G, P, info


def fit_propensity(
    dataset: Dataset,
    feature_spec: FeatureSpec,
    train_mask: np.ndarray | None = None,
    clip_epsilon: float = DEFAULT_CLIP,
) -> PropensityModel:
    """Maximum-likelihood multinomial logistic fit by Newton steps.

    Step halving keeps the mean log-likelihood from decreasing; iteration
    stops once the largest score component falls below 1e-8 or after 100
    rounds. Coefficient norm above 50 is treated as a separation symptom: a
    warning is raised and the fit is redone with ridge penalty 1e-4.
    """
    if train_mask is None:
        train_mask = np.ones(dataset.n, dtype=bool)
    m = np.asarray(train_mask, dtype=bool)
    arms = dataset.a[m]
    for arm in range(1, dataset.p + 1):
        if not (arms == arm).any():
            raise DegenerateFitError(f"arm {arm} missing from propensity training data")
    D = feature_spec.design(dataset.x[m])
    n, q = D.shape
    onehot = np.zeros((n, dataset.p))
    onehot[np.arange(n), arms - 1] = 1.0

    def newton(lam: float) -> tuple[np.ndarray, bool]:
        B = np.zeros((dataset.p - 1, q))
        ll, G, _, info = _mlogit_loglik_grad_hess(D, onehot, B, lam)
        for _ in range(100):
            if np.abs(G).max() < 1e-8:
                break
            try:
                step = np.linalg.solve(info, G.T.ravel()).reshape(dataset.p - 1, q)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(info, G.T.ravel(), rcond=None)[0].reshape(
                    dataset.p - 1, q
                )
            t = 1.0
            while t > 1e-12:
                Bn = B + t * step
                ll_n, G_n, _, info_n = _mlogit_loglik_grad_hess(D, onehot, Bn, lam)
                if ll_n >= ll - 1e-12:
                    break
                t *= 0.5
            B, ll, G, info = Bn, ll_n, G_n, info_n
            if np.sqrt((B * B).sum()) > SEPARATION_NORM_LIMIT:
                return B, True
        return B, np.sqrt((B * B).sum()) > SEPARATION_NORM_LIMIT

    B, separated = newton(0.0)
    ridge_used = False
    if separated:
        warnings.warn(
            "propensity fit shows separation symptoms; refitting with ridge penalty",
            RuntimeWarning,
            stacklevel=2,
        )
        B, _ = newton(SEPARATION_RIDGE)
        ridge_used = True
    return PropensityModel(
        coefficients=B,
        feature_spec=feature_spec,
        p=dataset.p,
        clip_epsilon=clip_epsilon,
        ridge_used=ridge_used,
    )


def influence_scores(
    y: np.ndarray, a: np.ndarray, mu: np.ndarray, pi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Doubly robust per-unit scores for the arm means and squared means.

    mu and pi are n x p matrices of (possibly estimated) conditional means
    and treatment probabilities; pi is used as given, so pass clipped values.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=int)
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    n = len(y)
    ind = np.zeros_like(mu)
    ind[np.arange(n), a - 1] = 1.0
    resid = y - mu[np.arange(n), a - 1]
    weighted = ind / pi * resid[:, None]
    mean_score = weighted + mu
    square_score = 2.0 * mu * weighted + mu**2
    return mean_score, square_score


def cross_fit(
    dataset: Dataset,
    folds: FoldAssignment,
    outcome_spec: FeatureSpec,
    propensity_spec: FeatureSpec,
    eps: float = DEFAULT_CLIP,
) -> CrossFitScores:
    """Train nuisances off-fold, evaluate on-fold, and assemble all scores.

    For each fold b, outcome and propensity models are fit on the complement
    and evaluated on fold b only, so row i never sees its own fold during
    training. Deterministic given inputs.
    """
    if folds.n != dataset.n:
        raise ConfigError("fold assignment length does not match dataset")
    n, p = dataset.n, dataset.p
    mu_hat = np.zeros((n, p))
    pi_hat = np.zeros((n, p))
    for b in range(1, folds.K + 1):
        test = folds.mask(b)
        train = ~test
        try:
            for arm in range(1, p + 1):
                model = fit_outcome_regression(dataset, arm, outcome_spec, train)
                mu_hat[test, arm - 1] = model.predict(dataset.x[test])
            prop = fit_propensity(dataset, propensity_spec, train, clip_epsilon=eps)
        except FitError as exc:
            raise FitError(f"fold {b}: {exc}") from exc
        pi_hat[test] = prop.predict_proba(dataset.x[test], clipped=True)
    mean_score, square_score = influence_scores(dataset.y, dataset.a, mu_hat, pi_hat)
    return CrossFitScores(
        mu_hat=mu_hat,
        pi_hat=pi_hat,
        mean_score=mean_score,
        square_score=square_score,
        fold_of=folds.labels.copy(),
        K=folds.K,
    )
