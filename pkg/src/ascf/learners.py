"""Numeric models: multi-output linear regression, its bootstrap ensemble,
an L2-regularized logistic classifier, and recursive feature elimination.

Conventions that the rest of the package relies on:

* ``fit_linear`` returns the minimum-norm least-squares solution over the
  intercept-augmented design, computed by an orthogonal factorization
  (LAPACK ``gelsy``), never by normal equations.
* ``fit_logistic`` standardizes its inputs internally using statistics of
  the training rows only; the penalty ``||w||^2 / (2C)`` applies to the
  weights, never the intercept.
* All fitted models are immutable and safe to share between threads.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from .dataset import Dataset, make_splits
from .errors import DegenerateEnsembleWarning, SingleClassError
from .seeding import mix_seed
from .stats import f1_score

logger = logging.getLogger(__name__)


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-d or 2-d, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class LinearModel:
    """Affine map from selection vectors to predicted classification vectors."""

    weights: np.ndarray  # (D, M)
    intercepts: np.ndarray  # (D,)

    def predict(self, z) -> np.ndarray:
        """Predict for a single vector (M,) -> (D,) or a batch (n, M) -> (n, D)."""
        z = np.asarray(z, dtype=float)
        return z @ self.weights.T + self.intercepts


def _min_norm_lstsq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution via complete orthogonal factorization.

    Column-pivoted QR reveals the numerical rank through the decay of the
    R diagonal (cut at max(n, p) * eps relative to the leading entry); the
    rank-deficient case is completed by a second QR of the leading rows'
    transpose, which yields the exact minimum-norm solution without ever
    forming normal equations.
    """
    n, p = A.shape
    q, r, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((p, B.shape[1]))
    rank = int(np.sum(diag > max(n, p) * np.finfo(float).eps * diag[0]))
    c1 = (q.T @ B)[:rank]
    top = r[:rank, :]
    if rank == p:
        y = scipy.linalg.solve_triangular(top, c1)
    else:
        q2, r2 = scipy.linalg.qr(top.T, mode="economic")
        u = scipy.linalg.solve_triangular(r2.T, c1, lower=True)
        y = q2 @ u
    coef = np.zeros((p, B.shape[1]))
    coef[perm] = y
    return coef


def fit_linear(Z, X) -> LinearModel:
    """Least-squares fit of an affine map z -> x over paired rows.

    Each output dimension minimizes the sum of squared residuals. For
    rank-deficient designs the solution is the minimum-norm one over the
    intercept-augmented coefficient vector, matching the pseudoinverse of
    the augmented design.
    """
    Z = _as_2d(Z, "Z")
    X = _as_2d(X, "X")
    if Z.shape[0] != X.shape[0]:
        raise ValueError(f"row count mismatch: {Z.shape[0]} z rows vs {X.shape[0]} x rows")
    if Z.shape[0] < 1:
        raise ValueError("need at least one training row")
    n = Z.shape[0]
    design = np.hstack([np.ones((n, 1)), Z])
    coef = _min_norm_lstsq(design, X)
    return LinearModel(weights=coef[1:].T.copy(), intercepts=coef[0].copy())


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Bag of linear regressors, each fitted on a with-replacement resample."""

    members: tuple[LinearModel, ...]
    member_seeds: tuple[int, ...]
    train_x_var: np.ndarray  # per-dimension sample variance of the source rows

    @property
    def size(self) -> int:
        return len(self.members)

    def predict_all(self, Z) -> np.ndarray:
        """Stack of member predictions, shape (B, n, D) for a (n, M) batch."""
        return np.stack([m.predict(Z) for m in self.members])


def fit_bootstrap_ensemble(Z, X, B: int = 10, seed: int = 0) -> BootstrapEnsemble:
    """Fit ``B`` linear regressors on independent bootstrap resamples.

    Member ``b`` resamples the rows with replacement (same size as the
    input) using a generator seeded by ``mix_seed(seed, "member", b)``, so
    the ensemble is reproducible from ``(rows, B, seed)`` alone.
    """
    Z = _as_2d(Z, "Z")
    X = _as_2d(X, "X")
    if Z.shape[0] != X.shape[0]:
        raise ValueError(f"row count mismatch: {Z.shape[0]} z rows vs {X.shape[0]} x rows")
    n = Z.shape[0]
    if n < 2:
        raise ValueError("bootstrap ensemble needs at least 2 rows")
    if B < 2:
        raise ValueError("bootstrap ensemble needs at least 2 members")
    rows = np.hstack([Z, X])
    if bool(np.all(rows == rows[0])):
        warnings.warn(
            "all acquired rows are identical; ensemble members will agree and "
            "imputation variance will be zero",
            DegenerateEnsembleWarning,
            stacklevel=2,
        )
    members = []
    member_seeds = []
    for b in range(B):
        s = mix_seed(seed, "member", b)
        idx = np.random.default_rng(s).integers(0, n, size=n)
        members.append(fit_linear(Z[idx], X[idx]))
        member_seeds.append(s)
    return BootstrapEnsemble(
        members=tuple(members),
        member_seeds=tuple(member_seeds),
        train_x_var=X.var(axis=0, ddof=1),
    )


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension centering and scaling fitted on training rows.

    Dimensions with (numerically) zero variance are mapped to 0 for any
    input, so they carry no information into the model.
    """

    mean: np.ndarray
    inv_scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # Relative threshold: identical values can leave a tiny nonzero std
        # through rounding in the mean.
        zero = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, std))
        return cls(mean=mean, inv_scale=inv)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) * self.inv_scale


def logistic_loss_grad(beta: np.ndarray, X1: np.ndarray, y: np.ndarray, C: float):
    """Penalized negative log-likelihood and its gradient.

    ``X1`` is the design with the intercept column last and ``beta[-1]`` the
    intercept; the penalty ``||beta[:-1]||^2 / (2C)`` leaves the intercept
    unpenalized. ``y`` holds 0/1 targets.
    """
    s = X1 @ beta
    value = float(np.sum(np.logaddexp(0.0, s) - y * s))
    value += float(beta[:-1] @ beta[:-1]) / (2.0 * C)
    grad = X1.T @ (expit(s) - y)
    grad[:-1] += beta[:-1] / C
    return value, grad


@dataclass(frozen=True)
class LogisticClassifier:
    """Binary logistic regression with posterior output.

    ``weights`` live on the standardized feature scale; ``posterior`` applies
    the stored standardizer before the linear score, so callers always pass
    raw features.
    """

    weights: np.ndarray
    intercept: float
    C: float
    standardizer: Standardizer
    converged: bool
    n_iter: int
    grad_norm: float

    def posterior(self, X) -> np.ndarray:
        """P(positive | x); elementwise in (0, 1)."""
        Xs = self.standardizer.transform(X)
        return expit(Xs @ self.weights + self.intercept)

    def predict(self, X) -> np.ndarray:
        """Boolean positive-class predictions at the 0.5 threshold."""
        return self.posterior(X) >= 0.5


def fit_logistic(
    X,
    y,
    *,
    C: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> LogisticClassifier:
    """Fit the L2-penalized logistic model by damped Newton iterations.

    Every accepted step decreases the penalized objective (backtracking line
    search); the fit is converged when the gradient 2-norm drops to ``tol``.
    A fit that exhausts ``max_iter`` is returned with ``converged=False``
    and logged, matching the contract that non-convergence is flagged but
    usable.

    Raises
    ------
    SingleClassError
        If the targets contain only one class.
    """
    X = _as_2d(X, "X")
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"row count mismatch: {X.shape[0]} x rows vs {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    n_pos = int(np.sum(y == 1.0))
    if n_pos == 0 or n_pos == y.size:
        raise SingleClassError(
            f"training rows contain a single class ({n_pos} of {y.size} positive)"
        )
    if C <= 0:
        raise ValueError("C must be positive")

    std = Standardizer.fit(X)
    Xs = std.transform(X)
    X1 = np.hstack([Xs, np.ones((X.shape[0], 1))])
    d = Xs.shape[1]
    beta = np.zeros(d + 1)

    value, grad = logistic_loss_grad(beta, X1, y, C)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        mu = expit(X1 @ beta)
        s_diag = np.maximum(mu * (1.0 - mu), 1e-10)
        hess = X1.T @ (s_diag[:, None] * X1)
        hess[np.arange(d), np.arange(d)] += 1.0 / C
        step = np.linalg.solve(hess, grad)
        descent = float(grad @ step)
        t = 1.0
        while True:
            cand = beta - t * step
            cand_value, cand_grad = logistic_loss_grad(cand, X1, y, C)
            if cand_value <= value - 1e-4 * t * descent or t <= 2.0**-30:
                break
            t *= 0.5
        beta = cand
        value, grad = cand_value, cand_grad
        gnorm = float(np.linalg.norm(grad))

    converged = gnorm <= tol
    if not converged:
        logger.warning(
            "logistic fit did not converge: grad norm %.3g after %d iterations", gnorm, it
        )
    return LogisticClassifier(
        weights=beta[:-1].copy(),
        intercept=float(beta[-1]),
        C=C,
        standardizer=std,
        converged=converged,
        n_iter=it,
        grad_norm=gnorm,
    )


@dataclass(frozen=True)
class RfeResult:
    """Outcome of recursive feature elimination over classification features."""

    ranking: tuple[str, ...]  # column names, first eliminated (weakest) first
    optimal_count: int
    cv_f1: dict[int, float] = field(repr=False)  # surviving-set size -> mean CV F1


def rfe_select(
    dataset: Dataset,
    k: int = 5,
    seed: int = 0,
    step: int = 1,
    *,
    C: float = 1.0,
) -> RfeResult:
    """Rank classification features by iterative elimination.

    Each round scores the surviving feature set by stratified k-fold
    cross-validated F1, then drops the ``step`` features whose standardized
    logistic coefficients are smallest in magnitude. ``optimal_count`` is
    the surviving-set size with the best mean CV F1, preferring the smaller
    size on ties.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    cols = list(dataset.manifest.classification)
    ids = dataset.ids
    X_full = dataset.x_matrix(ids)
    y01 = dataset.y01(ids).astype(float)
    plan = make_splits(dataset, repeats=1, k=k, seed=seed)
    row_of = {i: r for r, i in enumerate(ids)}
    folds = [
        (
            np.array([row_of[i] for i in train], dtype=int),
            np.array([row_of[i] for i in test], dtype=int),
        )
        for (train, test) in (plan.assignments[(0, f)] for f in range(k))
    ]

    surviving = list(range(len(cols)))
    eliminated: list[int] = []
    cv_f1: dict[int, float] = {}
    while True:
        sub = X_full[:, surviving]
        scores = []
        for train_rows, test_rows in folds:
            clf = fit_logistic(sub[train_rows], y01[train_rows], C=C)
            pred = clf.predict(sub[test_rows])
            scores.append(f1_score(y01[test_rows] == 1.0, pred, positive=True))
        cv_f1[len(surviving)] = float(np.mean(scores))
        if len(surviving) == 1:
            break
        clf = fit_logistic(sub, y01, C=C)
        order = np.argsort(np.abs(clf.weights), kind="stable")
        n_drop = min(step, len(surviving) - 1)
        drop_local = sorted(order[:n_drop], key=lambda j: (abs(clf.weights[j]), j))
        eliminated.extend(surviving[j] for j in drop_local)
        drop_set = set(drop_local)
        surviving = [s for j, s in enumerate(surviving) if j not in drop_set]

    ranking_idx = eliminated + surviving
    best = max(cv_f1.values())
    optimal = min(size for size, v in cv_f1.items() if v == best)
    return RfeResult(
        ranking=tuple(cols[j] for j in ranking_idx),
        optimal_count=optimal,
        cv_f1=cv_f1,
    )
