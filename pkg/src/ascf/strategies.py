"""Selection policies: random baseline, U-ASCF, and S-ASCF.

All policies answer the same question: which candidate's expensive
classification features should be acquired next?

* U-ASCF (unsupervised) scores a candidate by the average per-dimension
  variance of its imputations across a bootstrap ensemble of linear
  regressors fitted on the acquired rows. High disagreement means high
  imputation uncertainty, hence high utility.
* S-ASCF (supervised) imputes the candidate's classification vector with a
  single regressor, reads the primary classifier's posterior there, and
  scores the misclassification probability p through
  ``p (1 - p) / ((-2 b + 1) p + b^2)`` with asymmetry
  ``b = 0.5 + 1 / (2 |A|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import AcquisitionState, Dataset
from .errors import ColdStartError, ExhaustedError, StrategyError
from .learners import fit_bootstrap_ensemble, fit_linear, fit_logistic

KINDS = ("random", "u_ascf", "s_ascf")
VARIANCE_MODES = ("raw", "standardized")
P_MODES = ("true_label", "predicted_class")
TIE_BREAKS = ("lowest_id", "seeded_random")

# Minimum acquired instances before the model-based strategies can run: the
# bootstrap needs two rows, the classifier needs one instance per class.
COLD_START_MIN = 2

_DENOM_FLOOR = 1e-12
_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class StrategyConfig:
    """Which policy to run and its knobs."""

    kind: str
    B: int = 10
    variance_mode: str = "raw"
    p_mode: str = "true_label"
    tie_break: str = "lowest_id"
    classifier_c: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"unknown variance_mode {self.variance_mode!r}")
        if self.p_mode not in P_MODES:
            raise ValueError(f"unknown p_mode {self.p_mode!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.kind == "u_ascf" and self.B < 2:
            raise ValueError("u_ascf needs an ensemble of at least 2 members")

    @property
    def label(self) -> str:
        """Display name used in CLI flags and report files."""
        return self.kind.replace("_", "-")

    @classmethod
    def parse_kind(cls, name: str) -> str:
        kind = name.strip().lower().replace("-", "_")
        if kind not in KINDS:
            raise ValueError(f"unknown strategy {name!r}; expected one of "
                             f"{[k.replace('_', '-') for k in KINDS]}")
        return kind

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "B": self.B,
            "variance_mode": self.variance_mode,
            "p_mode": self.p_mode,
            "tie_break": self.tie_break,
            "classifier_c": self.classifier_c,
        }


@dataclass(frozen=True)
class UtilityScore:
    id: str
    value: float


def u_ascf_utility(ensemble, z, variance_mode: str = "raw") -> float:
    """Average per-dimension variance of the ensemble's imputations at ``z``.

    The variance is the population variance over the ensemble members
    (divide by B). ``variance_mode="standardized"`` rescales each dimension
    by the sample variance of that dimension in the rows the ensemble was
    fitted on, floored at 1e-12, making dimensions with different units
    commensurable.
    """
    if ensemble.size < 2:
        raise ValueError("utility needs an ensemble with at least 2 members")
    preds = np.stack([m.predict(np.asarray(z, dtype=float)) for m in ensemble.members])
    var = preds.var(axis=0)
    if variance_mode == "standardized":
        var = var / np.maximum(ensemble.train_x_var, _VAR_FLOOR)
    elif variance_mode != "raw":
        raise ValueError(f"unknown variance_mode {variance_mode!r}")
    return float(var.mean())


def asymmetry_b(n_acquired: int) -> float:
    """Asymmetry parameter ``0.5 + 1 / (2 n)``; tends to 0.5 as n grows."""
    if n_acquired < 1:
        raise ValueError("asymmetry parameter needs at least one acquired instance")
    return 0.5 + 1.0 / (2.0 * n_acquired)


def s_ascf_utility(p: float, b: float) -> float:
    """Misclassification-probability utility ``p (1 - p) / ((-2b + 1) p + b^2)``.

    The denominator is positive for every p in [0, 1] once b < 1; at the
    single degenerate corner (b = 1, p -> 1) the expression reduces to p,
    which is returned as the analytic limit.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"misclassification probability must be in [0, 1], got {p}")
    if not 0.5 - 1e-12 <= b <= 1.0 + 1e-12:
        raise ValueError(f"asymmetry parameter must be in [0.5, 1], got {b}")
    denom = (-2.0 * b + 1.0) * p + b * b
    if denom < _DENOM_FLOOR:
        return p
    return p * (1.0 - p) / denom


def u_scores(Z_acq, X_acq, Z_cand, *, B: int, seed: int, variance_mode: str = "raw") -> np.ndarray:
    """Imputation-variance utilities for a batch of candidates.

    Fits the bootstrap ensemble on the acquired rows, then evaluates the
    same statistic as :func:`u_ascf_utility` for every candidate row.
    """
    Z_acq = np.asarray(Z_acq, dtype=float)
    if Z_acq.shape[0] < COLD_START_MIN:
        raise ColdStartError(
            f"u-ascf needs at least {COLD_START_MIN} acquired instances, have {Z_acq.shape[0]}"
        )
    ensemble = fit_bootstrap_ensemble(Z_acq, X_acq, B=B, seed=seed)
    preds = ensemble.predict_all(np.asarray(Z_cand, dtype=float))  # (B, n, D)
    var = preds.var(axis=0)
    if variance_mode == "standardized":
        var = var / np.maximum(ensemble.train_x_var, _VAR_FLOOR)
    return var.mean(axis=1)


def s_scores(
    Z_acq,
    X_acq,
    y01_acq,
    Z_cand,
    y01_cand,
    *,
    p_mode: str = "true_label",
    classifier_c: float = 1.0,
) -> np.ndarray:
    """Misclassification-probability utilities for a batch of candidates.

    ``y01_cand`` may be None only in ``predicted_class`` mode, which reads
    the posterior of the most likely class instead of the known label.
    The asymmetry parameter is computed from the acquired count *before*
    the upcoming acquisition.
    """
    Z_acq = np.asarray(Z_acq, dtype=float)
    y01_acq = np.asarray(y01_acq, dtype=bool)
    n = Z_acq.shape[0]
    if n < COLD_START_MIN:
        raise ColdStartError(
            f"s-ascf needs at least {COLD_START_MIN} acquired instances, have {n}"
        )
    if y01_acq.all() or not y01_acq.any():
        raise ColdStartError("s-ascf needs both classes among the acquired instances")
    if p_mode == "true_label":
        if y01_cand is None:
            raise StrategyError("p_mode='true_label' needs candidate labels")
        y01_cand = np.asarray(y01_cand, dtype=bool)
    elif p_mode != "predicted_class":
        raise ValueError(f"unknown p_mode {p_mode!r}")

    regressor = fit_linear(Z_acq, X_acq)
    classifier = fit_logistic(X_acq, y01_acq.astype(float), C=classifier_c)
    x_hat = regressor.predict(np.asarray(Z_cand, dtype=float))
    post_pos = classifier.posterior(x_hat)
    if p_mode == "true_label":
        p = np.where(y01_cand, 1.0 - post_pos, post_pos)
    else:
        p = 1.0 - np.maximum(post_pos, 1.0 - post_pos)
    b = asymmetry_b(n)
    return np.array([s_ascf_utility(float(pi), b) for pi in p])


def score_candidates(
    config: StrategyConfig,
    state: AcquisitionState,
    dataset: Dataset,
    *,
    labels_visible: bool = True,
    rng: np.random.Generator | None = None,
) -> list[UtilityScore]:
    """Utility of every candidate, in sorted-id order.

    Only meaningful for the model-based strategies; the random baseline has
    no scores.
    """
    if config.kind == "random":
        raise ValueError("the random baseline does not score candidates")
    cand = state.sorted_candidates()
    if not cand:
        raise ExhaustedError("no candidates left to score")
    Z_acq, X_acq, y01_acq = state.training_arrays(dataset)
    Z_cand = dataset.z_matrix(cand)
    if config.kind == "u_ascf":
        if rng is None:
            raise ValueError("u_ascf scoring needs an rng for bootstrap resampling")
        seed = int(rng.integers(0, 2**63))
        values = u_scores(
            Z_acq, X_acq, Z_cand, B=config.B, seed=seed, variance_mode=config.variance_mode
        )
    else:
        if not labels_visible:
            raise StrategyError("s-ascf requires labels to be visible during selection")
        values = s_scores(
            Z_acq,
            X_acq,
            y01_acq,
            Z_cand,
            dataset.y01(cand),
            p_mode=config.p_mode,
            classifier_c=config.classifier_c,
        )
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise StrategyError("non-finite candidate utilities; acquired data is degenerate")
    values = np.maximum(values, 0.0)  # clip float noise, utilities are nonnegative
    return [UtilityScore(i, float(v)) for i, v in zip(cand, values)]


def _argmax_scores(
    scores: list[UtilityScore], tie_break: str, rng: np.random.Generator | None
) -> str:
    best = max(s.value for s in scores)
    tied = [s.id for s in scores if s.value == best]  # scores arrive in sorted-id order
    if len(tied) == 1 or tie_break == "lowest_id":
        return tied[0]
    if rng is None:
        raise ValueError("seeded_random tie-break needs an rng")
    return tied[int(rng.integers(len(tied)))]


def select_next(
    config: StrategyConfig,
    state: AcquisitionState,
    dataset: Dataset,
    labels_visible: bool = True,
    rng: np.random.Generator | None = None,
) -> str:
    """Pick the id of the next instance to acquire.

    Random draws uniformly from the candidate pool; the model-based
    strategies return the utility argmax, resolving exact ties per
    ``config.tie_break``.
    """
    if not state.candidates:
        raise ExhaustedError("candidate pool is exhausted")
    if config.kind == "random":
        if rng is None:
            raise ValueError("the random baseline needs an rng")
        cand = state.sorted_candidates()
        return cand[int(rng.integers(len(cand)))]
    scores = score_candidates(
        config, state, dataset, labels_visible=labels_visible, rng=rng
    )
    return _argmax_scores(scores, config.tie_break, rng)
