"""Active selection of classification features.

Given instances whose cheap selection features are always available but
whose informative classification features are expensive to measure, this
package decides which instances to acquire next, benchmarks the selection
strategies against random acquisition, and operates real staged-acquisition
campaigns from the command line.
"""

__version__ = "0.1.0"

from .dataset import (
    AcquisitionState,
    Dataset,
    FeatureManifest,
    SplitPlan,
    acquire,
    load_dataset,
    make_splits,
)
from .harness import (
    ComparisonReport,
    LearningCurve,
    ProtocolConfig,
    aggregate_and_compare,
    run_benchmark,
    run_simulation,
)
from .learners import (
    BootstrapEnsemble,
    LinearModel,
    LogisticClassifier,
    fit_bootstrap_ensemble,
    fit_linear,
    fit_logistic,
    rfe_select,
)
from .stats import f1_score, wilcoxon_signed_rank
from .strategies import (
    StrategyConfig,
    UtilityScore,
    asymmetry_b,
    s_ascf_utility,
    score_candidates,
    select_next,
    u_ascf_utility,
)

__all__ = [
    "__version__",
    "AcquisitionState",
    "BootstrapEnsemble",
    "ComparisonReport",
    "Dataset",
    "FeatureManifest",
    "LearningCurve",
    "LinearModel",
    "LogisticClassifier",
    "ProtocolConfig",
    "SplitPlan",
    "StrategyConfig",
    "UtilityScore",
    "acquire",
    "aggregate_and_compare",
    "asymmetry_b",
    "f1_score",
    "fit_bootstrap_ensemble",
    "fit_linear",
    "fit_logistic",
    "load_dataset",
    "make_splits",
    "rfe_select",
    "run_benchmark",
    "run_simulation",
    "s_ascf_utility",
    "score_candidates",
    "select_next",
    "u_ascf_utility",
    "wilcoxon_signed_rank",
]
