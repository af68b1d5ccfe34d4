"""Benchmark protocol: simulated acquisition runs over repeated stratified
cross-validation, learning-curve aggregation with percentile bands, and
per-step significance testing against the random baseline.

A run simulates deployment on one (train, test) split: all classification
features of the training pool start concealed, the strategy acquires them
one instance at a time, and after every acquisition the primary classifier
is refitted on the acquired rows and scored by F1 on the held-out fold's
true features and labels. Strategies sharing a run id also share the
cold-start draw, so their curves stay paired step by step.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import AcquisitionState, Dataset, SplitPlan, acquire, make_splits
from .errors import ColdStartError, PairingError, RunError
from .learners import fit_logistic
from .seeding import mix_seed, rng_from
from .stats import f1_score, percentile_band, wilcoxon_signed_rank
from .strategies import StrategyConfig, select_next

logger = logging.getLogger(__name__)

PERCENTILE_METHOD = "linear"

COLD_STARTS = ("stratified_pair", "random_n")


@dataclass(frozen=True)
class ProtocolConfig:
    """Resolved experimental protocol."""

    repeats: int = 10
    k: int = 5
    alpha: float = 0.1
    seed: int = 0
    cold_start: str = "stratified_pair"
    cold_start_n: int = 2
    eval_every: int = 1
    max_steps: int | None = None
    classifier_c: float = 1.0
    classifier_tol: float = 1e-6
    classifier_max_iter: int = 200

    def __post_init__(self):
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must be in (0, 0.5], got {self.alpha}")
        if self.repeats < 1 or self.k < 2:
            raise ValueError("need repeats >= 1 and k >= 2")
        if self.cold_start not in COLD_STARTS:
            raise ValueError(f"unknown cold_start {self.cold_start!r}")
        if self.cold_start == "random_n" and self.cold_start_n < 2:
            raise ValueError("random_n cold start needs n >= 2")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.max_steps is not None and self.max_steps < self.cold_size:
            raise ValueError("max_steps must cover the cold start")

    @property
    def cold_size(self) -> int:
        return 2 if self.cold_start == "stratified_pair" else self.cold_start_n

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "k": self.k,
            "alpha": self.alpha,
            "seed": self.seed,
            "cold_start": self.cold_start,
            "cold_start_n": self.cold_start_n,
            "eval_every": self.eval_every,
            "max_steps": self.max_steps,
            "classifier_c": self.classifier_c,
            "classifier_tol": self.classifier_tol,
            "classifier_max_iter": self.classifier_max_iter,
        }


@dataclass(frozen=True)
class LearningCurve:
    """Per-step test F1 of one strategy on one (repeat, fold) run."""

    strategy: str
    repeat: int
    fold: int
    f1_per_step: tuple[float, ...]
    acquisition_order: tuple[str, ...]

    def __post_init__(self):
        if len(self.f1_per_step) != len(self.acquisition_order):
            raise ValueError("one F1 entry per acquisition is required")
        if any(not 0.0 <= v <= 1.0 for v in self.f1_per_step):
            raise ValueError("F1 values must lie in [0, 1]")

    @property
    def run_key(self) -> tuple[int, int]:
        return (self.repeat, self.fold)


@dataclass(frozen=True)
class StepStats:
    """One report row: aggregate F1 at one step for one strategy."""

    strategy: str
    step: int
    mean: float
    p10: float
    p90: float
    p_greater: float
    p_less: float
    flag: str  # better | worse | none


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[StepStats, ...]
    alpha: float
    baseline: str
    percentile_method: str = PERCENTILE_METHOD


def _cold_start_ids(dataset: Dataset, train_ids, protocol: ProtocolConfig, rng) -> list[str]:
    train = sorted(train_ids)
    if protocol.cold_start == "stratified_pair":
        picked = []
        by_label: dict[str, list[str]] = {}
        for i in train:
            by_label.setdefault(dataset.instance(i).y, []).append(i)
        for label in sorted(by_label):
            members = by_label[label]
            picked.append(members[int(rng.integers(len(members)))])
        return picked
    n = protocol.cold_start_n
    if n > len(train):
        raise ColdStartError(f"cold start of {n} exceeds the training pool ({len(train)})")
    for _ in range(1000):
        perm = rng.permutation(len(train))
        picked = [train[int(j)] for j in perm[:n]]
        labels = {dataset.instance(i).y for i in picked}
        if len(labels) >= 2:
            return picked
    raise ColdStartError("could not draw a cold start containing both classes")


def run_simulation(
    dataset: Dataset,
    split: tuple[tuple[str, ...], tuple[str, ...]],
    strategy: StrategyConfig,
    protocol: ProtocolConfig,
    run_seed: int,
    repeat: int = 0,
    fold: int = 0,
) -> LearningCurve:
    """Simulate one acquisition run and return its learning curve.

    The cold-start draw depends on ``run_seed`` only, so every strategy
    executed with the same ``run_seed`` starts from the same seed instances.
    The curve records one F1 entry per acquisition; cold-start entries are
    backfilled with the F1 obtained right after the cold start completes
    (the first point where a classifier exists).
    """
    train_ids, test_ids = split
    if set(train_ids) & set(test_ids):
        raise ValueError("train and test ids overlap")
    X_test = dataset.x_matrix(test_ids)
    y_test = dataset.y01(test_ids)

    state = AcquisitionState.initial(train_ids)
    cold_rng = rng_from(run_seed, "cold")
    strategy_rng = rng_from(run_seed, "strategy", strategy.kind)

    def fit_and_eval(current: AcquisitionState) -> float:
        _, X_acq, y01_acq = current.training_arrays(dataset)
        clf = fit_logistic(
            X_acq,
            y01_acq.astype(float),
            C=protocol.classifier_c,
            tol=protocol.classifier_tol,
            max_iter=protocol.classifier_max_iter,
        )
        pred = clf.predict(X_test)
        return f1_score(y_test, pred, positive=True)

    order: list[str] = []
    f1s: list[float] = []
    cold_ids = _cold_start_ids(dataset, train_ids, protocol, cold_rng)
    for i in cold_ids:
        state = acquire(state, i, dataset)
        order.append(i)
    cold_f1 = fit_and_eval(state)
    f1s.extend([cold_f1] * len(cold_ids))

    last_f1 = cold_f1
    step = len(order)
    while state.candidates and (protocol.max_steps is None or step < protocol.max_steps):
        try:
            picked = select_next(strategy, state, dataset, labels_visible=True, rng=strategy_rng)
            state = acquire(state, picked, dataset)
            order.append(picked)
            step += 1
            is_last = not state.candidates or (
                protocol.max_steps is not None and step >= protocol.max_steps
            )
            if (step - len(cold_ids)) % protocol.eval_every == 0 or is_last:
                last_f1 = fit_and_eval(state)
            f1s.append(last_f1)
        except Exception as exc:
            raise RunError(
                f"run (repeat={repeat}, fold={fold}, strategy={strategy.label}) aborted "
                f"at step {step + 1}: {exc}"
            ) from exc

    return LearningCurve(
        strategy=strategy.label,
        repeat=repeat,
        fold=fold,
        f1_per_step=tuple(f1s),
        acquisition_order=tuple(order),
    )


def aggregate_and_compare(
    curves_by_strategy: dict[str, list[LearningCurve]],
    baseline: str = "random",
    alpha: float = 0.1,
) -> ComparisonReport:
    """Aggregate paired learning curves and test each strategy against the baseline.

    Per step: mean and 10th/90th percentiles over the runs reaching that
    step, plus two one-sided signed-rank tests on the paired F1 differences
    (strategy minus baseline). A step is flagged ``better`` when the
    'greater' test is significant at ``alpha``, ``worse`` when the 'less'
    test is.
    """
    if baseline not in curves_by_strategy:
        raise PairingError(f"baseline strategy {baseline!r} has no runs")
    base_runs = {c.run_key: c for c in curves_by_strategy[baseline]}
    if len(base_runs) != len(curves_by_strategy[baseline]):
        raise PairingError("duplicate (repeat, fold) runs in the baseline")
    rows: list[StepStats] = []
    for name in curves_by_strategy:
        runs = {c.run_key: c for c in curves_by_strategy[name]}
        if len(runs) != len(curves_by_strategy[name]):
            raise PairingError(f"duplicate (repeat, fold) runs for strategy {name!r}")
        if set(runs) != set(base_runs):
            raise PairingError(
                f"strategy {name!r} covers runs {sorted(runs)} but the baseline covers "
                f"{sorted(base_runs)}; significance tests must be paired"
            )
        for key, curve in runs.items():
            if len(curve.f1_per_step) != len(base_runs[key].f1_per_step):
                raise PairingError(
                    f"run {key} has {len(curve.f1_per_step)} steps for {name!r} but "
                    f"{len(base_runs[key].f1_per_step)} for the baseline"
                )
        keys = sorted(runs)
        max_len = max(len(runs[k].f1_per_step) for k in keys)
        for step in range(1, max_len + 1):
            active = [k for k in keys if len(runs[k].f1_per_step) >= step]
            vals = np.array([runs[k].f1_per_step[step - 1] for k in active])
            base_vals = np.array([base_runs[k].f1_per_step[step - 1] for k in active])
            p10, p90 = percentile_band(vals)
            diffs = vals - base_vals
            p_greater = wilcoxon_signed_rank(diffs, "greater")
            p_less = wilcoxon_signed_rank(diffs, "less")
            if p_greater <= alpha:
                flag = "better"
            elif p_less <= alpha:
                flag = "worse"
            else:
                flag = "none"
            rows.append(
                StepStats(
                    strategy=name,
                    step=step,
                    mean=float(vals.mean()),
                    p10=p10,
                    p90=p90,
                    p_greater=p_greater,
                    p_less=p_less,
                    flag=flag,
                )
            )
    return ComparisonReport(rows=tuple(rows), alpha=alpha, baseline=baseline)


@dataclass(frozen=True)
class BenchmarkResult:
    curves_by_strategy: dict[str, list[LearningCurve]]
    report: ComparisonReport
    metadata: dict


def run_benchmark(
    dataset: Dataset,
    strategies: list[StrategyConfig],
    protocol: ProtocolConfig,
    data_path: str | None = None,
) -> BenchmarkResult:
    """Run every strategy (the random baseline is always included) over the
    full repeated-CV protocol and aggregate the comparison."""
    configs = list(strategies)
    if not any(c.kind == "random" for c in configs):
        configs.insert(0, StrategyConfig(kind="random"))
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate strategies requested: {labels}")

    plan = make_splits(dataset, repeats=protocol.repeats, k=protocol.k,
                       seed=mix_seed(protocol.seed, "splits"))
    curves: dict[str, list[LearningCurve]] = {c.label: [] for c in configs}
    for repeat, fold in plan.runs():
        split = plan.assignments[(repeat, fold)]
        run_seed = mix_seed(protocol.seed, "run", repeat, fold)
        pool_counts: dict[str, int] = {}
        for i in split[0]:
            y = dataset.instance(i).y
            pool_counts[y] = pool_counts.get(y, 0) + 1
        logger.debug("run (%d, %d): candidate pool label counts %s", repeat, fold, pool_counts)
        for config in configs:
            curve = run_simulation(
                dataset, split, config, protocol, run_seed, repeat=repeat, fold=fold
            )
            curves[config.label].append(curve)

    report = aggregate_and_compare(curves, baseline="random", alpha=protocol.alpha)
    metadata = {
        "tool": {"name": "ascf", "version": __version__},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "data": {
            "path": data_path,
            "n_instances": len(dataset.instances),
            "M": dataset.M,
            "D": dataset.D,
            "label_counts": dataset.label_counts(),
            "positive_label": dataset.positive_label,
        },
        "manifest": dataset.manifest.to_dict(),
        "protocol": protocol.to_dict(),
        "strategies": [c.to_dict() for c in configs],
        "strategy_order": labels,
        "split_fingerprint": plan.fingerprint(),
        "decisions": {
            "percentile_method": PERCENTILE_METHOD,
            "stratified_folds": True,
            "variance_estimator": "population (divide by B)",
            "significance": "two one-sided signed-rank tests vs random, "
                            "exact for <= 25 nonzero diffs, normal approximation above",
            "training_row_order": "sorted by id (permutation invariant refits)",
        },
    }
    return BenchmarkResult(curves_by_strategy=curves, report=report, metadata=metadata)


# ---------------------------------------------------------------------------
# artifact files


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curves_csv(path, curves_by_strategy: dict[str, list[LearningCurve]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "repeat", "fold", "step", "f1", "acquired_id"])
    for name, curves in curves_by_strategy.items():
        for curve in sorted(curves, key=lambda c: c.run_key):
            for i, (f1, acquired_id) in enumerate(
                zip(curve.f1_per_step, curve.acquisition_order), start=1
            ):
                writer.writerow([name, curve.repeat, curve.fold, i, _fmt(f1), acquired_id])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_curves_csv(path) -> dict[str, list[LearningCurve]]:
    """Rebuild curves from curves.csv; float round-trip is exact via repr."""
    grouped: dict[tuple[str, int, int], list[tuple[int, float, str]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"strategy", "repeat", "fold", "step", "f1", "acquired_id"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise PairingError(f"{path}: not a curves.csv file (columns {reader.fieldnames})")
        for row in reader:
            name = row["strategy"]
            if name not in order:
                order.append(name)
            key = (name, int(row["repeat"]), int(row["fold"]))
            grouped.setdefault(key, []).append(
                (int(row["step"]), float(row["f1"]), row["acquired_id"])
            )
    out: dict[str, list[LearningCurve]] = {name: [] for name in order}
    for (name, repeat, fold), entries in grouped.items():
        entries.sort()
        if [e[0] for e in entries] != list(range(1, len(entries) + 1)):
            raise PairingError(
                f"{path}: steps for ({name}, {repeat}, {fold}) are not consecutive from 1"
            )
        out[name].append(
            LearningCurve(
                strategy=name,
                repeat=repeat,
                fold=fold,
                f1_per_step=tuple(e[1] for e in entries),
                acquisition_order=tuple(e[2] for e in entries),
            )
        )
    for name in out:
        out[name].sort(key=lambda c: c.run_key)
    return out


def write_report_csv(path, report: ComparisonReport) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "step", "mean", "p10", "p90", "p_greater", "p_less", "flag"])
    for row in report.rows:
        writer.writerow(
            [
                row.strategy,
                row.step,
                _fmt(row.mean),
                _fmt(row.p10),
                _fmt(row.p90),
                _fmt(row.p_greater),
                _fmt(row.p_less),
                row.flag,
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_metadata_json(path, metadata: dict) -> None:
    Path(path).write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_artifacts(out_dir, result: BenchmarkResult) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "curves": out / "curves.csv",
        "report": out / "report.csv",
        "metadata": out / "metadata.json",
    }
    write_curves_csv(paths["curves"], result.curves_by_strategy)
    write_report_csv(paths["report"], result.report)
    write_metadata_json(paths["metadata"], result.metadata)
    return paths


def merge_curves(
    collections: list[dict[str, list[LearningCurve]]],
) -> dict[str, list[LearningCurve]]:
    """Merge curve collections from several runs into one paired collection.

    Identical duplicate runs (same strategy, repeat, fold, and values) are
    deduplicated; conflicting duplicates raise a pairing error.
    """
    merged: dict[tuple[str, int, int], LearningCurve] = {}
    order: list[str] = []
    for coll in collections:
        for name, curves in coll.items():
            if name not in order:
                order.append(name)
            for curve in curves:
                key = (name, curve.repeat, curve.fold)
                if key in merged:
                    existing = merged[key]
                    if (
                        existing.f1_per_step != curve.f1_per_step
                        or existing.acquisition_order != curve.acquisition_order
                    ):
                        raise PairingError(
                            f"conflicting duplicate run {key}: the collections do not share "
                            "splits and seeds"
                        )
                else:
                    merged[key] = curve
    out: dict[str, list[LearningCurve]] = {name: [] for name in order}
    for (name, _, _), curve in merged.items():
        out[name].append(curve)
    for name in out:
        out[name].sort(key=lambda c: c.run_key)
    return out
