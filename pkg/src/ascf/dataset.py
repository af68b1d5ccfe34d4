"""Data model: feature manifests, CSV ingestion, stratified splits, and the
acquired/candidate pool state that selection strategies drive.

A dataset separates two feature roles. Selection features (``z``) are cheap
and known for every instance up front; classification features (``x``) are
expensive and stay concealed in ``x_store`` until an instance is acquired.
Nothing outside :func:`acquire` should ever read ``x_store`` for an
unacquired instance.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AcquisitionError,
    DataError,
    LabelError,
    ManifestError,
    StratificationError,
)
from .seeding import rng_from

logger = logging.getLogger(__name__)

# Cell contents treated as a missing value during ingestion.
MISSING_TOKENS = frozenset({"", "?", "na", "n/a", "nan", "null", "none"})

_MANIFEST_REQUIRED = ("selection", "classification", "label")
_MANIFEST_OPTIONAL = ("positive_label", "id")


@dataclass(frozen=True)
class FeatureManifest:
    """Declares which columns play which role in a data file."""

    selection: tuple[str, ...]
    classification: tuple[str, ...]
    label: str
    positive_label: str | None = None
    id_column: str | None = None

    def __post_init__(self):
        if not self.selection:
            raise ManifestError("manifest needs at least one selection column")
        if not self.classification:
            raise ManifestError("manifest needs at least one classification column")
        if not self.label:
            raise ManifestError("manifest needs a label column")
        groups = {
            "selection": set(self.selection),
            "classification": set(self.classification),
            "label": {self.label},
        }
        if self.id_column is not None:
            groups["id"] = {self.id_column}
        if len(set(self.selection)) != len(self.selection):
            raise ManifestError("duplicate selection columns")
        if len(set(self.classification)) != len(self.classification):
            raise ManifestError("duplicate classification columns")
        names = list(groups)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                overlap = groups[a] & groups[b]
                if overlap:
                    raise ManifestError(
                        f"columns {sorted(overlap)} appear in both {a!r} and {b!r} roles"
                    )

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureManifest":
        for key in _MANIFEST_REQUIRED:
            if key not in d:
                raise ManifestError(f"manifest missing required key: {key!r}")
        unknown = set(d) - set(_MANIFEST_REQUIRED) - set(_MANIFEST_OPTIONAL)
        if unknown:
            raise ManifestError(f"manifest has unknown keys: {sorted(unknown)}")
        sel = d["selection"]
        cls_cols = d["classification"]
        if not isinstance(sel, (list, tuple)) or not isinstance(cls_cols, (list, tuple)):
            raise ManifestError("'selection' and 'classification' must be lists of column names")
        pos = d.get("positive_label")
        return cls(
            selection=tuple(str(c) for c in sel),
            classification=tuple(str(c) for c in cls_cols),
            label=str(d["label"]),
            positive_label=None if pos is None else str(pos),
            id_column=None if d.get("id") is None else str(d["id"]),
        )

    @classmethod
    def from_json_file(cls, path) -> "FeatureManifest":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise ManifestError(f"manifest file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {path}: {exc}") from None
        if not isinstance(payload, dict):
            raise ManifestError("manifest JSON must be an object")
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        d = {
            "selection": list(self.selection),
            "classification": list(self.classification),
            "label": self.label,
        }
        if self.positive_label is not None:
            d["positive_label"] = self.positive_label
        if self.id_column is not None:
            d["id"] = self.id_column
        return d


@dataclass(frozen=True)
class Instance:
    """One row: id, cheap selection vector, binary label value."""

    id: str
    z: np.ndarray
    y: str


@dataclass(frozen=True)
class LoadReport:
    """What ingestion kept, dropped, and counted."""

    path: str
    rows_read: int
    rows_kept: int
    dropped: tuple[tuple[int, str], ...]  # (1-based data row, reason)
    label_counts: dict[str, int]

    def summary(self) -> str:
        n = len(self.dropped)
        noun = "row" if n == 1 else "rows"
        return f"{self.rows_kept} of {self.rows_read} rows kept, {n} {noun} dropped"


@dataclass(frozen=True)
class Dataset:
    """Immutable instance pool with concealed classification features.

    ``x_store`` maps every id to its ground-truth classification vector; it
    is the acquisition oracle, consulted only when an instance is acquired
    or when a held-out test fold is evaluated.
    """

    manifest: FeatureManifest
    instances: tuple[Instance, ...]
    x_store: dict[str, np.ndarray]
    M: int
    D: int
    positive_label: str
    negative_label: str
    load_report: LoadReport | None = None
    _index: dict[str, Instance] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {inst.id: inst for inst in self.instances})

    @classmethod
    def from_arrays(cls, manifest, ids, Z, y, X, load_report=None) -> "Dataset":
        """Build an in-memory dataset (tests, sessions) without a CSV file."""
        Z = np.asarray(Z, dtype=float)
        X = np.asarray(X, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if X.ndim == 1:
            X = X[:, None]
        ids = [str(i) for i in ids]
        labels = [str(v) for v in y]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate ids")
        if not (len(ids) == Z.shape[0] == X.shape[0] == len(labels)):
            raise DataError("ids, Z, y, X must agree in length")
        distinct = sorted(set(labels))
        if len(distinct) != 2:
            raise LabelError(f"expected exactly 2 distinct labels, got {distinct}")
        positive = manifest.positive_label
        if positive is None:
            positive = distinct[1]  # lexicographically larger value
        if positive not in distinct:
            raise LabelError(f"positive label {positive!r} not among labels {distinct}")
        negative = distinct[0] if distinct[1] == positive else distinct[1]
        insts = []
        store = {}
        for i, row_id in enumerate(ids):
            z = Z[i].copy()
            x = X[i].copy()
            z.setflags(write=False)
            x.setflags(write=False)
            insts.append(Instance(id=row_id, z=z, y=labels[i]))
            store[row_id] = x
        return cls(
            manifest=manifest,
            instances=tuple(insts),
            x_store=store,
            M=Z.shape[1],
            D=X.shape[1],
            positive_label=positive,
            negative_label=negative,
            load_report=load_report,
        )

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(inst.id for inst in self.instances)

    def instance(self, instance_id: str) -> Instance:
        try:
            return self._index[instance_id]
        except KeyError:
            raise AcquisitionError(f"unknown instance id: {instance_id!r}") from None

    def z_matrix(self, ids) -> np.ndarray:
        return np.array([self.instance(i).z for i in ids], dtype=float)

    def x_matrix(self, ids) -> np.ndarray:
        """Ground-truth classification vectors; reserve for acquisition and
        held-out evaluation."""
        return np.array([self.x_true(i) for i in ids], dtype=float)

    def x_true(self, instance_id: str) -> np.ndarray:
        self.instance(instance_id)
        return self.x_store[instance_id]

    def y_labels(self, ids) -> list[str]:
        return [self.instance(i).y for i in ids]

    def y01(self, ids) -> np.ndarray:
        """Boolean positive-class indicators."""
        return np.array([self.instance(i).y == self.positive_label for i in ids])

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for inst in self.instances:
            counts[inst.y] = counts.get(inst.y, 0) + 1
        return counts


def load_dataset(data_path, manifest: FeatureManifest, missing_policy: str = "reject") -> Dataset:
    """Ingest a CSV file under a manifest.

    The file must be UTF-8 with a header row and ``.`` decimal separators.
    Rows with a missing declared value are rejected (error) or dropped
    (counted in the load report) per ``missing_policy``. Any non-missing,
    non-numeric token in a feature column is a hard parse error.
    """
    if missing_policy not in ("reject", "drop"):
        raise ValueError(f"missing_policy must be 'reject' or 'drop', got {missing_policy!r}")
    path = Path(data_path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"data file is empty: {path}") from None
        header = [h.strip() for h in header]
        col_pos = {name: i for i, name in enumerate(header)}
        declared = list(manifest.selection) + list(manifest.classification) + [manifest.label]
        if manifest.id_column is not None:
            declared.append(manifest.id_column)
        missing_cols = [c for c in declared if c not in col_pos]
        if missing_cols:
            raise ManifestError(
                f"columns declared in the manifest are absent from {path.name}: {missing_cols}"
            )

        ids: list[str] = []
        Z_rows: list[list[float]] = []
        X_rows: list[list[float]] = []
        labels: list[str] = []
        dropped: list[tuple[int, str]] = []
        rows_read = 0
        for row_num, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue  # blank line
            rows_read += 1
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))

            missing_here: str | None = None
            for col in declared:
                if row[col_pos[col]].strip().lower() in MISSING_TOKENS:
                    missing_here = col
                    break
            if missing_here is not None:
                if missing_policy == "reject":
                    raise DataError(
                        f"row {row_num}: missing value in column {missing_here!r} "
                        "(missing_policy=reject)"
                    )
                dropped.append((row_num, f"missing value in column {missing_here!r}"))
                continue

            def parse(col: str) -> float:
                token = row[col_pos[col]].strip()
                try:
                    return float(token)
                except ValueError:
                    raise DataError(
                        f"row {row_num}: non-numeric value {token!r} in feature column {col!r}"
                    ) from None

            z = [parse(c) for c in manifest.selection]
            x = [parse(c) for c in manifest.classification]
            label = row[col_pos[manifest.label]].strip()
            row_id = (
                row[col_pos[manifest.id_column]].strip()
                if manifest.id_column is not None
                else str(row_num)
            )
            if not row_id:
                raise DataError(f"row {row_num}: empty id")
            ids.append(row_id)
            Z_rows.append(z)
            X_rows.append(x)
            labels.append(label)

    if not ids:
        raise DataError(f"no usable rows in {path}")
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DataError(f"duplicate id {dup!r} in column {manifest.id_column!r}")

    distinct = sorted(set(labels))
    if len(distinct) < 2:
        raise LabelError(f"need 2 distinct label values, found only {distinct}")
    if len(distinct) > 2:
        raise LabelError(
            f"need exactly 2 distinct label values, found {len(distinct)}: {distinct} "
            "(binarize the label column before ingestion)"
        )

    label_counts = {v: labels.count(v) for v in distinct}
    report = LoadReport(
        path=str(path),
        rows_read=rows_read,
        rows_kept=len(ids),
        dropped=tuple(dropped),
        label_counts=label_counts,
    )
    if dropped:
        logger.info("%s: %s", path.name, report.summary())
    return Dataset.from_arrays(
        manifest,
        ids,
        np.array(Z_rows, dtype=float),
        labels,
        np.array(X_rows, dtype=float),
        load_report=report,
    )


@dataclass(frozen=True)
class SplitPlan:
    """Stratified repeated k-fold assignments, deterministic in the seed."""

    repeats: int
    k: int
    seed: int
    assignments: dict[tuple[int, int], tuple[tuple[str, ...], tuple[str, ...]]]

    def runs(self) -> list[tuple[int, int]]:
        return sorted(self.assignments)

    def fingerprint(self) -> str:
        """Stable digest of the assignments, used to pair runs across processes."""
        import hashlib

        h = hashlib.blake2b(digest_size=16)
        for key in self.runs():
            train, test = self.assignments[key]
            h.update(f"{key[0]}:{key[1]}|{','.join(train)}|{','.join(test)}".encode())
        return h.hexdigest()


def make_splits(dataset: Dataset, repeats: int = 10, k: int = 5, seed: int = 0) -> SplitPlan:
    """Build ``repeats`` independent stratified k-fold partitions.

    Instances are shuffled within each class and dealt round-robin across
    folds, with each class block continuing where the previous one stopped.
    That keeps per-class fold counts within 1 of ``n_c / k`` and overall
    fold sizes within 1 of ``n / k``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    by_class: dict[str, list[str]] = {}
    for inst in dataset.instances:
        by_class.setdefault(inst.y, []).append(inst.id)
    for label, members in sorted(by_class.items()):
        if len(members) < k:
            raise StratificationError(
                f"class {label!r} has {len(members)} members, fewer than k={k}"
            )
    all_ids = set(dataset.ids)
    assignments = {}
    for r in range(repeats):
        rng = rng_from(seed, "split", r)
        dealt: list[str] = []
        for label in sorted(by_class):
            members = sorted(by_class[label])
            dealt.extend(np.array(members)[rng.permutation(len(members))])
        test_folds: list[list[str]] = [[] for _ in range(k)]
        for pos, instance_id in enumerate(dealt):
            test_folds[pos % k].append(instance_id)
        for f in range(k):
            test = tuple(sorted(test_folds[f]))
            train = tuple(sorted(all_ids - set(test)))
            assignments[(r, f)] = (train, test)
    return SplitPlan(repeats=repeats, k=k, seed=seed, assignments=assignments)


@dataclass(frozen=True)
class AcquisitionState:
    """Disjoint acquired/candidate pools over one training pool.

    ``acquired`` keeps acquisition order; ``revealed_x`` holds ground-truth
    classification vectors for acquired ids only. States are value objects:
    :func:`acquire` returns a new state and the old one should be discarded.
    """

    acquired: tuple[str, ...]
    candidates: frozenset[str]
    revealed_x: dict[str, np.ndarray]

    @classmethod
    def initial(cls, train_ids) -> "AcquisitionState":
        return cls(acquired=(), candidates=frozenset(train_ids), revealed_x={})

    @property
    def n_acquired(self) -> int:
        return len(self.acquired)

    def sorted_candidates(self) -> tuple[str, ...]:
        # frozenset iteration order depends on string hashing; always sort.
        return tuple(sorted(self.candidates))

    def training_arrays(self, dataset: Dataset):
        """(Z, X, y01) over acquired instances in canonical (sorted id) order.

        The canonical order makes every downstream fit a function of the
        acquired *set*, so two strategies that end with the same pool train
        bit-identical models regardless of acquisition order.
        """
        ids = sorted(self.acquired)
        Z = dataset.z_matrix(ids)
        X = np.array([self.revealed_x[i] for i in ids], dtype=float)
        y01 = dataset.y01(ids)
        return Z, X, y01


def acquire(state: AcquisitionState, instance_id: str, dataset: Dataset) -> AcquisitionState:
    """Move one candidate into the acquired pool, revealing its true x."""
    if instance_id not in state.candidates:
        if instance_id in state.acquired:
            raise AcquisitionError(f"instance {instance_id!r} was already acquired")
        raise AcquisitionError(f"instance {instance_id!r} is not a candidate")
    revealed = dict(state.revealed_x)
    revealed[instance_id] = dataset.x_true(instance_id)
    return AcquisitionState(
        acquired=state.acquired + (instance_id,),
        candidates=state.candidates - {instance_id},
        revealed_x=revealed,
    )
