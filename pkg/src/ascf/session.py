"""Persistent state for a real staged-acquisition campaign.

A session tracks a registry of candidates (cheap selection features, and
labels when the study has them), the instances whose expensive features
have already been measured, and the suggestion history. State lives in a
single JSON file written atomically (temp file + rename), so a crash at any
point leaves either the previous or the new state on disk, never a torn
one. A lock file guards against two processes driving the same session.
"""

from __future__ import annotations

import csv
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dataset import MISSING_TOKENS, FeatureManifest
from .errors import DataError, SessionBusyError, SessionError
from .seeding import rng_from
from .strategies import (
    COLD_START_MIN,
    StrategyConfig,
    UtilityScore,
    _argmax_scores,
    s_scores,
    u_scores,
)

SCHEMA_VERSION = 1


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class SessionState:
    """In-memory image of the session file."""

    manifest: FeatureManifest
    strategy: StrategyConfig
    seed: int
    registry: dict[str, dict]  # id -> {"z": [...], "y": str | None}
    acquired: list[dict] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    last_suggestion: dict | None = None
    positive_label: str | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def n_selection(self) -> int:
        return len(self.manifest.selection)

    @property
    def n_classification(self) -> int:
        return len(self.manifest.classification)

    def acquired_ids(self) -> list[str]:
        return [rec["id"] for rec in self.acquired]

    def candidate_ids(self) -> list[str]:
        done = set(self.acquired_ids())
        return sorted(i for i in self.registry if i not in done)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "manifest": self.manifest.to_dict(),
            "strategy": self.strategy.to_dict(),
            "seed": self.seed,
            "positive_label": self.positive_label,
            "registry": {
                i: {"z": rec["z"], "y": rec["y"]} for i, rec in sorted(self.registry.items())
            },
            "acquired": self.acquired,
            "history": self.history,
            "last_suggestion": self.last_suggestion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionState":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SessionError(
                f"unsupported session schema version {version!r} (expected {SCHEMA_VERSION})"
            )
        state = cls(
            manifest=FeatureManifest.from_dict(d["manifest"]),
            strategy=StrategyConfig(**d["strategy"]),
            seed=int(d["seed"]),
            registry={str(i): {"z": rec["z"], "y": rec["y"]} for i, rec in d["registry"].items()},
            acquired=list(d["acquired"]),
            history=list(d["history"]),
            last_suggestion=d.get("last_suggestion"),
            positive_label=d.get("positive_label"),
        )
        known = set(state.registry)
        for rec in state.acquired:
            if rec["id"] not in known:
                raise SessionError(f"acquired id {rec['id']!r} is not in the registry")
            if len(rec["x"]) != state.n_classification:
                raise SessionError(f"acquired id {rec['id']!r} has a malformed feature vector")
        return state


# ---------------------------------------------------------------------------
# persistence


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    # Temp file in the same directory so the final rename stays on one
    # filesystem and is atomic.
    tmp = path.parent / f"{path.name}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_session(state: SessionState, path) -> None:
    payload = json.dumps(state.to_dict(), indent=2, sort_keys=True).encode("utf-8")
    _atomic_write_bytes(Path(path), payload)


def load_session(path) -> SessionState:
    p = Path(path)
    if not p.exists():
        raise SessionError(f"session state file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SessionError(f"session state file is corrupt: {p}: {exc}") from None
    return SessionState.from_dict(payload)


@contextmanager
def session_lock(state_path):
    """Single-process advisory lock next to the state file."""
    lock = Path(str(state_path) + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SessionBusyError(
            f"session is busy: lock file {lock} exists (remove it if the owning "
            "process died)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock)
        except FileNotFoundError:
            pass


# ---------------------------------------------------------------------------
# operations


def load_candidates_csv(path, manifest: FeatureManifest) -> dict[str, dict]:
    """Read the candidate registry: selection features plus optional labels.

    Classification columns are what the campaign will measure later, so
    they are not expected in this file; if present they are ignored.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"candidates file not found: {p}")
    registry: dict[str, dict] = {}
    with open(p, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"candidates file is empty: {p}") from None
        col_pos = {name: i for i, name in enumerate(header)}
        for col in manifest.selection:
            if col not in col_pos:
                raise DataError(f"selection column {col!r} is absent from {p.name}")
        if manifest.id_column is not None and manifest.id_column not in col_pos:
            raise DataError(f"id column {manifest.id_column!r} is absent from {p.name}")
        has_label = manifest.label in col_pos
        for row_num, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            z = []
            for col in manifest.selection:
                token = row[col_pos[col]].strip()
                if token.lower() in MISSING_TOKENS:
                    raise DataError(f"row {row_num}: missing selection value in {col!r}")
                try:
                    z.append(float(token))
                except ValueError:
                    raise DataError(
                        f"row {row_num}: non-numeric value {token!r} in column {col!r}"
                    ) from None
            y = None
            if has_label:
                token = row[col_pos[manifest.label]].strip()
                y = None if token.lower() in MISSING_TOKENS else token
            row_id = (
                row[col_pos[manifest.id_column]].strip()
                if manifest.id_column is not None
                else str(row_num)
            )
            if not row_id:
                raise DataError(f"row {row_num}: empty id")
            if row_id in registry:
                raise DataError(f"duplicate candidate id {row_id!r}")
            registry[row_id] = {"z": z, "y": y}
    if not registry:
        raise DataError(f"no candidates in {p}")
    return registry


def init_session(
    state_path,
    candidates_csv,
    manifest: FeatureManifest,
    strategy: StrategyConfig,
    seed: int = 0,
    clock=_utc_now,
) -> SessionState:
    path = Path(state_path)
    if path.exists():
        raise SessionError(f"state file already exists: {path}")
    registry = load_candidates_csv(candidates_csv, manifest)

    labels = sorted({rec["y"] for rec in registry.values() if rec["y"] is not None})
    positive = None
    if strategy.kind == "s_ascf":
        unlabeled = sorted(i for i, rec in registry.items() if rec["y"] is None)
        if unlabeled:
            raise SessionError(
                f"s-ascf needs labels for every candidate; {len(unlabeled)} rows are "
                f"unlabeled (first: {unlabeled[0]!r})"
            )
    if labels:
        if len(labels) > 2:
            raise SessionError(f"more than two label values in the registry: {labels}")
        if len(labels) == 2:
            positive = manifest.positive_label or labels[1]
            if positive not in labels:
                raise SessionError(
                    f"positive label {positive!r} not among registry labels {labels}"
                )
    state = SessionState(
        manifest=manifest,
        strategy=strategy,
        seed=seed,
        registry=registry,
        positive_label=positive,
    )
    state.history.append({"event": "init", "candidates": len(registry), "at": clock()})
    save_session(state, path)
    return state


@dataclass(frozen=True)
class Suggestion:
    """Outcome of a suggest call."""

    id: str | None
    scores: tuple[UtilityScore, ...] | None  # best-first, top few
    fallback: bool
    notice: str | None


def _model_arrays(state: SessionState):
    ids = sorted(state.acquired_ids())
    x_of = {rec["id"]: rec["x"] for rec in state.acquired}
    Z = np.array([state.registry[i]["z"] for i in ids], dtype=float)
    X = np.array([x_of[i] for i in ids], dtype=float)
    return ids, Z, X


def suggest(state: SessionState, top: int = 5, clock=_utc_now) -> Suggestion:
    """Propose the next candidate to measure.

    Falls back to a uniform random pick (with a notice) while the acquired
    pool is too small or one-classed for the configured strategy.
    """
    candidates = state.candidate_ids()
    if not candidates:
        state.history.append({"event": "suggest", "exhausted": True, "at": clock()})
        state.last_suggestion = None
        return Suggestion(id=None, scores=None, fallback=False, notice="candidate pool exhausted")

    rng = rng_from(state.seed, "suggest", len(state.history))
    notice = None
    scores: list[UtilityScore] | None = None
    fallback = False

    if state.strategy.kind == "random":
        picked = candidates[int(rng.integers(len(candidates)))]
    else:
        reason = _not_ready_reason(state)
        if reason is not None:
            picked = candidates[int(rng.integers(len(candidates)))]
            fallback = True
            notice = f"{reason}; suggesting uniformly at random"
        else:
            acq_ids, Z_acq, X_acq = _model_arrays(state)
            Z_cand = np.array([state.registry[i]["z"] for i in candidates], dtype=float)
            if state.strategy.kind == "u_ascf":
                values = u_scores(
                    Z_acq,
                    X_acq,
                    Z_cand,
                    B=state.strategy.B,
                    seed=int(rng.integers(0, 2**63)),
                    variance_mode=state.strategy.variance_mode,
                )
            else:
                y01_acq = np.array(
                    [state.registry[i]["y"] == state.positive_label for i in acq_ids]
                )
                y01_cand = np.array(
                    [state.registry[i]["y"] == state.positive_label for i in candidates]
                )
                values = s_scores(
                    Z_acq,
                    X_acq,
                    y01_acq,
                    Z_cand,
                    y01_cand,
                    p_mode=state.strategy.p_mode,
                    classifier_c=state.strategy.classifier_c,
                )
            all_scores = [UtilityScore(i, float(v)) for i, v in zip(candidates, values)]
            picked = _argmax_scores(all_scores, state.strategy.tie_break, rng)
            ordered = sorted(all_scores, key=lambda s: (-s.value, s.id))
            # The tie-break winner leads the list even if it is not the
            # lexicographic first of its tie group.
            ordered.remove(next(s for s in ordered if s.id == picked))
            best = next(s for s in all_scores if s.id == picked)
            scores = [best] + ordered[: max(0, top - 1)]

    state.last_suggestion = {"id": picked, "at": clock()}
    state.history.append(
        {"event": "suggest", "id": picked, "fallback": fallback, "at": clock()}
    )
    return Suggestion(
        id=picked,
        scores=None if scores is None else tuple(scores),
        fallback=fallback,
        notice=notice,
    )


def _not_ready_reason(state: SessionState) -> str | None:
    n = len(state.acquired)
    if n < COLD_START_MIN:
        return f"only {n} of {COLD_START_MIN} required acquisitions recorded"
    if state.strategy.kind == "s_ascf":
        if state.positive_label is None:
            return "labels are not binary yet"
        acq_labels = {state.registry[i]["y"] for i in state.acquired_ids()}
        if len(acq_labels) < 2:
            return "acquired instances cover a single class"
    return None


def record(state: SessionState, instance_id: str, values, clock=_utc_now) -> dict:
    """Append one measured classification vector to the acquired set."""
    instance_id = str(instance_id)
    if instance_id not in state.registry:
        raise SessionError(f"unknown id {instance_id!r}; not in the candidate registry")
    if instance_id in set(state.acquired_ids()):
        raise SessionError(f"id {instance_id!r} was already recorded")
    x = [float(v) for v in values]
    if len(x) != state.n_classification:
        raise SessionError(
            f"expected {state.n_classification} classification values "
            f"({', '.join(state.manifest.classification)}), got {len(x)}"
        )
    if not all(np.isfinite(x)):
        raise SessionError("classification values must be finite numbers")
    honored = bool(state.last_suggestion) and state.last_suggestion["id"] == instance_id
    entry = {"id": instance_id, "x": x, "at": clock(), "suggested": honored}
    state.acquired.append(entry)
    state.history.append(
        {"event": "record", "id": instance_id, "honored": honored, "at": clock()}
    )
    state.last_suggestion = None
    return entry


def status(state: SessionState) -> dict:
    records = [h for h in state.history if h["event"] == "record"]
    return {
        "strategy": state.strategy.label,
        "acquired": len(state.acquired),
        "candidates": len(state.candidate_ids()),
        "registry": len(state.registry),
        "positive_label": state.positive_label,
        "pending_suggestion": None if not state.last_suggestion else state.last_suggestion["id"],
        "suggestions_honored": sum(1 for h in records if h.get("honored")),
        "suggestions_overridden": sum(1 for h in records if not h.get("honored")),
    }


def export_csv(state: SessionState, out_path) -> Path:
    """Write the acquired set as a training CSV in the ingestion format."""
    if not state.acquired:
        raise SessionError("nothing acquired yet; nothing to export")
    labels_known = all(
        state.registry[rec["id"]]["y"] is not None for rec in state.acquired
    )
    header: list[str] = []
    if state.manifest.id_column is not None:
        header.append(state.manifest.id_column)
    header += list(state.manifest.selection) + list(state.manifest.classification)
    if labels_known:
        header.append(state.manifest.label)
    out = Path(out_path)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec in state.acquired:
            row: list[str] = []
            if state.manifest.id_column is not None:
                row.append(rec["id"])
            row += [repr(float(v)) for v in state.registry[rec["id"]]["z"]]
            row += [repr(float(v)) for v in rec["x"]]
            if labels_known:
                row.append(state.registry[rec["id"]]["y"])
            writer.writerow(row)
    return out
