import json
import os

import numpy as np
import pytest

from ascf import FeatureManifest, StrategyConfig, load_dataset
from ascf.errors import SessionBusyError, SessionError
from ascf.session import (
    export_csv,
    init_session,
    load_session,
    record,
    save_session,
    session_lock,
    status,
    suggest,
)
from ascf.strategies import s_scores

CANDIDATES_CSV = """pid,s1,s2,y
p1,0.0,1.0,healthy
p2,1.0,0.5,sick
p3,0.4,0.8,healthy
p4,0.9,0.1,sick
p5,0.5,0.5,sick
"""


def manifest():
    return FeatureManifest(
        selection=("s1", "s2"),
        classification=("c1", "c2"),
        label="y",
        id_column="pid",
    )


@pytest.fixture
def candidates_csv(tmp_path):
    path = tmp_path / "candidates.csv"
    path.write_text(CANDIDATES_CSV)
    return path


@pytest.fixture
def state_path(tmp_path):
    return tmp_path / "session.json"


def fixed_clock():
    return "2026-01-01T00:00:00+00:00"


class TestInit:
    def test_creates_state_file(self, candidates_csv, state_path):
        state = init_session(state_path, candidates_csv, manifest(),
                             StrategyConfig("s_ascf"), seed=7, clock=fixed_clock)
        assert state_path.exists()
        assert len(state.registry) == 5
        assert state.positive_label == "sick"  # lexicographically larger
        reloaded = load_session(state_path)
        assert reloaded.to_dict() == state.to_dict()

    def test_refuses_existing_state(self, candidates_csv, state_path):
        init_session(state_path, candidates_csv, manifest(), StrategyConfig("random"))
        with pytest.raises(SessionError, match="already exists"):
            init_session(state_path, candidates_csv, manifest(), StrategyConfig("random"))

    def test_s_ascf_needs_labels(self, tmp_path, state_path):
        path = tmp_path / "unlabeled.csv"
        path.write_text("pid,s1,s2\np1,0.0,1.0\np2,1.0,0.5\np3,0.4,0.8\n")
        with pytest.raises(SessionError, match="labels"):
            init_session(state_path, path, manifest(), StrategyConfig("s_ascf"))
        # the unsupervised strategy accepts unlabeled registries
        state = init_session(state_path, path, manifest(), StrategyConfig("u_ascf"))
        assert state.positive_label is None

    def test_corrupt_state_detected(self, state_path):
        state_path.write_text("{not json")
        with pytest.raises(SessionError, match="corrupt"):
            load_session(state_path)

    def test_schema_version_checked(self, candidates_csv, state_path):
        init_session(state_path, candidates_csv, manifest(), StrategyConfig("random"))
        payload = json.loads(state_path.read_text())
        payload["schema_version"] = 99
        state_path.write_text(json.dumps(payload))
        with pytest.raises(SessionError, match="schema"):
            load_session(state_path)


class TestSuggestRecord:
    def _session(self, candidates_csv, state_path, kind="s_ascf"):
        return init_session(state_path, candidates_csv, manifest(),
                            StrategyConfig(kind), seed=3, clock=fixed_clock)

    def test_fallback_to_random_before_cold_start(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        out = suggest(state, clock=fixed_clock)
        assert out.fallback
        assert "random" in out.notice
        assert out.id in state.registry

    def test_record_then_model_based_suggestion(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        record(state, "p1", [0.1, 0.2], clock=fixed_clock)  # healthy
        record(state, "p2", [0.9, 0.8], clock=fixed_clock)  # sick
        out = suggest(state, clock=fixed_clock)
        assert not out.fallback
        assert out.id in {"p3", "p4", "p5"}
        assert out.scores is not None and len(out.scores) == 3
        # printed utilities equal a direct evaluation on the same arrays
        Z_acq = np.array([[0.0, 1.0], [1.0, 0.5]])
        X_acq = np.array([[0.1, 0.2], [0.9, 0.8]])
        y01 = np.array([False, True])
        cand = ["p3", "p4", "p5"]
        Z_cand = np.array([[0.4, 0.8], [0.9, 0.1], [0.5, 0.5]])
        y01_cand = np.array([False, True, True])
        vals = s_scores(Z_acq, X_acq, y01, Z_cand, y01_cand)
        expect = {i: v for i, v in zip(cand, vals)}
        got = {s.id: s.value for s in out.scores}
        assert got == pytest.approx(expect)
        assert out.scores[0].value == max(vals)
        assert out.id == max(cand, key=lambda i: (expect[i], ))

    def test_scores_are_sorted_best_first(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path, kind="u_ascf")
        record(state, "p1", [0.1, 0.2], clock=fixed_clock)
        record(state, "p2", [0.9, 0.8], clock=fixed_clock)
        out = suggest(state, clock=fixed_clock)
        vals = [s.value for s in out.scores]
        assert vals == sorted(vals, reverse=True)
        assert out.id == out.scores[0].id

    def test_exhausted_pool(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        for pid in ("p1", "p2", "p3", "p4", "p5"):
            record(state, pid, [0.0, 0.0], clock=fixed_clock)
        out = suggest(state, clock=fixed_clock)
        assert out.id is None
        assert "exhausted" in out.notice

    def test_record_validations(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        with pytest.raises(SessionError, match="unknown id"):
            record(state, "nope", [0.0, 0.0], clock=fixed_clock)
        record(state, "p1", [0.0, 0.0], clock=fixed_clock)
        with pytest.raises(SessionError, match="already"):
            record(state, "p1", [0.0, 0.0], clock=fixed_clock)
        with pytest.raises(SessionError, match="expected 2"):
            record(state, "p2", [0.0], clock=fixed_clock)
        with pytest.raises(SessionError, match="finite"):
            record(state, "p2", [float("nan"), 0.0], clock=fixed_clock)

    def test_honored_and_override_tracking(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        out = suggest(state, clock=fixed_clock)
        entry = record(state, out.id, [0.0, 0.0], clock=fixed_clock)
        assert entry["suggested"] is True
        out2 = suggest(state, clock=fixed_clock)
        other = next(i for i in state.candidate_ids() if i != out2.id)
        entry2 = record(state, other, [1.0, 1.0], clock=fixed_clock)
        assert entry2["suggested"] is False
        info = status(state)
        assert info["suggestions_honored"] == 1
        assert info["suggestions_overridden"] == 1
        assert info["acquired"] == 2 and info["candidates"] == 3

    def test_history_is_append_only_across_saves(self, candidates_csv, state_path):
        state = self._session(candidates_csv, state_path)
        events = []
        for pid in ("p1", "p2"):
            record(state, pid, [0.0, 0.0], clock=fixed_clock)
            save_session(state, state_path)
            state = load_session(state_path)
            new_events = [h for h in state.history if h["event"] == "record"]
            assert [h["id"] for h in new_events][: len(events)] == events
            events = [h["id"] for h in new_events]
        assert events == ["p1", "p2"]


class TestExport:
    def test_round_trips_through_ingestion(self, candidates_csv, state_path, tmp_path):
        state = init_session(state_path, candidates_csv, manifest(),
                             StrategyConfig("s_ascf"), clock=fixed_clock)
        record(state, "p2", [0.9, 0.8], clock=fixed_clock)
        record(state, "p1", [0.1, 0.2], clock=fixed_clock)
        out = export_csv(state, tmp_path / "train.csv")
        ds = load_dataset(out, manifest())
        assert ds.ids == ("p2", "p1")  # acquisition order
        assert ds.x_true("p2") == pytest.approx([0.9, 0.8])
        assert ds.instance("p1").y == "healthy"

    def test_export_needs_acquisitions(self, candidates_csv, state_path, tmp_path):
        state = init_session(state_path, candidates_csv, manifest(),
                             StrategyConfig("random"), clock=fixed_clock)
        with pytest.raises(SessionError, match="nothing"):
            export_csv(state, tmp_path / "x.csv")


class TestLockAndAtomicity:
    def test_lock_excludes_second_holder(self, state_path):
        with session_lock(state_path):
            with pytest.raises(SessionBusyError):
                with session_lock(state_path):
                    pass
        # released afterwards
        with session_lock(state_path):
            pass

    def test_save_is_atomic_under_fork_kill(self, candidates_csv, state_path):
        # a handful of real SIGKILLs; the acceptance suite runs the full 100
        state = init_session(state_path, candidates_csv, manifest(),
                             StrategyConfig("random"), clock=fixed_clock)
        pre = state_path.read_bytes()
        record(state, "p1", [0.5, 0.5], clock=fixed_clock)
        post_state = state
        for trial in range(8):
            state_path.write_bytes(pre)
            pid = os.fork()
            if pid == 0:  # child: save and exit
                try:
                    save_session(post_state, state_path)
                finally:
                    os._exit(0)
            if trial % 2 == 0:
                os.kill(pid, 9)
            os.waitpid(pid, 0)
            content = json.loads(state_path.read_text())
            acquired = [r["id"] for r in content["acquired"]]
            assert acquired in ([], ["p1"])
