import json
import os
import subprocess
import sys

import pytest

from ascf.cli import main
from datagen import toy_manifest_dict, write_toy_csv

pytestmark = pytest.mark.usefixtures("tmp_path")


@pytest.fixture
def toy_files(tmp_path):
    data = write_toy_csv(tmp_path / "toy.csv", n=20, M=2, D=2, seed=0)
    manifest = tmp_path / "toy.json"
    manifest.write_text(json.dumps(toy_manifest_dict()))
    return data, manifest


def simulate_args(data, manifest, out, *extra):
    return [
        "simulate", "--data", str(data), "--manifest", str(manifest),
        "--strategy", "s-ascf", "--repeats", "1", "--k", "3", "--seed", "5",
        "--out", str(out), *extra,
    ]


def run_cli_subprocess(args, hashseed="0"):
    env = dict(os.environ, PYTHONHASHSEED=hashseed)
    return subprocess.run(
        [sys.executable, "-m", "ascf.cli", *args],
        capture_output=True, text=True, env=env,
    )


class TestSimulate:
    def test_writes_three_artifacts(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        out = tmp_path / "run1"
        assert main(simulate_args(data, manifest, out)) == 0
        for name in ("curves.csv", "report.csv", "metadata.json"):
            assert (out / name).exists()
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["strategy_order"] == ["random", "s-ascf"]
        assert meta["protocol"]["seed"] == 5
        text = capsys.readouterr().out
        assert "wrote" in text

    def test_rerun_is_byte_identical_across_hash_seeds(self, toy_files, tmp_path):
        data, manifest = toy_files
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        r1 = run_cli_subprocess(simulate_args(data, manifest, out1), hashseed="1")
        r2 = run_cli_subprocess(simulate_args(data, manifest, out2), hashseed="31337")
        assert r1.returncode == 0, r1.stderr
        assert r2.returncode == 0, r2.stderr
        for name in ("curves.csv", "report.csv", "metadata.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_missing_manifest_key_exits_2_and_names_it(self, toy_files, tmp_path, capsys):
        data, _ = toy_files
        bad = tmp_path / "bad.json"
        payload = toy_manifest_dict()
        del payload["label"]
        bad.write_text(json.dumps(payload))
        code = main(simulate_args(data, bad, tmp_path / "out"))
        assert code == 2
        assert "label" in capsys.readouterr().err

    def test_data_error_exits_1(self, toy_files, tmp_path, capsys):
        _, manifest = toy_files
        missing = tmp_path / "missing.csv"
        code = main(simulate_args(missing, manifest, tmp_path / "out"))
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, toy_files, tmp_path):
        data, manifest = toy_files
        with pytest.raises(SystemExit) as exc:
            main(simulate_args(data, manifest, tmp_path / "out", "--nope"))
        assert exc.value.code == 2

    def test_bad_alpha_exits_2(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        code = main(simulate_args(data, manifest, tmp_path / "out", "--alpha", "0.9"))
        assert code == 2
        assert "alpha" in capsys.readouterr().err


class TestReport:
    def test_idempotent_over_single_run(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        out = tmp_path / "run"
        main(simulate_args(data, manifest, out))
        rep_out = tmp_path / "rep"
        assert main(["report", str(out), "--out", str(rep_out)]) == 0
        assert (rep_out / "report.csv").read_bytes() == (out / "report.csv").read_bytes()

    def test_steps_filter(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        out = tmp_path / "run"
        main(simulate_args(data, manifest, out))
        capsys.readouterr()
        assert main(["report", str(out), "--steps", "1:4"]) == 0
        table = capsys.readouterr().out.splitlines()
        body = [ln for ln in table if ln and not ln.startswith("strategy")]
        assert len(body) == 2 * 4  # two strategies, four steps

    def test_merge_of_two_runs_equals_joint_simulate(self, toy_files, tmp_path):
        data, manifest = toy_files
        run_u = tmp_path / "run_u"
        run_s = tmp_path / "run_s"
        joint = tmp_path / "joint"
        base = ["--data", str(data), "--manifest", str(manifest), "--repeats", "1",
                "--k", "3", "--seed", "5"]
        assert main(["simulate", *base, "--strategy", "u-ascf", "--out", str(run_u)]) == 0
        assert main(["simulate", *base, "--strategy", "s-ascf", "--out", str(run_s)]) == 0
        assert main(["simulate", *base, "--strategy", "u-ascf", "--strategy", "s-ascf",
                     "--out", str(joint)]) == 0
        merged_out = tmp_path / "merged"
        assert main(["report", str(run_u), str(run_s), "--out", str(merged_out)]) == 0
        joint_rows = sorted((joint / "report.csv").read_text().splitlines())
        merged_rows = sorted((merged_out / "report.csv").read_text().splitlines())
        assert merged_rows == joint_rows

    def test_incompatible_seeds_rejected(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        a, b = tmp_path / "a", tmp_path / "b"
        main(simulate_args(data, manifest, a))
        main(["simulate", "--data", str(data), "--manifest", str(manifest),
              "--strategy", "s-ascf", "--repeats", "1", "--k", "3", "--seed", "6",
              "--out", str(b)])
        code = main(["report", str(a), str(b)])
        assert code == 1
        err = capsys.readouterr().err
        assert "splits" in err or "seeds" in err

    def test_bad_steps_spec_exits_2(self, toy_files, tmp_path, capsys):
        data, manifest = toy_files
        out = tmp_path / "run"
        main(simulate_args(data, manifest, out))
        assert main(["report", str(out), "--steps", "5"]) == 2


class TestSessionCli:
    @pytest.fixture
    def campaign(self, tmp_path):
        csv_path = tmp_path / "cand.csv"
        csv_path.write_text(
            "pid,s1,y\n"
            "p1,0.0,healthy\n"
            "p2,1.0,sick\n"
            "p3,0.2,healthy\n"
            "p4,0.8,sick\n"
            "p5,0.5,sick\n"
        )
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({
            "selection": ["s1"],
            "classification": ["c1", "c2"],
            "label": "y",
            "id": "pid",
        }))
        state = tmp_path / "state.json"
        return csv_path, manifest, state

    def test_full_flow(self, campaign, capsys):
        csv_path, manifest, state = campaign
        assert main(["session", "init", "--state", str(state), "--candidates",
                     str(csv_path), "--manifest", str(manifest),
                     "--strategy", "s-ascf"]) == 0
        # cold start: fallback notices until one instance per class is in
        assert main(["session", "suggest", "--state", str(state)]) == 0
        out = capsys.readouterr().out
        assert "notice" in out and "random" in out
        assert main(["session", "record", "--state", str(state), "--id", "p1",
                     "--values", "0.1,0.2"]) == 0
        assert main(["session", "record", "--state", str(state), "--id", "p2",
                     "--values", "0.9,0.8"]) == 0
        capsys.readouterr()
        assert main(["session", "suggest", "--state", str(state)]) == 0
        out = capsys.readouterr().out
        assert "suggest:" in out and "utility" in out
        suggested = next(ln for ln in out.splitlines() if ln.startswith("suggest:"))
        picked = suggested.split()[-1]
        assert picked in {"p3", "p4", "p5"}
        # the suggested id leads the printed ranking
        table = [ln.split() for ln in out.splitlines() if ln.strip() and ln.strip()[0].isdigit()]
        assert table[0][1] == picked
        utilities = [float(row[2]) for row in table]
        assert utilities == sorted(utilities, reverse=True)
        assert main(["session", "record", "--state", str(state), "--id", picked,
                     "--values", "0.4,0.6"]) == 0
        capsys.readouterr()
        assert main(["session", "status", "--state", str(state)]) == 0
        out = capsys.readouterr().out
        assert "acquired: 3" in out
        assert "suggestions_honored: 1" in out

    def test_record_unknown_id_exits_1(self, campaign, capsys):
        csv_path, manifest, state = campaign
        main(["session", "init", "--state", str(state), "--candidates", str(csv_path),
              "--manifest", str(manifest), "--strategy", "random"])
        code = main(["session", "record", "--state", str(state), "--id", "zz",
                     "--values", "0,0"])
        assert code == 1
        assert "unknown id" in capsys.readouterr().err

    def test_suggest_on_exhausted_pool_exits_0(self, campaign, capsys):
        csv_path, manifest, state = campaign
        main(["session", "init", "--state", str(state), "--candidates", str(csv_path),
              "--manifest", str(manifest), "--strategy", "random"])
        for pid in ("p1", "p2", "p3", "p4", "p5"):
            main(["session", "record", "--state", str(state), "--id", pid,
                  "--values", "0,0"])
        capsys.readouterr()
        assert main(["session", "suggest", "--state", str(state)]) == 0
        assert "exhausted" in capsys.readouterr().out

    def test_busy_lock_exits_1(self, campaign, capsys):
        csv_path, manifest, state = campaign
        main(["session", "init", "--state", str(state), "--candidates", str(csv_path),
              "--manifest", str(manifest), "--strategy", "random"])
        lock = state.parent / (state.name + ".lock")
        lock.write_text("12345")
        code = main(["session", "suggest", "--state", str(state)])
        assert code == 1
        assert "busy" in capsys.readouterr().err.lower()

    def test_export_matches_ingestion_format(self, campaign, tmp_path, capsys):
        csv_path, manifest, state = campaign
        main(["session", "init", "--state", str(state), "--candidates", str(csv_path),
              "--manifest", str(manifest), "--strategy", "random"])
        main(["session", "record", "--state", str(state), "--id", "p1",
              "--values", "0.1,0.2"])
        main(["session", "record", "--state", str(state), "--id", "p2",
              "--values", "0.9,0.8"])
        out_csv = tmp_path / "train.csv"
        assert main(["session", "export", "--state", str(state), "--out", str(out_csv)]) == 0
        from ascf import FeatureManifest, load_dataset

        ds = load_dataset(out_csv, FeatureManifest.from_json_file(manifest))
        assert len(ds.instances) == 2
