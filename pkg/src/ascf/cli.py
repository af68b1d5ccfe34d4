"""Command-line entry points.

``ascf simulate``  runs the benchmark protocol on a dataset and writes
                   curves.csv, report.csv and metadata.json.
``ascf report``    recomputes or merges comparison reports from one or more
                   simulate outputs.
``ascf session``   drives a real staged-acquisition campaign with a
                   persistent state file (init / suggest / record / status /
                   export).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import FeatureManifest, load_dataset
from .errors import AscfError, ManifestError, PairingError
from .harness import (
    ProtocolConfig,
    aggregate_and_compare,
    merge_curves,
    read_curves_csv,
    run_benchmark,
    write_artifacts,
    write_report_csv,
)
from .session import (
    SessionState,
    export_csv,
    init_session,
    load_session,
    record,
    save_session,
    session_lock,
    status,
    suggest,
)
from .strategies import StrategyConfig

STRATEGY_CHOICES = ("random", "u-ascf", "s-ascf")


def _add_strategy_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bootstrap", type=int, default=10, metavar="B",
                        help="ensemble size for u-ascf (default 10)")
    parser.add_argument("--p-mode", choices=("true-label", "predicted-class"),
                        default="true-label",
                        help="misclassification probability for s-ascf: of the known "
                             "label, or of the most likely class")
    parser.add_argument("--variance-mode", choices=("raw", "standardized"), default="raw",
                        help="whether u-ascf variances are rescaled per dimension")
    parser.add_argument("--tie-break", choices=("lowest-id", "seeded-random"),
                        default="lowest-id")


def _strategy_config(kind_flag: str, args) -> StrategyConfig:
    return StrategyConfig(
        kind=StrategyConfig.parse_kind(kind_flag),
        B=args.bootstrap,
        variance_mode=args.variance_mode,
        p_mode=args.p_mode.replace("-", "_"),
        tie_break=args.tie_break.replace("-", "_"),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ascf",
        description="Utility-guided acquisition of expensive classification features.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the benchmark protocol on a dataset")
    sim.add_argument("--data", required=True, help="CSV data file")
    sim.add_argument("--manifest", required=True, help="JSON feature manifest")
    sim.add_argument("--strategy", action="append", choices=STRATEGY_CHOICES,
                     help="strategy to run; repeatable; the random baseline is always "
                          "included (default: u-ascf and s-ascf)")
    sim.add_argument("--k", type=int, default=5, help="folds (default 5)")
    sim.add_argument("--repeats", type=int, default=10, help="CV repeats (default 10)")
    sim.add_argument("--alpha", type=float, default=0.1,
                     help="one-sided significance level (default 0.1)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--max-steps", type=int, default=None,
                     help="cap acquisitions per run (default: exhaust the pool)")
    sim.add_argument("--missing-policy", choices=("reject", "drop"), default="reject")
    sim.add_argument("--out", required=True, help="output directory")
    _add_strategy_flags(sim)

    rep = sub.add_parser("report", help="print or merge comparison reports")
    rep.add_argument("runs", nargs="+",
                     help="simulate output directories (or curves.csv files)")
    rep.add_argument("--steps", default=None, metavar="LO:HI",
                     help="restrict the table to a 1-based step range, e.g. 1:25")
    rep.add_argument("--alpha", type=float, default=None,
                     help="significance level (default: from run metadata, else 0.1)")
    rep.add_argument("--out", default=None, help="also write report.csv here")

    ses = sub.add_parser("session", help="drive a staged acquisition campaign")
    ses_sub = ses.add_subparsers(dest="session_command", required=True)

    s_init = ses_sub.add_parser("init", help="start a campaign from a candidates CSV")
    s_init.add_argument("--state", required=True, help="session state file (JSON)")
    s_init.add_argument("--candidates", required=True, help="CSV of candidates")
    s_init.add_argument("--manifest", required=True)
    s_init.add_argument("--strategy", choices=STRATEGY_CHOICES, default="s-ascf")
    s_init.add_argument("--seed", type=int, default=0)
    _add_strategy_flags(s_init)

    s_sug = ses_sub.add_parser("suggest", help="propose the next instance to measure")
    s_sug.add_argument("--state", required=True)
    s_sug.add_argument("--top", type=int, default=5, help="how many candidates to show")

    s_rec = ses_sub.add_parser("record", help="store measured classification features")
    s_rec.add_argument("--state", required=True)
    s_rec.add_argument("--id", required=True, dest="instance_id")
    s_rec.add_argument("--values", required=True,
                       help="comma-separated values, one per classification column")

    s_sta = ses_sub.add_parser("status", help="show campaign progress")
    s_sta.add_argument("--state", required=True)

    s_exp = ses_sub.add_parser("export", help="write the acquired set as a training CSV")
    s_exp.add_argument("--state", required=True)
    s_exp.add_argument("--out", required=True)

    return parser


def cmd_simulate(args) -> int:
    manifest = FeatureManifest.from_json_file(args.manifest)
    dataset = load_dataset(args.data, manifest, missing_policy=args.missing_policy)
    if dataset.load_report is not None and dataset.load_report.dropped:
        print(f"load report: {dataset.load_report.summary()}")
    kinds = args.strategy or ["u-ascf", "s-ascf"]
    strategies = [_strategy_config(k, args) for k in kinds]
    protocol = ProtocolConfig(
        repeats=args.repeats,
        k=args.k,
        alpha=args.alpha,
        seed=args.seed,
        max_steps=args.max_steps,
    )
    result = run_benchmark(dataset, strategies, protocol, data_path=str(args.data))
    paths = write_artifacts(args.out, result)
    n_runs = protocol.repeats * protocol.k
    print(f"simulated {n_runs} runs x {len(result.curves_by_strategy)} strategies "
          f"on {len(dataset.instances)} instances")
    for name in result.curves_by_strategy:
        if name == "random":
            continue
        better = sum(1 for r in result.report.rows if r.strategy == name and r.flag == "better")
        worse = sum(1 for r in result.report.rows if r.strategy == name and r.flag == "worse")
        total = sum(1 for r in result.report.rows if r.strategy == name)
        print(f"  {name}: better than random at {better}/{total} steps, worse at {worse}")
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def _parse_steps(spec: str) -> tuple[int, int]:
    try:
        lo_s, hi_s = spec.split(":")
        lo, hi = int(lo_s), int(hi_s)
    except ValueError:
        raise ValueError(f"--steps expects LO:HI, got {spec!r}") from None
    if lo < 1 or hi < lo:
        raise ValueError(f"--steps range {spec!r} is empty or starts below 1")
    return lo, hi


def cmd_report(args) -> int:
    collections = []
    metas = []
    for run in args.runs:
        p = Path(run)
        curves_path = p if p.is_file() else p / "curves.csv"
        if not curves_path.exists():
            raise PairingError(f"no curves.csv under {p}")
        collections.append(read_curves_csv(curves_path))
        meta_path = curves_path.parent / "metadata.json"
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                metas.append(json.load(fh))
    fingerprints = {m.get("split_fingerprint") for m in metas}
    if len(fingerprints) > 1:
        raise PairingError(
            f"runs use different splits (fingerprints {sorted(map(str, fingerprints))}); "
            "they cannot be merged into one paired comparison"
        )
    seeds = {m.get("protocol", {}).get("seed") for m in metas}
    if len(seeds) > 1:
        raise PairingError(f"runs use different seeds {sorted(map(str, seeds))}")

    alpha = args.alpha
    if alpha is None:
        alpha = metas[0]["protocol"]["alpha"] if metas else 0.1
    merged = merge_curves(collections)
    if "random" not in merged:
        raise PairingError("no random baseline among the merged runs")
    report = aggregate_and_compare(merged, baseline="random", alpha=alpha)

    rows = report.rows
    if args.steps is not None:
        lo, hi = _parse_steps(args.steps)
        rows = tuple(r for r in rows if lo <= r.step <= hi)
    filtered = type(report)(rows=rows, alpha=report.alpha, baseline=report.baseline)

    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / "report.csv", filtered)
        print(f"wrote {out / 'report.csv'}")

    print(f"{'strategy':<12} {'step':>5} {'mean':>8} {'p10':>8} {'p90':>8} "
          f"{'p>':>10} {'p<':>10} flag")
    for r in rows:
        print(f"{r.strategy:<12} {r.step:>5} {r.mean:>8.4f} {r.p10:>8.4f} {r.p90:>8.4f} "
              f"{r.p_greater:>10.4g} {r.p_less:>10.4g} {r.flag}")
    return 0


def _print_suggestion(outcome) -> None:
    if outcome.id is None:
        print(f"notice: {outcome.notice}")
        return
    if outcome.notice:
        print(f"notice: {outcome.notice}")
    print(f"suggest: {outcome.id}")
    if outcome.scores:
        print("  rank  id            utility")
        for rank, s in enumerate(outcome.scores, start=1):
            print(f"  {rank:<5} {s.id:<13} {s.value!r}")


def cmd_session(args) -> int:
    if args.session_command == "init":
        manifest = FeatureManifest.from_json_file(args.manifest)
        strategy = _strategy_config(args.strategy, args)
        with session_lock(args.state):
            state = init_session(args.state, args.candidates, manifest, strategy,
                                 seed=args.seed)
        print(f"initialized session with {len(state.registry)} candidates "
              f"(strategy {strategy.label}) at {args.state}")
        return 0

    if args.session_command == "suggest":
        with session_lock(args.state):
            state = load_session(args.state)
            outcome = suggest(state, top=args.top)
            save_session(state, args.state)
        _print_suggestion(outcome)
        return 0

    if args.session_command == "record":
        values = [v for v in (tok.strip() for tok in args.values.split(",")) if v]
        with session_lock(args.state):
            state = load_session(args.state)
            entry = record(state, args.instance_id, values)
            save_session(state, args.state)
        verdict = "honored the suggestion" if entry["suggested"] else "override"
        print(f"recorded {entry['id']} ({verdict}); "
              f"{len(state.acquired)} acquired, {len(state.candidate_ids())} remaining")
        return 0

    if args.session_command == "status":
        info = status(load_session(args.state))
        for key, value in info.items():
            print(f"{key}: {value}")
        return 0

    if args.session_command == "export":
        state = load_session(args.state)
        out = export_csv(state, args.out)
        print(f"wrote {out} ({len(state.acquired)} rows)")
        return 0

    raise AssertionError(f"unhandled session command {args.session_command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "session":
            return cmd_session(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AscfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
