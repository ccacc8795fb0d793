"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure,
4 DATC conformance failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .mapgraph import POWERS, MapError, load_map

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_DATC = 4

log = logging.getLogger("diplobench")


class UsageError(ValueError):
    """Bad configuration or input; maps to exit code 2."""


def _progress(text: str) -> None:
    print(text, file=sys.stderr, flush=True)


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping at the top level")
    return data


def match_settings(config: dict, args: argparse.Namespace) -> dict:
    """The `match` section with top-level endpoints folded in and flags applied on top."""
    match = dict(config.get("match") or {})
    if config.get("endpoints"):
        match["endpoints"] = {**config["endpoints"], **(match.get("endpoints") or {})}
    prompt = dict(match.get("prompt_config") or {})
    if getattr(args, "seed", None) is not None:
        match["seed"] = args.seed
    if getattr(args, "max_year", None) is not None:
        match["max_year"] = args.max_year
    if getattr(args, "press", None) is not None:
        match["press"] = args.press
        if args.press == "NONE":
            match["negotiation_rounds"] = 0
        elif match.get("negotiation_rounds") == 0:
            match["negotiation_rounds"] = 3
    if getattr(args, "rounds", None) is not None:
        match["negotiation_rounds"] = args.rounds
        if args.rounds == 0:
            match["press"] = "NONE"
    if getattr(args, "variant", None) is not None:
        prompt["variant"] = args.variant
    if getattr(args, "parallel", None) is not None:
        match["parallel"] = args.parallel
    if prompt:
        match["prompt_config"] = prompt
    match.setdefault("assignment", "random")
    return match


def build_match_config(config: dict, args: argparse.Namespace):
    from .runner import ConfigError, MatchConfig

    try:
        return MatchConfig.from_dict(match_settings(config, args))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    from .runner import run_match

    config = build_match_config(load_config(args.config), args)
    out = _out_dir(args, "runs")
    path = out / f"match_seed{config.seed}.jsonl"
    config = replace(config, output_path=str(path), match_id=config.match_id or f"run-{config.seed}")
    record = run_match(config, progress=_progress)
    s = record.summary
    _progress(f"finished at {s['final_phase']}; winner {s['winner'] or 'none'}; centers {s['sc_counts']}")
    print(path)
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    from .report import generate_report
    from .runner import run_benchmark

    config = load_config(args.config)
    bench = dict(config.get("benchmark") or {})
    base = build_match_config(config, args)
    power = args.power or bench.get("power", "FRANCE")
    if power not in POWERS:
        raise UsageError(f"unknown power {power!r}")
    n = int(bench.get("n", 20))
    out = _out_dir(args, "benchmark")
    result = run_benchmark(
        bench.get("model", "random"),
        n=n,
        evaluated_power=power,
        opponent_binding=bench.get("opponent", "random"),
        base=base,
        out_dir=str(out),
        parallel_matches=args.parallel or 1,
    )
    summary = generate_report([out], out / "report", power)
    ci = result.ci95
    _progress(f"mean score {result.mean:.2f}" + (f", 95% CI [{ci[0]:.2f}, {ci[1]:.2f}]" if ci else " (n=1, no CI)"))
    print(json.dumps({"scores": result.scores, "mean": result.mean, "ci95": list(ci) if ci else None,
                      "invalid_rate": summary["invalid_rate"]}))
    return EXIT_OK


def cmd_csa_capture(args: argparse.Namespace) -> int:
    from .csa import SnapshotError, capture_snapshot

    try:
        snap = capture_snapshot(args.log, args.phase)
    except (SnapshotError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args, "snapshots")
    path = out / f"snapshot_{args.phase}.json"
    snap.save(path)
    print(path)
    return EXIT_OK


def _load_snapshot(path: Optional[str], config: dict, args: argparse.Namespace):
    from .csa import Snapshot, SnapshotError, capture_snapshot, snapshot_opening

    source = path or config.get("snapshot")
    try:
        if source:
            return Snapshot.load(source)
        capture = config.get("capture")
        if capture:
            return capture_snapshot(capture["log"], capture["phase"])
    except (SnapshotError, OSError, KeyError) as exc:
        raise UsageError(f"cannot load snapshot: {exc}") from exc
    return snapshot_opening(build_match_config(config, args))


def _intervention(section: dict):
    from .agent import RelationshipLevel
    from .csa import Intervention

    try:
        overrides = tuple(
            (o["power"], o["toward"], RelationshipLevel.parse(o["level"]) if isinstance(o["level"], str) else RelationshipLevel(o["level"]))
            for o in section.get("relationship_overrides", ())
        )
        return Intervention(
            relationship_overrides=overrides,
            prompt_injections=dict(section.get("prompt_injections") or {}),
            model_substitutions=dict(section.get("model_substitutions") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad intervention: {exc}") from exc


def cmd_csa_replay(args: argparse.Namespace) -> int:
    from . import metrics
    from .csa import replay_phase, write_trials
    from .prompts import PromptConfig

    config = load_config(args.config)
    snap = _load_snapshot(args.snapshot, config, args)
    replay_cfg = dict(config.get("replay") or {})
    prompt = {**snap.prompt_config.to_dict(), **(replay_cfg.get("prompt_config") or {})}
    if args.variant:
        prompt["variant"] = args.variant
    try:
        snap = replace(snap, prompt_config=PromptConfig.from_dict(prompt))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    depth = args.depth or int(replay_cfg.get("depth", 30))
    trials = replay_phase(
        snap, _intervention(replay_cfg.get("intervention") or {}), depth,
        seed=args.seed or 0, parallel_trials=args.parallel or 4,
    )
    types = {t: 0 for t in metrics.ACTION_TYPES}
    for t in trials:
        for o in t.orders:
            if args.power is None or o["power"] == args.power:
                types[metrics.action_type(o["order"])] += 1
    total = sum(types.values())
    summary = {
        "phase": snap.state.phase,
        "depth": depth,
        "prompt_config": snap.prompt_config.to_dict(),
        "tokens_total": sum(t.total_usage.total for t in trials),
        "order_shares": {k: (v / total if total else None) for k, v in types.items()},
    }
    out = _out_dir(args, "csa")
    path = out / f"replay_{snap.state.phase}_{snap.prompt_config.variant.value}.jsonl"
    write_trials(trials, path, summary)
    print(path)
    return EXIT_OK


def cmd_csa_persuade(args: argparse.Namespace) -> int:
    from .csa import run_persuasion_experiment, write_trials
    from .prompts import PERSUASION_METHODS

    config = load_config(args.config)
    section = dict(config.get("persuasion") or {})
    snap = _load_snapshot(args.snapshot, config, args)
    persuader = args.power or section.get("persuader", "TURKEY")
    methods = [args.method] if args.method else section.get("methods") or [section.get("method", "REASON")]
    depth = args.depth or int(section.get("depth", 20))
    out = _out_dir(args, "persuasion")
    results = {}
    for method in methods:
        method = method.upper()
        if method not in PERSUASION_METHODS or persuader not in POWERS:
            raise UsageError(f"unknown method {method!r} or power {persuader!r}")
        stats = run_persuasion_experiment(
            snap, method, persuader, section.get("binding"), depth,
            seed=args.seed or 0, parallel_trials=args.parallel or 4,
        )
        write_trials(stats.trials, out / f"persuasion_{method}.jsonl", stats.summary())
        results[method] = {"success_rate": stats.success_rate, "mean_magnitude": stats.mean_magnitude}
        _progress(f"{method}: success {stats.success_rate:.2f}, mean magnitude {stats.mean_magnitude:.2f}")
    print(json.dumps(results, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    from .report import ReportError, generate_report

    try:
        summary = generate_report(args.logs, _out_dir(args, "report"), args.power or "FRANCE", args.judgments or ())
    except ReportError as exc:
        raise UsageError(str(exc)) from exc
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_datc(args: argparse.Namespace) -> int:
    from .datc import CONVOY_SECTIONS, MANDATORY_SECTIONS, conformance_ok, run_corpus

    report = run_corpus()
    sections = sorted({r.case.section for r in report.results})
    for sec in sections:
        chosen = [r for r in report.results if r.case.section == sec]
        print(f"{sec}: {sum(r.passed for r in chosen)}/{len(chosen)}")
    for r in report.failures:
        print(f"FAIL {r.case.case_id} {r.case.title}: {'; '.join(r.problems)}")
    print(
        f"mandatory {report.pass_rate(MANDATORY_SECTIONS):.1%}, convoy {report.pass_rate(CONVOY_SECTIONS):.1%}, "
        f"{report.seconds:.2f}s"
    )
    return EXIT_OK if conformance_ok(report) else EXIT_DATC


def cmd_map_validate(args: argparse.Namespace) -> int:
    try:
        graph = load_map(Path(args.map).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {args.map}: {exc}") from exc
    except MapError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{len(graph.provinces)} provinces, {len(graph.supply_centers)} supply centers, powers: {', '.join(graph.powers)}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    from .judges import betrayal_rates, judge_model, judged_pairs, outgoing_messages, reliability_study, track_promises, write_judgments
    from .llm import ModelEndpoint
    from .report import ReportError, load_logs

    config = load_config(args.config)
    section = dict(config.get("judge") or {})
    endpoints = config.get("endpoints") or {}
    name = section.get("endpoint")
    if name not in endpoints:
        raise UsageError("judge.endpoint must name an entry under endpoints")
    try:
        endpoint = ModelEndpoint.from_dict(endpoints[name])
        records = load_logs(args.logs)
    except (ValueError, ReportError) as exc:
        raise UsageError(str(exc)) from exc
    power = args.power or section.get("power", "FRANCE")
    out = _out_dir(args, "judgments")
    if args.reliability:
        messages = [m for r in records for row in r.phases for m in outgoing_messages(row, power)]
        report = reliability_study(lambda t: judge_model(endpoint, t), messages, seed=args.seed or 0)
        (out / "reliability.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        print(json.dumps(report, sort_keys=True))
        return EXIT_OK
    judge = judge_model(endpoint, section.get("temperature", 0.1))
    all_judgments = []
    for record in records:
        judgments = track_promises(record, judge, power)
        write_judgments(judgments, out / f"{record.match_id or 'match'}.judgments.jsonl")
        all_judgments += judgments
    stats = betrayal_rates(*judged_pairs(all_judgments))
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diplobench", description="Diplomacy simulation and model-evaluation harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p: argparse.ArgumentParser, *flags: str) -> None:
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--parallel", type=int, help="concurrency cap")
        if "match" in flags:
            p.add_argument("--press", choices=["FULL", "NONE"], type=str.upper)
            p.add_argument("--max-year", type=int)
            p.add_argument("--rounds", type=int, help="negotiation rounds per movement phase")
        if "variant" in flags:
            p.add_argument("--variant", choices=["BASELINE", "V1", "V2", "V3"], type=str.upper)
        if "power" in flags:
            p.add_argument("--power", choices=POWERS, type=str.upper)
        if "depth" in flags:
            p.add_argument("--depth", type=int)

    p = sub.add_parser("run", help="play one match")
    common(p, "match", "variant")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="n seeded matches scoring one power")
    common(p, "match", "variant", "power")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("csa-capture", help="snapshot a logged match at a phase")
    common(p)
    p.add_argument("log")
    p.add_argument("phase")
    p.set_defaults(func=cmd_csa_capture)

    p = sub.add_parser("csa-replay", help="replay a snapshot's phase many times")
    common(p, "match", "variant", "power", "depth")
    p.add_argument("snapshot", nargs="?")
    p.set_defaults(func=cmd_csa_replay)

    p = sub.add_parser("csa-persuade", help="run the persuasion protocol on a snapshot")
    common(p, "match", "variant", "power", "depth")
    p.add_argument("snapshot", nargs="?")
    p.add_argument("--method", type=str.upper, choices=["REASON", "APOLOGY", "LIE", "EMPATHY", "FAIRNESS", "JAILBREAK"])
    p.set_defaults(func=cmd_csa_persuade)

    p = sub.add_parser("analyze", help="metrics tables from match logs")
    common(p, "power")
    p.add_argument("logs", nargs="+", help="log files or directories")
    p.add_argument("--judgments", nargs="*", help="judgment JSONL files to include")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("datc", help="run the bundled adjudicator test cases")
    p.set_defaults(func=cmd_datc)

    p = sub.add_parser("map-validate", help="check a map description file")
    p.add_argument("map")
    p.set_defaults(func=cmd_map_validate)

    p = sub.add_parser("judge", help="promise tracking over match logs")
    common(p, "power")
    p.add_argument("logs", nargs="+")
    p.add_argument("--reliability", action="store_true", help="re-judge a sample at several temperatures")
    p.set_defaults(func=cmd_judge)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort boundary for the process exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
