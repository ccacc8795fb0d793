"""CSV tables and a text summary built from a set of match logs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence, Union

from . import metrics
from .judges import BetrayalStats, FulfillmentRecord, PromiseRecord, betrayal_rates
from .mapgraph import POWERS
from .records import LogError, MatchRecord, log_schema

PathLike = Union[str, Path]


class ReportError(ValueError):
    pass


def collect_logs(inputs: Sequence[PathLike]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths += sorted(q for q in p.glob("*.jsonl") if not q.name.endswith(".judgments.jsonl"))
        elif p.exists():
            paths.append(p)
        else:
            raise ReportError(f"{p} does not exist")
    return paths


def load_logs(inputs: Sequence[PathLike]) -> list[MatchRecord]:
    paths = collect_logs(inputs)
    if not paths:
        raise ReportError("no match logs found")
    schemas = {str(p): log_schema(p) for p in paths}
    versions = sorted({str(v) for v in schemas.values()})
    if len(versions) > 1:
        raise ReportError(f"logs mix schema versions: {', '.join(versions)}")
    try:
        return [MatchRecord.load(p) for p in paths]
    except LogError as exc:
        raise ReportError(str(exc)) from exc


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def _load_betrayal(paths: Sequence[PathLike]) -> Optional[BetrayalStats]:
    promises: list[PromiseRecord] = []
    fulfillments: list[FulfillmentRecord] = []
    for path in paths:
        for line in Path(path).read_text().splitlines():
            row = json.loads(line)
            idx = row.get("primary_message_index")
            if idx is None or row.get("fulfillment") is None:
                continue
            p = next(p for p in row["promises"] if p["message_index"] == idx)
            promises.append(PromiseRecord(**p))
            f = dict(row["fulfillment"], promise_index=len(promises) - 1)
            f["warnings"] = tuple(f.get("warnings", ()))
            fulfillments.append(FulfillmentRecord(**f))
    return betrayal_rates(fulfillments, promises) if paths else None


def generate_report(
    inputs: Sequence[PathLike],
    out_dir: PathLike,
    power: str = "FRANCE",
    judgments: Sequence[PathLike] = (),
) -> dict:
    """Write scores, invalid rates, order mix, sentiment and aggression tables plus a summary.

    Returns the summary dictionary that is also written as summary.json.
    """
    if power not in POWERS:
        raise ReportError(f"unknown power {power!r}")
    records = load_logs(inputs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scores = [metrics.game_score(metrics.score_inputs(r, power)) for r in records]
    mean, ci = metrics.mean_ci95(scores)
    _write_csv(
        out / "scores.csv",
        ["match_id", "power", "score", "sc_at_end", "eliminated", "winner"],
        [
            [r.match_id, power, _fmt(s), r.summary["sc_counts"][power], r.summary["elimination_years"].get(power, ""), r.summary["winner"] or ""]
            for r, s in zip(records, scores)
        ],
    )

    rates = [metrics.invalid_order_rate(r, power) for r in records]
    _write_csv(
        out / "invalid_rates.csv",
        ["match_id", "invalid", "submitted", "rate"],
        [[r.match_id, x.invalid, x.submitted, _fmt(x.rate)] for r, x in zip(records, rates)],
    )
    by_units: dict[int, list[int]] = {}
    for x in rates:
        for n, (i, s) in x.by_unit_count.items():
            slot = by_units.setdefault(n, [0, 0])
            slot[0] += i
            slot[1] += s
    _write_csv(
        out / "invalid_by_units.csv",
        ["unit_count", "invalid", "submitted", "rate"],
        [[n, i, s, _fmt(i / s if s else None)] for n, (i, s) in sorted(by_units.items())],
    )

    dists = [metrics.order_distribution(r, power) for r in records]
    types = {t: sum(d.type_counts[t] for d in dists) for t in metrics.ACTION_TYPES}
    total = sum(types.values())
    outcomes: dict[str, int] = {}
    for d in dists:
        for k, v in d.outcome_counts.items():
            outcomes[k] = outcomes.get(k, 0) + v
    _write_csv(
        out / "order_distribution.csv",
        ["kind", "name", "count", "share"],
        [["type", t, c, _fmt(c / total if total else None)] for t, c in types.items()]
        + [["outcome", k, v, _fmt(v / total if total else None)] for k, v in sorted(outcomes.items())],
    )

    points = [pt for r in records for pt in metrics.incoming_sentiment_points(r, power)]
    per_size: dict[int, list[float]] = {}
    for size, value in points:
        per_size.setdefault(size, []).append(value)
    _write_csv(
        out / "sentiment.csv",
        ["military_size", "observations", "mean_incoming"],
        [[s, len(v), _fmt(sum(v) / len(v))] for s, v in sorted(per_size.items())],
    )

    _write_csv(
        out / "aggression.csv",
        ["match_id", "phase", "mean_aggression"],
        [[r.match_id, ph, _fmt(v)] for r in records for ph, v in metrics.aggression_series(r, power)],
    )

    betrayal = _load_betrayal(judgments)
    invalid_total = sum(x.invalid for x in rates)
    submitted_total = sum(x.submitted for x in rates)
    summary = {
        "matches": len(records),
        "power": power,
        "score_mean": mean,
        "score_ci95": list(ci) if ci else None,
        "invalid_rate": invalid_total / submitted_total if submitted_total else None,
        "order_shares": {t: (c / total if total else None) for t, c in types.items()},
        "betrayal": betrayal.to_dict() if betrayal else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    (out / "report.txt").write_text(render_text(records, scores, summary))
    return summary


def render_text(records: Sequence[MatchRecord], scores: Sequence[float], summary: dict) -> str:
    lines = [f"Matches: {summary['matches']}   power: {summary['power']}", "", "match_id            score"]
    lines += [f"{r.match_id or '-':<18} {s:6.1f}" for r, s in zip(records, scores)]
    ci = summary["score_ci95"]
    lines.append(f"mean {summary['score_mean']:.2f}" + (f"  95% CI [{ci[0]:.2f}, {ci[1]:.2f}]" if ci else "  (no CI for n=1)"))
    rate = summary["invalid_rate"]
    lines += ["", f"Invalid order rate: {'n/a' if rate is None else f'{rate:.3%}'}", "Order types:"]
    lines += [f"  {t:<8} {'n/a' if v is None else f'{v:.1%}'}" for t, v in summary["order_shares"].items()]
    b = summary["betrayal"]
    if b:
        overall = "n/a" if b["overall"] is None else f"{b['overall']:.1%}"
        lines += ["", f"Betrayal rate: {overall} of {b['promises']} judged promises"]
        lines += [f"  {t:<11} {'n/a' if v is None else f'{v:.1%}'}" for t, v in b["per_type"].items()]
    return "\n".join(lines) + "\n"


__all__ = ["ReportError", "collect_logs", "generate_report", "load_logs", "render_text"]
