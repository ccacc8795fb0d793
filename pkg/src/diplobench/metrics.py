"""Quantitative measures over match logs."""

from __future__ import annotations

import logging
import math
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .mapgraph import POWERS
from .records import MatchRecord

log = logging.getLogger(__name__)

START_YEAR = 1901
WIN_CENTERS = 18
TOTAL_CENTERS = 34


class DegenerateVariance(ValueError):
    pass


# -- game score --------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreInputs:
    y_max: int
    sc_at_end: int
    y_elim: Optional[int] = None
    y_win: Optional[int] = None
    start_year: int = START_YEAR

    def __post_init__(self):
        if self.y_elim is not None and self.y_win is not None:
            raise ValueError("a power cannot both win and be eliminated")
        if not 0 <= self.sc_at_end <= TOTAL_CENTERS:
            raise ValueError(f"sc_at_end must be within 0..{TOTAL_CENTERS}")
        if self.y_elim is not None and self.sc_at_end != 0:
            raise ValueError("an eliminated power ends with 0 centers")
        if self.y_win is not None and self.sc_at_end < WIN_CENTERS:
            raise ValueError(f"a winner holds at least {WIN_CENTERS} centers")
        for y in (self.y_max, self.y_elim, self.y_win):
            if y is not None and y < self.start_year:
                raise ValueError(f"year {y} precedes the start year {self.start_year}")
        if self.y_win is not None and self.y_win > self.y_max:
            raise ValueError("win year lies after the last playable year")


def elapsed(year: int, start_year: int = START_YEAR) -> int:
    return year - (start_year - 1)


def game_score(inputs: ScoreInputs) -> float:
    """Years survived (elapsed, capped at the last year) + final centers + early-win bonus."""
    alive = elapsed(inputs.y_max, inputs.start_year)
    if inputs.y_elim is not None:
        alive = min(alive, elapsed(inputs.y_elim, inputs.start_year))
    bonus = inputs.y_max - inputs.y_win if inputs.y_win is not None else 0
    return float(alive + inputs.sc_at_end + bonus)


def score_inputs(record: MatchRecord, power: str) -> ScoreInputs:
    summary = record.summary
    if summary is None:
        raise ValueError("match log has no summary line")
    won = summary.get("winner") == power
    return ScoreInputs(
        y_max=record.config["max_year"],
        sc_at_end=summary["sc_counts"][power],
        y_elim=summary["elimination_years"].get(power),
        y_win=summary["win_year"] if won else None,
    )


# -- orders ------------------------------------------------------------------------


@dataclass
class InvalidRate:
    rate: Optional[float]
    invalid: int
    submitted: int
    by_unit_count: dict[int, tuple[int, int]]  # unit count -> (invalid, submitted)

    def series(self) -> dict[int, Optional[float]]:
        return {n: (i / s if s else None) for n, (i, s) in sorted(self.by_unit_count.items())}


def invalid_order_rate(record: MatchRecord, power: str) -> InvalidRate:
    """Rejected entries over submitted entries in the submissions actually used.

    Turns where the model never produced a usable submission contribute to
    neither count.
    """
    if power not in POWERS:
        raise ValueError(f"unknown power {power!r}")
    invalid = submitted = 0
    by_units: dict[int, list[int]] = {}
    for row in record.phases:
        sub = row.get("submissions", {}).get(power)
        if not sub or not sub["submitted"]:
            continue
        invalid += sub["invalid_count"]
        submitted += sub["submitted"]
        slot = by_units.setdefault(row["unit_counts"][power], [0, 0])
        slot[0] += sub["invalid_count"]
        slot[1] += sub["submitted"]
    return InvalidRate(
        invalid / submitted if submitted else None,
        invalid,
        submitted,
        {n: (v[0], v[1]) for n, v in sorted(by_units.items())},
    )


ACTION_TYPES = ("hold", "move", "support", "convoy", "other")

_ACTION_PATTERNS = (
    ("support", re.compile(r"^[AF] \S+ S ")),
    ("convoy", re.compile(r"^[AF] \S+ C ")),
    ("move", re.compile(r"^[AF] \S+ - ")),
    ("hold", re.compile(r"^[AF] \S+ H$")),
)


def action_type(order_text: str) -> str:
    for name, pattern in _ACTION_PATTERNS:
        if pattern.match(order_text):
            return name
    return "other"


@dataclass
class OrderStats:
    type_counts: dict[str, int] = field(default_factory=lambda: {t: 0 for t in ACTION_TYPES})
    outcome_counts: dict[str, int] = field(default_factory=dict)
    invalid_by_phase: list[tuple[str, int, int]] = field(default_factory=list)  # (phase, invalid, units)

    @property
    def total(self) -> int:
        return sum(self.type_counts.values())

    def shares(self) -> dict[str, Optional[float]]:
        total = self.total
        return {t: (c / total if total else None) for t, c in self.type_counts.items()}


def order_distribution(record: MatchRecord, power: str) -> OrderStats:
    """Order types and outcomes over movement phases."""
    stats = OrderStats()
    outcomes: Counter = Counter()
    for row in record.phases:
        if not row["phase"].endswith("M"):
            continue
        for o in row["orders"]:
            if o["power"] != power:
                continue
            stats.type_counts[action_type(o["order"])] += 1
            outcomes[o["outcome"]] += 1
        sub = row.get("submissions", {}).get(power)
        if sub is not None:
            stats.invalid_by_phase.append((row["phase"], sub["invalid_count"], row["unit_counts"][power]))
    stats.outcome_counts = dict(sorted(outcomes.items()))
    return stats


# -- relationships -----------------------------------------------------------------


def _powers_for(record: MatchRecord, model: str) -> list[str]:
    return [p for p in POWERS if record.config["assignment"][p] == model]


def incoming_sentiment_points(record: MatchRecord, power: str) -> list[tuple[int, float]]:
    """(unit count, mean relationship of the other live powers toward ``power``) per phase."""
    points = []
    for row in record.phases:
        size = row["unit_counts"][power]
        if size < 1:
            continue
        others = [q for q in POWERS if q != power and (row["unit_counts"][q] or row["sc_counts"][q])]
        if not others:
            continue
        points.append((size, statistics.fmean(row["relationships"][q][power] for q in others)))
    return points


def relative_incoming_sentiment(
    records: Mapping[str, Sequence[MatchRecord]], power: Optional[str] = None
) -> dict[str, Optional[float]]:
    """Per model: incoming sentiment minus the cross-model mean at the same military size, averaged over sizes.

    Each record contributes the powers bound to the model (or ``power`` if
    given). A model that shares no size with any other model gets None.
    """
    if not records:
        raise ValueError("need at least one model")
    by_size: dict[str, dict[int, list[float]]] = {}
    for model, recs in records.items():
        if not recs:
            raise ValueError(f"model {model!r} has no records")
        sizes: dict[int, list[float]] = {}
        for rec in recs:
            powers = [power] if power else _powers_for(rec, model)
            if not powers:
                raise ValueError(f"model {model!r} plays no power in match {rec.match_id!r}")
            for p in powers:
                for size, value in incoming_sentiment_points(rec, p):
                    sizes.setdefault(size, []).append(value)
        by_size[model] = sizes
    means = {m: {s: statistics.fmean(v) for s, v in sizes.items()} for m, sizes in by_size.items()}
    out: dict[str, Optional[float]] = {}
    for model, sizes in means.items():
        diffs = []
        for s, value in sizes.items():
            peers = [means[m][s] for m in means if s in means[m]]
            if len(means) > 1 and len(peers) < 2:
                continue  # nothing to compare with at this size
            diffs.append(value - statistics.fmean(peers))
        out[model] = statistics.fmean(diffs) if diffs else None
    return out


# -- aggression --------------------------------------------------------------------

AGGRESSIVE_WORDS = frozenset(
    """
    attack attacking crush crushing destroy destruction threat threaten warn warning war invade
    invasion betray betrayal punish retaliate retaliation enemy hostile annihilate eliminate
    strike seize demand ultimatum regret consequences dominate conquer smash
    """.split()
)

_WORD = re.compile(r"[a-z']+")


def lexicon_aggression(text: str) -> float:
    """Share of words found in a small hostile-word list, scaled by 4 and capped at 1.

    A stand-in for a trained emotion classifier; transparent enough to
    compute by hand in tests.
    """
    words = _WORD.findall(text.lower())
    if not words:
        return 0.0
    hits = sum(1 for w in words if w in AGGRESSIVE_WORDS)
    return min(1.0, 4.0 * hits / len(words))


def aggression_series(
    record: MatchRecord, power: str, classifier: Callable[[str], float] = lexicon_aggression
) -> list[tuple[str, float]]:
    """Mean classifier score of the power's outgoing messages, per movement phase that has any."""
    out = []
    for row in record.phases:
        scores = []
        for rnd in row.get("messages", []):
            for m in rnd:
                if m["sender"] != power:
                    continue
                try:
                    scores.append(float(classifier(m["content"])))
                except Exception as exc:  # noqa: BLE001 - any classifier failure skips the message
                    log.warning("classifier failed on a %s message in %s: %s", power, row["phase"], exc)
        if scores:
            out.append((row["phase"], statistics.fmean(scores)))
    return out


# -- statistics --------------------------------------------------------------------


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError("xs and ys differ in length")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        raise DegenerateVariance("one of the series is constant")
    r = statistics.correlation(xs, ys)
    return max(-1.0, min(1.0, r))


def mean_ci95(values: Sequence[float]) -> tuple[float, Optional[tuple[float, float]]]:
    """Mean and normal-approximation 95% interval; None for fewer than two values."""
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, None
    half = 1.96 * statistics.stdev(values) / math.sqrt(len(values))
    return mean, (mean - half, mean + half)


__all__ = [
    "ACTION_TYPES",
    "AGGRESSIVE_WORDS",
    "DegenerateVariance",
    "InvalidRate",
    "OrderStats",
    "ScoreInputs",
    "action_type",
    "aggression_series",
    "elapsed",
    "game_score",
    "incoming_sentiment_points",
    "invalid_order_rate",
    "lexicon_aggression",
    "mean_ci95",
    "order_distribution",
    "pearson_r",
    "relative_incoming_sentiment",
    "score_inputs",
]
