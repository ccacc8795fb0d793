"""Loader and runner for the bundled DATC conformance corpus.

Each case is a block of text::

    CASE 6.A.11 Simple bounce
    UNITS
    AUSTRIA A VIE
    ITALY A VEN
    ORDERS
    AUSTRIA: A VIE - TYR
    ITALY: A VEN - TYR
    EXPECT
    AUSTRIA: A VIE - TYR = FAIL
    DISLODGED
    CONTESTED TYR
    END

EXPECT outcomes are OrderOutcome names or FAIL (anything but SUCCESS).
DISLODGED lists every unit expected to be dislodged (an empty section means
none). CONTESTED, when present, lists the exact standoff provinces; "-"
means none.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .adjudicator import OrderOutcome, resolve_movement
from .board import custom_state
from .mapgraph import MapGraph, standard_map
from .orders import OrderError, parse_order


@dataclass
class DatcCase:
    case_id: str
    title: str
    units: dict[str, list[str]] = field(default_factory=dict)
    orders: list[tuple[str, str]] = field(default_factory=list)
    expect: list[tuple[str, str, str]] = field(default_factory=list)
    dislodged: Optional[list[str]] = None
    contested: Optional[list[str]] = None

    @property
    def section(self) -> str:
        return ".".join(self.case_id.split(".")[:2])


@dataclass
class CaseResult:
    case: DatcCase
    passed: bool
    problems: list[str]


class CorpusError(ValueError):
    pass


def parse_corpus(text: str) -> list[DatcCase]:
    cases: list[DatcCase] = []
    case: Optional[DatcCase] = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0]
        if head == "CASE":
            if case is not None:
                raise CorpusError(f"line {lineno}: CASE inside an open case")
            parts = line.split(maxsplit=2)
            case = DatcCase(parts[1], parts[2] if len(parts) > 2 else "")
            section = None
            continue
        if case is None:
            raise CorpusError(f"line {lineno}: text outside a case")
        if head == "END":
            cases.append(case)
            case = None
            continue
        if head in ("UNITS", "ORDERS", "EXPECT") and line == head:
            section = head
            continue
        if head == "DISLODGED" and line == head:
            section = head
            case.dislodged = []
            continue
        if head == "CONTESTED":
            rest = line.split()[1:]
            case.contested = [] if rest == ["-"] else sorted(rest)
            continue
        if section == "UNITS":
            power, spec = line.split(maxsplit=1)
            case.units.setdefault(power, []).append(spec)
        elif section == "ORDERS":
            power, _, order = line.partition(":")
            case.orders.append((power.strip(), order.strip()))
        elif section == "EXPECT":
            left, _, outcome = line.rpartition("=")
            power, _, order = left.partition(":")
            case.expect.append((power.strip(), order.strip(), outcome.strip()))
        elif section == "DISLODGED":
            case.dislodged.append(" ".join(line.split()))
        else:
            raise CorpusError(f"line {lineno}: unexpected {line!r}")
    if case is not None:
        raise CorpusError(f"case {case.case_id} is missing END")
    return cases


def load_corpus() -> list[DatcCase]:
    cases = []
    folder = resources.files("diplobench.data").joinpath("datc")
    for entry in sorted(folder.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            cases.extend(parse_corpus(entry.read_text()))
    return cases


def run_case(case: DatcCase, graph: Optional[MapGraph] = None) -> CaseResult:
    graph = graph or standard_map()
    state = custom_state(case.units)
    orders: dict[str, list] = {}
    outcome_by_text: dict[tuple[str, str], str] = {}
    parsed = []
    for power, text in case.orders:
        try:
            order = parse_order(text, power, state, graph)
        except OrderError:
            outcome_by_text[(power, _norm(text))] = OrderOutcome.INVALID.value
            continue
        orders.setdefault(power, []).append(order)
        parsed.append((power, text, order))
    resolution = resolve_movement(graph, state, orders)
    for power, text, order in parsed:
        outcome = next(r.outcome for r in resolution.outcomes if r.order is order)
        outcome_by_text[(power, _norm(text))] = outcome.value

    problems = []
    for power, text, want in case.expect:
        got = outcome_by_text.get((power, _norm(text)))
        if got is None:
            problems.append(f"no order {power}: {text}")
        elif want == "FAIL":
            if got == OrderOutcome.SUCCESS.value:
                problems.append(f"{power}: {text} expected to fail, got SUCCESS")
        elif got != want:
            problems.append(f"{power}: {text} expected {want}, got {got}")
    if case.dislodged is not None:
        got_d = sorted(f"{d.unit.power} {d.unit}" for d in resolution.next_state.dislodged)
        want_d = sorted(case.dislodged)
        if got_d != want_d:
            problems.append(f"dislodged {got_d}, expected {want_d}")
    if case.contested is not None:
        got_c = sorted(resolution.next_state.contested)
        if got_c != case.contested:
            problems.append(f"contested {got_c}, expected {case.contested}")
    return CaseResult(case, not problems, problems)


def _norm(text: str) -> str:
    return " ".join(text.upper().split())


@dataclass
class CorpusReport:
    results: list[CaseResult]
    seconds: float

    def pass_rate(self, prefixes: tuple[str, ...]) -> float:
        chosen = [r for r in self.results if r.case.section in prefixes]
        if not chosen:
            return 0.0
        return sum(r.passed for r in chosen) / len(chosen)

    @property
    def failures(self) -> list[CaseResult]:
        return [r for r in self.results if not r.passed]


MANDATORY_SECTIONS = ("6.A", "6.B", "6.C", "6.D", "6.E")
CONVOY_SECTIONS = ("6.F", "6.G")


def run_corpus(cases: Optional[list[DatcCase]] = None) -> CorpusReport:
    start = time.perf_counter()
    graph = standard_map()
    results = [run_case(c, graph) for c in (cases if cases is not None else load_corpus())]
    return CorpusReport(results, time.perf_counter() - start)


def conformance_ok(report: CorpusReport) -> bool:
    return report.pass_rate(MANDATORY_SECTIONS) == 1.0 and report.pass_rate(CONVOY_SECTIONS) >= 0.95
