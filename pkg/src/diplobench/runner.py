"""Match orchestration: negotiation rounds, diaries, orders, adjudication, logging.

Per-power model calls fan out to a thread pool and are merged back in the
canonical power order, so a match with deterministic models produces the
same log bytes every time regardless of thread scheduling.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .adjudicator import PhaseResolution, advance_phase, resolve_phase
from .agent import (
    AgentState,
    _defaults,
    CallPolicy,
    CallRecord,
    Message,
    decide_orders,
    legal_labels,
    new_agent,
    propose_messages,
    write_diary,
)
from .board import GameState, PhaseKind, initial_state
from .llm import (
    CallContext,
    ChatModel,
    HoldBot,
    HttpChatModel,
    ModelEndpoint,
    PersuaderBot,
    RandomLegalBot,
    SusceptibleBot,
    TokenUsage,
)
from .mapgraph import POWERS, MapGraph, standard_map
from .orders import OrderError, adjustment_delta, enumerate_possible_orders, parse_order
from .prompts import (
    PhaseOrders,
    Press,
    PromptConfig,
    render_diary_prompt,
    render_negotiation_prompt,
    render_order_prompt,
)
from .metrics import game_score, mean_ci95, score_inputs
from .records import MatchRecord, dump_line

log = logging.getLogger(__name__)

BUILTIN_BINDINGS = ("hold", "random", "random-chatty", "persuader", "susceptible")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    assignment: Mapping[str, str]
    negotiation_rounds: int = 3
    max_year: int = 1925
    press: Press = Press.FULL
    prompt_config: PromptConfig = PromptConfig()
    seed: int = 0
    output_path: Optional[str] = None
    message_limit: int = 6
    parallel: int = 7
    timeout_seconds: float = 30.0
    retries: int = 1
    failure_limit: int = 3
    endpoints: Mapping[str, ModelEndpoint] = field(default_factory=dict)
    match_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "press", Press(self.press))
        missing = [p for p in POWERS if p not in self.assignment]
        if missing:
            raise ConfigError(f"no model assigned to {', '.join(missing)}")
        extra = set(self.assignment) - set(POWERS)
        if extra:
            raise ConfigError(f"unknown powers in assignment: {sorted(extra)}")
        if self.negotiation_rounds < 0:
            raise ConfigError("negotiation_rounds must be >= 0")
        if (self.negotiation_rounds == 0) != (self.press is Press.NONE):
            raise ConfigError("negotiation_rounds is 0 exactly when press is NONE")
        if self.message_limit < 0 or self.parallel < 1 or self.retries < 0 or self.failure_limit < 1:
            raise ConfigError("message_limit, parallel, retries and failure_limit are out of range")
        for power, binding in self.assignment.items():
            if not isinstance(binding, str) or not binding:
                raise ConfigError(f"{power}: model binding must be a non-empty name")
        # the prompt layer reads press and max_year from its own config
        object.__setattr__(
            self, "prompt_config", replace(self.prompt_config, press=self.press, max_year=self.max_year)
        )

    @property
    def policy(self) -> CallPolicy:
        return CallPolicy(self.timeout_seconds, self.retries)

    def snapshot(self) -> dict:
        return {
            "assignment": {p: self.assignment[p] for p in POWERS},
            "negotiation_rounds": self.negotiation_rounds,
            "max_year": self.max_year,
            "press": self.press.value,
            "prompt_config": self.prompt_config.to_dict(),
            "seed": self.seed,
            "message_limit": self.message_limit,
            "timeout_seconds": self.timeout_seconds,
            "retries": self.retries,
            "failure_limit": self.failure_limit,
            "endpoints": {k: _endpoint_dict(v) for k, v in sorted(self.endpoints.items())},
            "match_id": self.match_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown match settings: {sorted(unknown)}")
        try:
            if "prompt_config" in d and not isinstance(d["prompt_config"], PromptConfig):
                d["prompt_config"] = PromptConfig.from_dict(d["prompt_config"] or {})
            if "endpoints" in d:
                d["endpoints"] = {k: ModelEndpoint.from_dict(v) for k, v in (d["endpoints"] or {}).items()}
            if "press" in d:
                d["press"] = Press(str(d["press"]).upper())
                if d["press"] is Press.NONE and "negotiation_rounds" not in d:
                    d["negotiation_rounds"] = 0
            assignment = d.get("assignment")
            if isinstance(assignment, str):
                d["assignment"] = {p: assignment for p in POWERS}
            elif isinstance(assignment, dict):
                default = assignment.get("default")
                d["assignment"] = {p: assignment.get(p, default) for p in POWERS if assignment.get(p, default)}
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _endpoint_dict(ep: ModelEndpoint) -> dict:
    return {f: getattr(ep, f) for f in ep.__dataclass_fields__}


def derive_seed(*parts) -> int:
    """A 63-bit seed from any tuple of values, stable across runs and platforms."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def build_model(binding: str, endpoints: Mapping[str, ModelEndpoint]) -> ChatModel:
    if binding == "hold":
        return HoldBot()
    if binding == "random":
        return RandomLegalBot()
    if binding == "random-chatty":
        return RandomLegalBot(chatty=True)
    if binding == "persuader":
        return PersuaderBot()
    if binding == "susceptible":
        return SusceptibleBot()
    if binding in endpoints:
        return HttpChatModel(endpoints[binding])
    raise ConfigError(f"no model for binding {binding!r}")


def resolve_models(config: MatchConfig, models: Optional[Mapping[str, ChatModel]] = None) -> dict[str, ChatModel]:
    """Model per power. ``models`` maps binding names (or power names) to instances."""
    models = dict(models or {})
    cache: dict[str, ChatModel] = {}
    out = {}
    for power in POWERS:
        binding = config.assignment[power]
        if power in models:
            out[power] = models[power]
        elif binding in models:
            out[power] = models[binding]
        else:
            if binding not in cache:
                cache[binding] = build_model(binding, config.endpoints)
            out[power] = cache[binding]
    return out


# -- one phase ---------------------------------------------------------------------


@dataclass
class PhaseResult:
    record: dict
    agents: dict[str, AgentState]
    resolution: PhaseResolution
    next_state: GameState
    usage: dict[str, TokenUsage]
    failed: dict[str, int]
    messages: list[Message]


def _prompted_powers(graph: MapGraph, state: GameState, benched: set[str]) -> list[str]:
    kind = state.phase_kind
    out = []
    for p in POWERS:
        if p in benched:
            continue
        if kind is PhaseKind.MOVEMENT and state.units_of(p):
            out.append(p)
        elif kind is PhaseKind.RETREAT and state.dislodged_of(p):
            out.append(p)
        elif kind is PhaseKind.ADJUSTMENT and enumerate_possible_orders(graph, state, p):
            out.append(p)
    return out


def _fan_out(pool, powers: Sequence[str], fn: Callable[[str], object]) -> dict[str, object]:
    futures = {p: pool.submit(fn, p) for p in powers}
    return {p: futures[p].result() for p in powers}


def _inbox(messages: Sequence[Message], power: str, round_no: int) -> list[Message]:
    return [m for m in messages if m.round == round_no and m.sender != power and m.visible_to(power)]


def play_phase(
    graph: MapGraph,
    config: MatchConfig,
    models: Mapping[str, ChatModel],
    state: GameState,
    agents: Mapping[str, AgentState],
    history: Sequence[PhaseOrders],
    seed: int,
    benched: Optional[set[str]] = None,
    injections: Optional[Mapping[str, str]] = None,
    pool: Optional[concurrent.futures.Executor] = None,
) -> PhaseResult:
    """Negotiate (movement phases with press), update diaries, collect orders, adjudicate."""
    benched = set(benched or ())
    injections = dict(injections or {})
    policy = config.policy
    pconf = config.prompt_config
    phase = state.phase
    agents = dict(agents)
    active = _prompted_powers(graph, state, benched)
    calls: dict[str, list[CallRecord]] = {p: [] for p in POWERS}
    own_pool = pool is None
    pool = pool or concurrent.futures.ThreadPoolExecutor(max_workers=config.parallel)
    alive = state.alive_powers()

    def ctx(power: str, purpose: str, *extra_key, **kw) -> CallContext:
        return CallContext(power, phase, purpose, derive_seed(seed, phase, power, purpose, *extra_key), **kw)

    try:
        messages: list[Message] = []
        rounds_log: list[list[dict]] = []
        diaries: dict[str, dict] = {}
        negotiate = state.phase_kind is PhaseKind.MOVEMENT and config.press is Press.FULL and config.negotiation_rounds > 0
        if negotiate:
            for r in range(1, config.negotiation_rounds + 1):
                def compose(power: str, r=r):
                    visible = [m for m in messages if m.visible_to(power)]
                    prompt = render_negotiation_prompt(
                        pconf, graph, state, agents[power], _inbox(messages, power, r - 1), visible, history,
                        injections.get(power, ""),
                    )
                    return propose_messages(
                        agents[power], prompt, r, config.message_limit,
                        model=models[power], context=ctx(power, "negotiation", r, extra={"alive": alive}), policy=policy,
                    )
                results = _fan_out(pool, active, compose)
                new = []
                for p in active:
                    sent, rec = results[p]
                    calls[p].append(rec)
                    new.extend(sent)
                messages.extend(new)  # delivered only after every power has spoken
                rounds_log.append([m.to_dict() for m in new])

            def diary(power: str):
                visible = [m for m in messages if m.visible_to(power)]
                prompt = render_diary_prompt(state, agents[power], visible, graph, pconf)
                return write_diary(agents[power], prompt, model=models[power], context=ctx(power, "diary"), policy=policy)

            results = _fan_out(pool, active, diary)
            for p in active:
                before = agents[p]
                after, warnings, rec = results[p]
                calls[p].append(rec)
                agents[p] = after
                entry = after.diary[-1].to_dict() if len(after.diary) > len(before.diary) else None
                diaries[p] = {"entry": entry, "warnings": warnings}

        legal = {p: enumerate_possible_orders(graph, state, p) for p in POWERS}

        def order(power: str):
            visible = [m for m in messages if m.visible_to(power)]
            prompt = render_order_prompt(pconf, graph, state, agents[power], visible, history)
            extra = {"phase_kind": state.phase_kind.value, "builds": adjustment_delta(state, power), "alive": alive}
            return decide_orders(
                agents[power], prompt, legal[power],
                model=models[power], context=ctx(power, "orders", legal=legal_labels(legal[power]), extra=extra),
                graph=graph, state=state, policy=policy,
            )

        decisions = _fan_out(pool, active, order)
    finally:
        if own_pool:
            pool.shutdown(wait=True)

    orders_by_power = {}
    invalid: dict[str, dict] = {}
    for p in POWERS:
        if p in decisions:
            d = decisions[p]
            calls[p].append(d.record)
            orders_by_power[p] = d.orders
            invalid[p] = d.to_dict()
        elif p in benched and state.phase_kind is not PhaseKind.ADJUSTMENT:
            orders_by_power[p], _ = _defaults(p, graph, state, legal[p], [])

    resolution = resolve_phase(graph, state, orders_by_power)
    next_state = advance_phase(graph, state, resolution)

    usage = {p: sum((c.usage for c in calls[p]), TokenUsage()) for p in POWERS}
    failed = {p: sum(1 for c in calls[p] if c.failed) for p in POWERS}
    record = {
        "type": "phase",
        "phase": phase,
        "state_digest": state.digest(),
        "next_digest": next_state.digest(),
        "messages": rounds_log,
        "diaries": diaries,
        "goals": {p: list(agents[p].goals) for p in POWERS},
        "orders": [
            {"power": r.power, "order": str(r.order), "outcome": r.outcome.value, "reason": r.reason}
            for r in resolution.outcomes
        ],
        "submissions": invalid,
        "relationships": {p: {q: int(v) for q, v in sorted(agents[p].relationships.items())} for p in POWERS},
        "usage": {
            p: {**usage[p].to_dict(), "calls": sum(c.attempts for c in calls[p]), "failed_turns": failed[p]}
            for p in POWERS
        },
        "unit_counts": {p: len(state.units_of(p)) for p in POWERS},
        "sc_counts": state.sc_counts(),
        "notes": list(resolution.notes),
    }
    return PhaseResult(record, agents, resolution, next_state, usage, failed, messages)


def phase_orders(record: dict) -> PhaseOrders:
    return PhaseOrders(record["phase"], tuple((o["power"], o["order"], o["outcome"]) for o in record["orders"]))


# -- whole matches -----------------------------------------------------------------


class _LogWriter:
    def __init__(self, path: Optional[str]):
        self._fh = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")

    def write(self, obj: dict) -> None:
        if self._fh:
            self._fh.write(dump_line(obj))
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def run_match(
    config: MatchConfig,
    models: Optional[Mapping[str, ChatModel]] = None,
    graph: Optional[MapGraph] = None,
    progress: Optional[Callable[[str], None]] = None,
    start_state: Optional[GameState] = None,
) -> MatchRecord:
    """Play from ``start_state`` (default: the standard opening) until a win or the last year."""
    graph = graph or standard_map()
    resolved = resolve_models(config, models)
    state = start_state or initial_state(graph)
    agents = {p: new_agent(p, config.assignment[p]) for p in POWERS}
    record = MatchRecord(config=config.snapshot(), start_state=start_state.to_dict() if start_state else None)
    writer = _LogWriter(config.output_path)
    writer.write(record.header())
    history: list[PhaseOrders] = []
    benched: set[str] = set()
    strikes = {p: 0 for p in POWERS}
    eliminated: dict[str, int] = {}
    win_year = None
    total = {p: TokenUsage() for p in POWERS}
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=config.parallel)
    try:
        while state.year <= config.max_year and state.winner is None:
            result = play_phase(
                graph, config, resolved, state, agents, history,
                derive_seed(config.seed, "match"), benched, pool=pool,
            )
            for p in POWERS:
                total[p] = total[p] + result.usage[p]
                strikes[p] = strikes[p] + 1 if result.failed[p] else 0
                if strikes[p] >= config.failure_limit and p not in benched:
                    benched.add(p)
                    result.record["notes"].append(f"{p} stopped responding; playing defaults from now on")
                    log.warning("%s benched after %d failed turns", p, strikes[p])
            record.phases.append(result.record)
            writer.write(result.record)
            if progress:
                progress(result.record["phase"])
            if state.phase_kind is PhaseKind.MOVEMENT:
                history.append(phase_orders(result.record))
            nxt = result.next_state
            for p in POWERS:
                if p not in eliminated and nxt.is_eliminated(p):
                    eliminated[p] = state.year
            if nxt.winner and win_year is None:
                win_year = state.year
            agents, state = result.agents, nxt
        record.summary = {
            "type": "summary",
            "final_phase": state.phase,
            "final_digest": state.digest(),
            "final_year": state.year if state.winner else min(state.year, config.max_year),
            "winner": state.winner,
            "win_year": win_year,
            "sc_counts": state.sc_counts(),
            "unit_counts": {p: len(state.units_of(p)) for p in POWERS},
            "survivors": [p for p in POWERS if p not in eliminated],
            "elimination_years": dict(sorted(eliminated.items())),
            "benched": sorted(benched),
            "usage": {p: total[p].to_dict() for p in POWERS},
        }
        writer.write(record.summary)
    finally:
        pool.shutdown(wait=True)
        writer.close()
    return record


def _start(record: MatchRecord, graph: MapGraph) -> GameState:
    return GameState.from_dict(record.start_state) if record.start_state else initial_state(graph)


def replay_log(record: MatchRecord, graph: Optional[MapGraph] = None) -> list[str]:
    """Re-adjudicate a log from its starting board; returns every digest mismatch found."""
    graph = graph or standard_map()
    state = _start(record, graph)
    problems = []
    for row in record.phases:
        if row["phase"] != state.phase:
            problems.append(f"expected phase {state.phase}, log has {row['phase']}")
            break
        if row["state_digest"] != state.digest():
            problems.append(f"{row['phase']}: state digest {state.digest()} != logged {row['state_digest']}")
        orders: dict[str, list] = {}
        for o in row["orders"]:
            try:
                orders.setdefault(o["power"], []).append(parse_order(o["order"], o["power"], state, graph))
            except OrderError as exc:
                problems.append(f"{row['phase']}: cannot parse logged order {o['order']!r}: {exc}")
        resolution = resolve_phase(graph, state, orders)
        logged = [(o["power"], o["order"], o["outcome"]) for o in row["orders"]]
        replayed = [(r.power, str(r.order), r.outcome.value) for r in resolution.outcomes]
        if logged != replayed:
            problems.append(f"{row['phase']}: outcomes differ on replay")
        state = advance_phase(graph, state, resolution)
        if row["next_digest"] != state.digest():
            problems.append(f"{row['phase']}: next digest {state.digest()} != logged {row['next_digest']}")
    if record.summary and record.summary["final_digest"] != state.digest():
        problems.append("final digest does not match the replayed state")
    return problems


def state_before(record: MatchRecord, phase: str, graph: Optional[MapGraph] = None) -> GameState:
    """The board at the start of ``phase``, rebuilt by replaying the log."""
    graph = graph or standard_map()
    state = _start(record, graph)
    for row in record.phases:
        if row["phase"] == phase:
            if row["state_digest"] != state.digest():
                raise ValueError(f"log is inconsistent at {phase}")
            return state
        orders: dict[str, list] = {}
        for o in row["orders"]:
            orders.setdefault(o["power"], []).append(parse_order(o["order"], o["power"], state, graph))
        state = advance_phase(graph, state, resolve_phase(graph, state, orders))
    if record.summary and state.phase == phase:
        return state
    raise KeyError(f"phase {phase} is not in the log")


# -- benchmark ---------------------------------------------------------------------


@dataclass
class BenchmarkResult:
    records: list[MatchRecord]
    scores: list[float]
    mean: float
    ci95: Optional[tuple[float, float]]
    evaluated_power: str


def run_benchmark(
    model_binding: str,
    n: int = 20,
    evaluated_power: str = "FRANCE",
    opponent_binding: str = "random",
    base: Optional[MatchConfig] = None,
    models: Optional[Mapping[str, ChatModel]] = None,
    out_dir: Optional[str] = None,
    parallel_matches: int = 1,
    graph: Optional[MapGraph] = None,
) -> BenchmarkResult:
    if n < 1:
        raise ValueError("n must be at least 1")
    if evaluated_power not in POWERS:
        raise ValueError(f"unknown power {evaluated_power}")
    assignment = {p: opponent_binding for p in POWERS}
    assignment[evaluated_power] = model_binding
    base = base or MatchConfig(assignment=assignment)

    def one(seed: int) -> MatchRecord:
        out = str(Path(out_dir) / f"match_{seed:03d}.jsonl") if out_dir else None
        cfg = replace(base, assignment=assignment, seed=seed, output_path=out, match_id=f"bench-{seed:03d}")
        return run_match(cfg, models, graph)

    seeds = range(1, n + 1)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, parallel_matches)) as matches:
        records = list(matches.map(one, seeds))
    scores = [game_score(score_inputs(r, evaluated_power)) for r in records]
    mean, ci = mean_ci95(scores)
    return BenchmarkResult(records, scores, mean, ci, evaluated_power)


__all__ = [
    "BenchmarkResult",
    "ConfigError",
    "MatchConfig",
    "PhaseResult",
    "build_model",
    "derive_seed",
    "mean_ci95",
    "phase_orders",
    "play_phase",
    "replay_log",
    "resolve_models",
    "run_benchmark",
    "run_match",
    "state_before",
]
