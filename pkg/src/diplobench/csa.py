"""Critical State Analysis: snapshot one phase of a match and replay it many times.

A replay runs only the captured phase (negotiation, diaries, orders,
adjudication). Trials start from the same intervened snapshot and never
feed into each other.
"""

from __future__ import annotations

import concurrent.futures
import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .agent import AgentState, DiaryEntry, RelationshipLevel, new_agent
from .board import GameState, initial_state
from .llm import ChatModel, TokenUsage
from .mapgraph import POWERS, MapGraph, standard_map
from .prompts import PERSUASION_METHODS, PhaseOrders, PromptConfig, persuasion_mission
from .records import MatchRecord
from .runner import MatchConfig, derive_seed, phase_orders, play_phase, resolve_models, state_before

SNAPSHOT_VERSION = "diplobench.snapshot/1"


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    state: GameState
    agents: Mapping[str, AgentState]
    prompt_config: PromptConfig
    match_config: dict
    history: tuple[PhaseOrders, ...] = ()
    source_match: str = ""
    source_phase: str = ""
    version: str = SNAPSHOT_VERSION

    def __post_init__(self):
        if set(self.agents) != set(POWERS):
            raise SnapshotError("a snapshot needs all seven agents")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "state": self.state.to_dict(),
            "agents": {p: self.agents[p].to_dict() for p in POWERS},
            "prompt_config": self.prompt_config.to_dict(),
            "match_config": self.match_config,
            "history": [{"phase": h.phase, "orders": [list(o) for o in h.orders]} for h in self.history],
            "provenance": {"match_id": self.source_match, "phase": self.source_phase},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Snapshot":
        version = d.get("version")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version!r} (expected {SNAPSHOT_VERSION})")
        return cls(
            state=GameState.from_dict(d["state"]),
            agents={p: AgentState.from_dict(a) for p, a in d["agents"].items()},
            prompt_config=PromptConfig.from_dict(d["prompt_config"]),
            match_config=d["match_config"],
            history=tuple(PhaseOrders(h["phase"], tuple(tuple(o) for o in h["orders"])) for h in d["history"]),
            source_match=d["provenance"]["match_id"],
            source_phase=d["provenance"]["phase"],
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Snapshot":
        return cls.from_dict(json.loads(Path(path).read_text()))


def capture_snapshot(source: Union[MatchRecord, str, Path], phase: str, graph: Optional[MapGraph] = None) -> Snapshot:
    """Rebuild the board and every agent's mind as they stood when ``phase`` began."""
    record = source if isinstance(source, MatchRecord) else MatchRecord.load(source)
    graph = graph or standard_map()
    try:
        state = state_before(record, phase, graph)
    except KeyError as exc:
        raise SnapshotError(f"phase {phase} is not in the log") from exc
    except ValueError as exc:
        raise SnapshotError(str(exc)) from exc
    assignment = record.config["assignment"]
    agents = {p: new_agent(p, assignment[p]) for p in POWERS}
    diaries: dict[str, list[DiaryEntry]] = {p: [] for p in POWERS}
    history = []
    for row in record.phases:
        if row["phase"] == phase:
            break
        for p, d in row.get("diaries", {}).items():
            if d.get("entry"):
                diaries[p].append(DiaryEntry.from_dict(d["entry"]))
        for p in POWERS:
            agents[p] = replace(
                agents[p],
                goals=tuple(row["goals"][p]),
                relationships={q: RelationshipLevel(v) for q, v in row["relationships"][p].items()},
                diary=tuple(diaries[p]),
            )
        if row["phase"].endswith("M"):
            history.append(phase_orders(row))
    config = dict(record.config)
    return Snapshot(
        state=state,
        agents=agents,
        prompt_config=PromptConfig.from_dict(config["prompt_config"]),
        match_config=config,
        history=tuple(history),
        source_match=config.get("match_id", ""),
        source_phase=phase,
    )


def snapshot_opening(config: MatchConfig, graph: Optional[MapGraph] = None) -> Snapshot:
    """A snapshot of a fresh match at its first phase."""
    graph = graph or standard_map()
    return Snapshot(
        state=initial_state(graph),
        agents={p: new_agent(p, config.assignment[p]) for p in POWERS},
        prompt_config=config.prompt_config,
        match_config=config.snapshot(),
        source_match=config.match_id,
        source_phase="S1901M",
    )


@dataclass(frozen=True)
class Intervention:
    relationship_overrides: tuple[tuple[str, str, RelationshipLevel], ...] = ()
    prompt_injections: Mapping[str, str] = field(default_factory=dict)
    model_substitutions: Mapping[str, str] = field(default_factory=dict)
    method: Optional[str] = None

    def __post_init__(self):
        pairs = [(p, q) for p, q, _ in self.relationship_overrides]
        if len(pairs) != len(set(pairs)):
            raise ValueError("relationship overrides must name distinct (power, toward) pairs")
        for p, q in pairs:
            if p not in POWERS or q not in POWERS or p == q:
                raise ValueError(f"bad override pair {p} -> {q}")
        if self.method is not None and self.method.upper() not in PERSUASION_METHODS:
            raise ValueError(f"unknown persuasion method {self.method!r}")

    def to_dict(self) -> dict:
        return {
            "relationship_overrides": [[p, q, int(v)] for p, q, v in self.relationship_overrides],
            "prompt_injections": dict(sorted(self.prompt_injections.items())),
            "model_substitutions": dict(sorted(self.model_substitutions.items())),
            "method": self.method,
        }


def apply_intervention(snapshot: Snapshot, intervention: Intervention) -> Snapshot:
    agents = dict(snapshot.agents)
    for power, toward, level in intervention.relationship_overrides:
        agents[power] = agents[power].with_relationship(toward, RelationshipLevel(level))
    config = dict(snapshot.match_config)
    if intervention.model_substitutions:
        assignment = dict(config["assignment"])
        assignment.update(intervention.model_substitutions)
        config["assignment"] = assignment
        for p, binding in intervention.model_substitutions.items():
            agents[p] = replace(agents[p], model_binding=binding)
    return replace(snapshot, agents=agents, match_config=config)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    messages: list[dict]
    relationships: dict[str, dict[str, int]]
    relationship_deltas: dict[str, dict[str, int]]
    orders: list[dict]
    usage: dict[str, TokenUsage]
    failures: dict[str, int]

    @property
    def total_usage(self) -> TokenUsage:
        return sum(self.usage.values(), TokenUsage())

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "messages": self.messages,
            "relationships": self.relationships,
            "relationship_deltas": self.relationship_deltas,
            "orders": self.orders,
            "usage": {p: u.to_dict() for p, u in self.usage.items()},
            "failures": self.failures,
        }


def replay_phase(
    snapshot: Snapshot,
    intervention: Intervention = Intervention(),
    depth: int = 30,
    models: Optional[Mapping[str, ChatModel]] = None,
    seed: int = 0,
    parallel_trials: int = 4,
    graph: Optional[MapGraph] = None,
) -> list[TrialRecord]:
    """Run ``depth`` independent trials of the snapshot's phase under ``intervention``."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    graph = graph or standard_map()
    snap = apply_intervention(snapshot, intervention)
    config = MatchConfig.from_dict({**snap.match_config, "output_path": None})
    config = replace(config, prompt_config=snap.prompt_config)
    resolved = resolve_models(config, models)
    baseline = {p: {q: int(v) for q, v in snap.agents[p].relationships.items()} for p in POWERS}

    def trial(i: int) -> TrialRecord:
        trial_seed = derive_seed(seed, "trial", i)
        result = play_phase(
            graph, config, resolved, snap.state, snap.agents, snap.history, trial_seed,
            injections=intervention.prompt_injections,
        )
        after = result.record["relationships"]
        return TrialRecord(
            trial=i,
            seed=trial_seed,
            messages=[m.to_dict() for m in result.messages],
            relationships=after,
            relationship_deltas={p: {q: after[p][q] - baseline[p][q] for q in sorted(baseline[p])} for p in POWERS},
            orders=result.record["orders"],
            usage=result.usage,
            failures=result.failed,
        )

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, parallel_trials)) as pool:
        return list(pool.map(trial, range(depth)))


# -- persuasion --------------------------------------------------------------------


@dataclass
class PersuasionStats:
    method: str
    persuader: str
    depth: int
    success_rate: float  # over (trial, persuadee) pairs
    mean_magnitude: float  # per pair, 0-4
    per_power_success: dict[str, float]
    per_power_magnitude: dict[str, float]
    trial_sum_magnitude: list[int]  # summed over persuadees, per trial
    trial_max_magnitude: list[int]
    trials: list[TrialRecord]

    def summary(self) -> dict:
        return {
            "method": self.method,
            "persuader": self.persuader,
            "depth": self.depth,
            "success_rate": self.success_rate,
            "mean_magnitude": self.mean_magnitude,
            "per_power_success": self.per_power_success,
            "per_power_magnitude": self.per_power_magnitude,
            "mean_trial_sum_magnitude": statistics.fmean(self.trial_sum_magnitude),
            "mean_trial_max_magnitude": statistics.fmean(self.trial_max_magnitude),
        }


def persuasion_intervention(snapshot: Snapshot, method: str, persuader: str, binding: Optional[str] = None) -> Intervention:
    state = snapshot.state
    mission = persuasion_mission(method, persuader, len(state.centers_of(persuader)), len(state.units_of(persuader)))
    overrides = tuple((p, persuader, RelationshipLevel.ENEMY) for p in POWERS if p != persuader)
    return Intervention(
        relationship_overrides=overrides,
        prompt_injections={persuader: mission},
        model_substitutions={persuader: binding} if binding else {},
        method=method.upper(),
    )


def shift_magnitude(delta: int) -> int:
    """Points moved away from Enemy; a persuadee starts at the bottom of the scale."""
    return max(0, delta)


def run_persuasion_experiment(
    snapshot: Snapshot,
    method: str,
    persuader: str,
    binding: Optional[str] = None,
    depth: int = 20,
    models: Optional[Mapping[str, ChatModel]] = None,
    seed: int = 0,
    parallel_trials: int = 4,
    graph: Optional[MapGraph] = None,
) -> PersuasionStats:
    method = method.upper()
    if method not in PERSUASION_METHODS:
        raise ValueError(f"unknown persuasion method {method!r}")
    if persuader not in POWERS:
        raise ValueError(f"unknown power {persuader!r}")
    intervention = persuasion_intervention(snapshot, method, persuader, binding)
    trials = replay_phase(snapshot, intervention, depth, models, seed, parallel_trials, graph)
    persuadees = [p for p in POWERS if p != persuader]
    mags = {p: [shift_magnitude(t.relationship_deltas[p][persuader]) for t in trials] for p in persuadees}
    pairs = [m for p in persuadees for m in mags[p]]
    return PersuasionStats(
        method=method,
        persuader=persuader,
        depth=depth,
        success_rate=sum(1 for m in pairs if m > 0) / len(pairs),
        mean_magnitude=statistics.fmean(pairs),
        per_power_success={p: sum(1 for m in mags[p] if m > 0) / depth for p in persuadees},
        per_power_magnitude={p: statistics.fmean(mags[p]) for p in persuadees},
        trial_sum_magnitude=[sum(mags[p][i] for p in persuadees) for i in range(depth)],
        trial_max_magnitude=[max(mags[p][i] for p in persuadees) for i in range(depth)],
        trials=trials,
    )


def write_trials(trials: Sequence[TrialRecord], path: Union[str, Path], summary: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
    if summary is not None:
        path.with_suffix(".summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")


__all__ = [
    "Intervention",
    "PersuasionStats",
    "SNAPSHOT_VERSION",
    "Snapshot",
    "SnapshotError",
    "TrialRecord",
    "apply_intervention",
    "capture_snapshot",
    "persuasion_intervention",
    "replay_phase",
    "run_persuasion_experiment",
    "shift_magnitude",
    "snapshot_opening",
    "write_trials",
]
