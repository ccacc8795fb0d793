"""Per-power agent state and the model-facing turn protocol.

A turn is one model call with a single retry. The retry fires on timeout,
transport failure, unparseable output or (for orders) any rejected order;
after that the protocol substitutes defaults: no messages for negotiation,
Hold / Disband / Waive for orders, and an unchanged state for the diary.
"""

from __future__ import annotations

import concurrent.futures
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

from .board import GameState, PhaseKind
from .llm import CallContext, ChatModel, Completion, ModelError, TimedOut, TokenUsage, extract_json_payload
from .mapgraph import POWERS, MapGraph
from .orders import (
    BUILD_KEY,
    Build,
    Convoy,
    Disband,
    Hold,
    Order,
    OrderError,
    SupportHold,
    SupportMove,
    Waive,
    adjustment_delta,
    buildable_sites,
    parse_order,
    render_order,
    validate_order,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 1
DEFAULT_MESSAGE_LIMIT = 6


class RelationshipLevel(enum.IntEnum):
    ENEMY = -2
    UNFRIENDLY = -1
    NEUTRAL = 0
    FRIENDLY = 1
    ALLY = 2

    @property
    def word(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, word: Any) -> Optional["RelationshipLevel"]:
        if isinstance(word, str):
            return cls.__members__.get(word.strip().upper())
        return None


class MessageKind(str, enum.Enum):
    GLOBAL = "global"
    PRIVATE = "private"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    recipient: Optional[str]
    content: str
    phase: str
    round: int

    def __post_init__(self):
        if (self.kind is MessageKind.PRIVATE) != (self.recipient is not None):
            raise ValueError("recipient is required for private messages and only for them")
        if self.recipient == self.sender:
            raise ValueError("a power cannot message itself")
        if self.round < 1:
            raise ValueError("rounds are numbered from 1")

    def visible_to(self, power: str) -> bool:
        return self.kind is MessageKind.GLOBAL or power in (self.sender, self.recipient)

    def render(self) -> str:
        to = self.recipient if self.recipient else "ALL"
        return f"{self.sender} -> {to} ({self.kind.value}): {self.content}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sender": self.sender,
            "recipient": self.recipient,
            "content": self.content,
            "phase": self.phase,
            "round": self.round,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        return cls(MessageKind(d["kind"]), d["sender"], d.get("recipient"), d["content"], d["phase"], d["round"])


@dataclass(frozen=True)
class DiaryEntry:
    phase: str
    negotiation_summary: str
    intent: str
    kind: str = "negotiation"

    def to_dict(self) -> dict:
        return {"phase": self.phase, "negotiation_summary": self.negotiation_summary, "intent": self.intent, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "DiaryEntry":
        return cls(d["phase"], d["negotiation_summary"], d["intent"], d.get("kind", "negotiation"))


@dataclass(frozen=True)
class AgentState:
    power: str
    goals: tuple[str, ...] = ()
    relationships: Mapping[str, RelationshipLevel] = field(default_factory=dict)
    diary: tuple[DiaryEntry, ...] = ()
    model_binding: str = "hold"

    def __post_init__(self):
        others = {p for p in POWERS if p != self.power}
        if set(self.relationships) != others:
            raise ValueError(f"relationships for {self.power} must cover exactly {sorted(others)}")

    def to_dict(self) -> dict:
        return {
            "power": self.power,
            "goals": list(self.goals),
            "relationships": {p: int(v) for p, v in sorted(self.relationships.items())},
            "diary": [e.to_dict() for e in self.diary],
            "model_binding": self.model_binding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(
            power=d["power"],
            goals=tuple(d.get("goals", ())),
            relationships={p: RelationshipLevel(v) for p, v in d["relationships"].items()},
            diary=tuple(DiaryEntry.from_dict(e) for e in d.get("diary", ())),
            model_binding=d.get("model_binding", "hold"),
        )

    def with_relationship(self, toward: str, level: RelationshipLevel) -> "AgentState":
        rel = dict(self.relationships)
        if toward not in rel:
            raise KeyError(toward)
        rel[toward] = level
        return replace(self, relationships=rel)


def new_agent(power: str, model_binding: str = "hold") -> AgentState:
    return AgentState(
        power=power,
        relationships={p: RelationshipLevel.NEUTRAL for p in POWERS if p != power},
        model_binding=model_binding,
    )


# -- model calls -------------------------------------------------------------------


@dataclass(frozen=True)
class CallPolicy:
    timeout_seconds: float = DEFAULT_TIMEOUT
    retries: int = DEFAULT_RETRIES


@dataclass
class CallRecord:
    """Accounting for one protocol turn (the first try plus any retry)."""

    usage: TokenUsage = TokenUsage()
    attempts: int = 0
    errors: list[str] = field(default_factory=list)
    failed: bool = False

    def to_dict(self) -> dict:
        return {"usage": self.usage.to_dict(), "attempts": self.attempts, "errors": list(self.errors), "failed": self.failed}


_POOL = concurrent.futures.ThreadPoolExecutor(max_workers=64, thread_name_prefix="model-call")


def call_with_timeout(model: ChatModel, conversation, context: CallContext, timeout: float) -> Completion:
    future = _POOL.submit(model.complete, conversation, context)
    try:
        return future.result(timeout=timeout)
    except concurrent.futures.TimeoutError as exc:
        future.cancel()
        raise TimedOut(f"no response within {timeout}s") from exc


def _attempt(model, conversation, context, policy, record: CallRecord) -> Optional[Completion]:
    record.attempts += 1
    try:
        completion = call_with_timeout(model, conversation, context, policy.timeout_seconds)
    except ModelError as exc:
        record.errors.append(f"{type(exc).__name__}: {exc}")
        return None
    except Exception as exc:  # a broken model must not take the match down
        record.errors.append(f"{type(exc).__name__}: {exc}")
        return None
    record.usage = record.usage + completion.usage
    return completion


def _conversation(prompt) -> list[tuple[str, str]]:
    return [("system", prompt.system), ("user", prompt.user)]


def _retry_conversation(prompt, reply: Optional[str], problem: str) -> list[tuple[str, str]]:
    conv = _conversation(prompt)
    if reply is not None:
        conv.append(("assistant", reply))
    conv.append(("user", f"Your previous response could not be used: {problem}\nRespond again in the required format."))
    return conv


# -- negotiation -------------------------------------------------------------------


def parse_messages(payload: Any, sender: str, phase: str, round: int, limit: int) -> tuple[list[Message], list[str]]:
    """Messages from a decoded JSON array; bad entries are dropped one by one."""
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise ValueError("expected a JSON array of messages")
    out, dropped = [], []
    for entry in payload:
        try:
            kind = MessageKind(str(entry["message_type"]).strip().lower())
            content = entry["content"]
            if not isinstance(content, str) or not content.strip():
                raise ValueError("empty content")
            recipient = None
            if kind is MessageKind.PRIVATE:
                recipient = str(entry["recipient"]).strip().upper()
                if recipient not in POWERS:
                    raise ValueError(f"unknown recipient {recipient}")
            out.append(Message(kind, sender, recipient, content, phase, round))
        except (KeyError, TypeError, ValueError) as exc:
            dropped.append(f"{entry!r}: {exc}")
    return out[:limit], dropped


def propose_messages(
    agent: AgentState,
    prompt,
    round: int,
    limit: int = DEFAULT_MESSAGE_LIMIT,
    *,
    model: ChatModel,
    context: CallContext,
    policy: CallPolicy = CallPolicy(),
) -> tuple[list[Message], CallRecord]:
    record = CallRecord()
    conversation = _conversation(prompt)
    reply = None
    for attempt in range(policy.retries + 1):
        completion = _attempt(model, conversation, replace(context, attempt=attempt), policy, record)
        if completion is None:
            conversation = _conversation(prompt)
            continue
        reply = completion.text
        try:
            payload = extract_json_payload(reply)
            messages, dropped = parse_messages(payload, agent.power, context.phase, round, limit)
        except ValueError as exc:
            record.errors.append(f"malformed: {exc}")
            conversation = _retry_conversation(prompt, reply, str(exc))
            continue
        if dropped:
            record.errors.extend(f"dropped {d}" for d in dropped)
        return messages, record
    record.failed = True
    return [], record


# -- diary -------------------------------------------------------------------------


def update_from_negotiation(agent: AgentState, payload: Any, phase: str) -> tuple[AgentState, list[str]]:
    """Apply a decoded diary response. Returns the new state and warnings."""
    warnings: list[str] = []
    if not isinstance(payload, dict):
        return agent, ["diary response was not a JSON object"]
    state = agent
    rels = payload.get("updated_relationships")
    if isinstance(rels, dict):
        for key, value in rels.items():
            toward = str(key).strip().upper()
            level = RelationshipLevel.parse(value)
            if toward not in state.relationships or level is None:
                warnings.append(f"ignored relationship {key!r}: {value!r}")
                continue
            state = state.with_relationship(toward, level)
    elif rels is not None:
        warnings.append("updated_relationships was not an object")
    goals = payload.get("goals")
    if isinstance(goals, list) and all(isinstance(g, str) for g in goals):
        state = replace(state, goals=tuple(goals))
    elif goals is not None:
        warnings.append("goals was not a list of strings")
    summary, intent = payload.get("negotiation_summary"), payload.get("intent")
    if isinstance(summary, str) or isinstance(intent, str):
        if any(e.phase == phase and e.kind == "negotiation" for e in state.diary):
            warnings.append(f"diary already has an entry for {phase}")
        else:
            entry = DiaryEntry(phase, summary if isinstance(summary, str) else "", intent if isinstance(intent, str) else "")
            state = replace(state, diary=state.diary + (entry,))
    return state, warnings


def write_diary(
    agent: AgentState,
    prompt,
    *,
    model: ChatModel,
    context: CallContext,
    policy: CallPolicy = CallPolicy(),
) -> tuple[AgentState, list[str], CallRecord]:
    record = CallRecord()
    conversation = _conversation(prompt)
    for attempt in range(policy.retries + 1):
        completion = _attempt(model, conversation, replace(context, attempt=attempt), policy, record)
        if completion is None:
            conversation = _conversation(prompt)
            continue
        try:
            payload = extract_json_payload(completion.text)
            if not isinstance(payload, dict):
                raise ValueError("expected a JSON object")
        except ValueError as exc:
            record.errors.append(f"malformed: {exc}")
            conversation = _retry_conversation(prompt, completion.text, str(exc))
            continue
        new_state, warnings = update_from_negotiation(agent, payload, context.phase)
        return new_state, warnings, record
    record.failed = True
    return agent, [f"diary update for {context.phase} failed; state unchanged"], record


# -- orders ------------------------------------------------------------------------


@dataclass
class OrderDecision:
    orders: list[Order]
    invalid_count: int
    submitted: int
    rejected: list[tuple[str, str]]
    defaulted: list[str]
    record: CallRecord

    def to_dict(self) -> dict:
        return {
            "submitted": self.submitted,
            "invalid_count": self.invalid_count,
            "rejected": [{"order": t, "reason": r} for t, r in self.rejected],
            "defaulted": list(self.defaulted),
            "call": self.record.to_dict(),
        }


def legal_labels(legal: Mapping[Any, Sequence[Order]]) -> dict[str, list[str]]:
    """Legal orders rendered as text, keyed by unit text or BUILDS."""
    out = {}
    for key, options in legal.items():
        label = key if isinstance(key, str) else str(key)
        out[label] = [render_order(o) for o in options]
    return out


def _check_orders(
    texts: Sequence[Any],
    power: str,
    graph: MapGraph,
    state: GameState,
    legal: Mapping[Any, Sequence[Order]],
) -> tuple[list[Order], list[tuple[str, str]]]:
    accepted: list[Order] = []
    rejected: list[tuple[str, str]] = []
    legal_set = {o for opts in legal.values() for o in opts}
    ordered: set[str] = set()
    delta = adjustment_delta(state, power) if state.phase_kind is PhaseKind.ADJUSTMENT else 0
    builds_left, disbands_left = max(delta, 0), max(-delta, 0)
    for text in texts:
        if not isinstance(text, str):
            rejected.append((repr(text), "not a string"))
            continue
        try:
            order = parse_order(text, power, state, graph)
        except OrderError as exc:
            rejected.append((text, str(exc) or type(exc).__name__))
            continue
        a = order.action
        if isinstance(a, Waive):
            accepted.append(order)
            continue
        key = order.unit.province
        if key in ordered:
            rejected.append((text, "unit already has an order"))
            continue
        if order not in legal_set:
            cross_power = isinstance(a, (SupportHold, SupportMove, Convoy))
            reason = validate_order(graph, state, order) if cross_power else "not a legal order"
            if reason is not None:
                rejected.append((text, reason))
                continue
        if isinstance(a, Build):
            if builds_left <= 0:
                rejected.append((text, "no builds left"))
                continue
            builds_left -= 1
        if isinstance(a, Disband) and state.phase_kind is PhaseKind.ADJUSTMENT:
            if disbands_left <= 0:
                rejected.append((text, "no disbands left"))
                continue
            disbands_left -= 1
        ordered.add(key)
        accepted.append(order)
    return accepted, rejected


def _defaults(power: str, graph: MapGraph, state: GameState, legal, accepted: list[Order]) -> tuple[list[Order], list[str]]:
    """Fill in default orders for units the submission left unordered."""
    ordered = {o.unit.province for o in accepted if o.unit is not None}
    out: list[Order] = []
    kind = state.phase_kind
    if kind is PhaseKind.MOVEMENT:
        for u in state.units_of(power):
            if u.province not in ordered:
                out.append(Order(power, u, Hold()))
    elif kind is PhaseKind.RETREAT:
        for d in state.dislodged_of(power):
            if d.unit.province not in ordered:
                out.append(Order(power, d.unit, Disband()))
    elif BUILD_KEY in legal:
        delta = adjustment_delta(state, power)
        slots = min(delta, len(buildable_sites(graph, state, power)))
        used = sum(1 for o in accepted if isinstance(o.action, (Build, Waive)))
        out.extend(Order(power, None, Waive()) for _ in range(max(0, slots - used)))
    return out, [render_order(o) for o in out]


def _order_texts(payload: Any) -> list[Any]:
    if isinstance(payload, dict):
        payload = payload.get("orders")
    if not isinstance(payload, list):
        raise ValueError('expected {"orders": [...]}')
    return payload


def decide_orders(
    agent: AgentState,
    prompt,
    legal: Mapping[Any, Sequence[Order]],
    *,
    model: ChatModel,
    context: CallContext,
    graph: MapGraph,
    state: GameState,
    policy: CallPolicy = CallPolicy(),
) -> OrderDecision:
    """Collect one order per unit, retrying once on malformed or rejected output.

    ``invalid_count`` counts rejections in the submission that is finally
    used, so entries fixed by the retry are not counted. If no attempt
    yields a usable submission every unit gets its default and
    ``invalid_count`` is 0.
    """
    power = agent.power
    record = CallRecord()
    conversation = _conversation(prompt)
    best: Optional[tuple[list[Order], list[tuple[str, str]], int]] = None
    for attempt in range(policy.retries + 1):
        completion = _attempt(model, conversation, replace(context, attempt=attempt), policy, record)
        if completion is None:
            conversation = _conversation(prompt)
            continue
        try:
            texts = _order_texts(extract_json_payload(completion.text))
        except ValueError as exc:
            record.errors.append(f"malformed: {exc}")
            conversation = _retry_conversation(prompt, completion.text, str(exc))
            continue
        accepted, rejected = _check_orders(texts, power, graph, state, legal)
        best = (accepted, rejected, len(texts))
        if not rejected:
            break
        problems = "; ".join(f"{t!r}: {r}" for t, r in rejected)
        conversation = _retry_conversation(prompt, completion.text, f"rejected orders: {problems}")

    if best is None:
        record.failed = True
        defaults, labels = _defaults(power, graph, state, legal, [])
        return OrderDecision(defaults, 0, 0, [], labels, record)
    accepted, rejected, submitted = best
    defaults, labels = _defaults(power, graph, state, legal, accepted)
    return OrderDecision(accepted + defaults, len(rejected), submitted, rejected, labels, record)


__all__ = [
    "AgentState",
    "CallPolicy",
    "CallRecord",
    "DiaryEntry",
    "Message",
    "MessageKind",
    "OrderDecision",
    "RelationshipLevel",
    "call_with_timeout",
    "decide_orders",
    "legal_labels",
    "new_agent",
    "parse_messages",
    "propose_messages",
    "update_from_negotiation",
    "write_diary",
]
