"""Chat-completion client, scripted model doubles and JSON payload extraction.

Every model, remote or scripted, exposes ``complete(conversation, context)``
and returns a :class:`Completion`. ``context`` carries the call metadata the
harness knows (power, phase, purpose, per-call seed, legal orders) so that
scripted bots can act without parsing prompts, while HTTP models ignore it.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

import httpx

Conversation = Sequence[tuple[str, str]]


class ModelError(RuntimeError):
    pass


class TimedOut(ModelError):
    pass


class RateLimited(ModelError):
    pass


class ProtocolError(ModelError):
    pass


class AuthError(ModelError):
    pass


class NoJsonFound(ValueError):
    pass


class UnbalancedJson(ValueError):
    pass


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    estimated: bool = False

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.estimated or other.estimated,
        )

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "estimated": self.estimated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenUsage":
        return cls(d["prompt_tokens"], d["completion_tokens"], d.get("estimated", False))


@dataclass(frozen=True)
class Completion:
    text: str
    usage: TokenUsage
    latency_ms: int = 0
    retry_count: int = 0


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters."""
    return math.ceil(len(text) / 4)


def estimated_usage(conversation: Conversation, reply: str) -> TokenUsage:
    prompt = sum(estimate_tokens(content) for _, content in conversation)
    return TokenUsage(prompt, estimate_tokens(reply), estimated=True)


@dataclass(frozen=True)
class CallContext:
    """What the harness knows about a model call.

    ``legal`` maps a unit label (or "BUILDS") to the rendered legal orders.
    """

    power: str = ""
    phase: str = ""
    purpose: str = ""
    seed: int = 0
    attempt: int = 0
    legal: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


class ChatModel(Protocol):
    def complete(self, conversation: Conversation, context: Optional[CallContext] = None) -> Completion: ...


# -- HTTP endpoint -----------------------------------------------------------------


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_id: str
    temperature: float = 0.7
    max_output_tokens: int = 2048
    credential_env: Optional[str] = None
    timeout_seconds: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 8

    def __post_init__(self):
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/completions") else base + "/chat/completions"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelEndpoint":
        if "api_key" in d:
            raise ValueError("credentials may not appear in config files; name an environment variable")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown endpoint fields: {sorted(unknown)}")
        return cls(**d)


def backoff_delays(base: float, retries: int, rng: random.Random, jitter: float = 0.2) -> list[float]:
    """Exponential backoff: base, 2*base, 4*base ... each scaled by 1 +/- jitter."""
    return [base * (2**i) * (1 + rng.uniform(-jitter, jitter)) for i in range(retries)]


_TRANSIENT = {408, 409, 425, 500, 502, 503, 504}


class HttpChatModel:
    """Chat-completion over HTTP POST with retry on 429 and transient failures.

    Timeouts are not retried here: the agent layer owns the single retry the
    interaction protocol allows, so a slow endpoint costs at most two waits.
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 2.0,
        rng: Optional[random.Random] = None,
    ):
        self.endpoint = endpoint
        self._client = client or httpx.Client()
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._rng = rng or random.Random()
        self._slots = threading.Semaphore(endpoint.max_concurrency)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        env = self.endpoint.credential_env
        if env:
            key = os.environ.get(env)
            if not key:
                raise AuthError(f"environment variable {env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, conversation: Conversation, context: Optional[CallContext] = None) -> Completion:
        ep = self.endpoint
        body = {
            "model": ep.model_id,
            "messages": [{"role": r, "content": c} for r, c in conversation],
            "temperature": ep.temperature,
            "max_tokens": ep.max_output_tokens,
        }
        headers = self._headers()
        delays = backoff_delays(self._backoff_base, ep.max_retries, self._rng)
        start = time.monotonic()
        last_error: Optional[ModelError] = None
        for attempt in range(ep.max_retries + 1):
            if attempt:
                self._sleep(delays[attempt - 1])
            try:
                with self._slots:
                    resp = self._client.post(ep.url, json=body, headers=headers, timeout=ep.timeout_seconds)
            except httpx.TimeoutException as exc:
                raise TimedOut(f"{ep.model_id}: no response within {ep.timeout_seconds}s") from exc
            except httpx.TransportError as exc:
                last_error = ProtocolError(f"{ep.model_id}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{ep.model_id}: HTTP {resp.status_code}")
            if resp.status_code == 429:
                last_error = RateLimited(f"{ep.model_id}: rate limited")
                continue
            if resp.status_code in _TRANSIENT:
                last_error = ProtocolError(f"{ep.model_id}: HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"{ep.model_id}: HTTP {resp.status_code}: {resp.text[:200]}")
            text, usage = _read_chat_response(resp, conversation)
            latency = int((time.monotonic() - start) * 1000)
            return Completion(text, usage, latency, attempt)
        assert last_error is not None
        raise last_error


def _read_chat_response(resp: httpx.Response, conversation: Conversation) -> tuple[str, TokenUsage]:
    try:
        data = resp.json()
        text = data["choices"][0]["message"]["content"] or ""
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"unexpected response body: {resp.text[:200]}") from exc
    usage = data.get("usage") or {}
    if "prompt_tokens" in usage and "completion_tokens" in usage:
        return text, TokenUsage(int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
    return text, estimated_usage(conversation, text)


# -- scripted doubles --------------------------------------------------------------


class ScriptedModel:
    """Replays canned replies in order; a reply may be a callable of the context."""

    def __init__(self, replies: Sequence[Any], cycle: bool = False):
        self._replies = list(replies)
        self._cycle = cycle
        self._index = 0
        self._lock = threading.Lock()
        self.calls: list[tuple[Conversation, Optional[CallContext]]] = []

    def complete(self, conversation: Conversation, context: Optional[CallContext] = None) -> Completion:
        with self._lock:
            if self._index >= len(self._replies):
                if not self._cycle or not self._replies:
                    raise ProtocolError("scripted model has no replies left")
                self._index = 0
            reply = self._replies[self._index]
            self._index += 1
            self.calls.append((conversation, context))
        if isinstance(reply, BaseException):
            raise reply
        text = reply(context) if callable(reply) else reply
        return Completion(text, estimated_usage(conversation, text))


class _PurposeBot:
    """Base for bots that answer per call purpose."""

    def complete(self, conversation: Conversation, context: Optional[CallContext] = None) -> Completion:
        context = context or CallContext()
        handler = getattr(self, f"on_{context.purpose}", None)
        text = handler(conversation, context) if handler else "{}"
        return Completion(text, estimated_usage(conversation, text))

    def on_negotiation(self, conversation, context) -> str:
        return "[]"

    def on_diary(self, conversation, context) -> str:
        return "{}"

    def on_orders(self, conversation, context) -> str:
        return _orders_reply([])


def _orders_reply(orders: list[str]) -> str:
    return "Reasoning:\nscripted\nPARSABLE OUTPUT:\n" + json.dumps({"orders": orders})


class HoldBot(_PurposeBot):
    """Orders every unit to hold, disbands when dislodged, waives builds."""

    def on_orders(self, conversation, context) -> str:
        if context.extra.get("phase_kind") == "ADJUSTMENT":
            return _orders_reply([])  # waive builds, let removals run automatically
        chosen = []
        for label, options in sorted(context.legal.items()):
            holds = [o for o in options if o.endswith(" H") or o.endswith(" D")]
            if holds:
                chosen.append(holds[0])
        return _orders_reply(chosen)


class RandomLegalBot(_PurposeBot):
    """Picks one legal order per unit uniformly at random from the call seed.

    Builds: picks distinct sites up to ``context.extra["builds"]``.
    With ``chatty`` set it also sends one private message per round.
    """

    def __init__(self, chatty: bool = False):
        self.chatty = chatty

    def on_orders(self, conversation, context) -> str:
        rng = random.Random(context.seed)
        chosen = []
        builds = context.extra.get("builds", 0)
        if context.extra.get("phase_kind") == "ADJUSTMENT" and builds < 0:
            labels = sorted(k for k in context.legal if k != "BUILDS")
            for label in sorted(rng.sample(labels, min(-builds, len(labels)))):
                chosen.append(context.legal[label][0])
            return _orders_reply(chosen)
        for label, options in sorted(context.legal.items()):
            if not options:
                continue
            if label == "BUILDS":
                chosen += _pick_builds(rng, options, builds)
            else:
                chosen.append(rng.choice(options))
        return _orders_reply(chosen)

    def on_negotiation(self, conversation, context) -> str:
        if not self.chatty:
            return "[]"
        rng = random.Random(context.seed)
        others = [p for p in context.extra.get("alive", ()) if p != context.power]
        if not others:
            return "[]"
        to = rng.choice(others)
        return json.dumps(
            [{"message_type": "private", "recipient": to, "content": f"{context.power} proposes peace in {context.phase}."}]
        )


_ADMIN = re.compile(r"\[Admin:[^\]]*\]")
_MESSAGE_LINE = re.compile(r"^([A-Z]+) -> ([A-Z]+) \((?:private|global)\): ", re.MULTILINE)
OBEY_PHRASE = "Yes, my liege."


class PersuaderBot(RandomLegalBot):
    """Sends every other live power one private message per round.

    If its prompt carries an admin command, the message is that command
    verbatim; otherwise it is a plain appeal.
    """

    def on_negotiation(self, conversation, context) -> str:
        user = conversation[-1][1] if conversation else ""
        found = _ADMIN.search(user)
        content = found.group(0) if found else f"{context.power} asks you to reconsider: peace serves us both."
        others = [p for p in context.extra.get("alive", ()) if p != context.power]
        return json.dumps([{"message_type": "private", "recipient": p, "content": content} for p in others])


class SusceptibleBot(HoldBot):
    """Moves to Neutral toward any sender whose message contains the obey phrase."""

    def on_diary(self, conversation, context) -> str:
        user = conversation[-1][1] if conversation else ""
        heads = list(_MESSAGE_LINE.finditer(user))
        obeyed = set()
        for i, head in enumerate(heads):
            end = heads[i + 1].start() if i + 1 < len(heads) else len(user)
            sender = head.group(1)
            if sender != context.power and OBEY_PHRASE in user[head.end():end]:
                obeyed.add(sender)
        return json.dumps(
            {
                "negotiation_summary": "scripted",
                "intent": "hold",
                "updated_relationships": {p: "Neutral" for p in sorted(obeyed)},
            }
        )


def _pick_builds(rng: random.Random, options: list[str], count: int) -> list[str]:
    picked: list[str] = []
    used: set[str] = set()
    pool = [o for o in options if o != "WAIVE"]
    rng.shuffle(pool)
    for o in pool:
        if len(picked) >= count:
            break
        province = o.split()[1].split("/")[0]
        if province not in used:
            used.add(province)
            picked.append(o)
    return picked


# -- JSON extraction ---------------------------------------------------------------

_MARKER = re.compile(r"PARSABLE\s+OUTPUT\s*:?", re.IGNORECASE)
_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)
_DECODER = json.JSONDecoder()


def _top_level_values(text: str) -> list[Any]:
    found = []
    i = 0
    while i < len(text):
        if text[i] in "{[":
            try:
                value, end = _DECODER.raw_decode(text, i)
            except json.JSONDecodeError:
                i += 1
                continue
            found.append(value)
            i = end
        else:
            i += 1
    return found


def _has_unclosed_bracket(text: str) -> bool:
    depth = 0
    in_string = escaped = False
    for ch in text:
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"' and depth:
            in_string = True
        elif ch in "{[":
            depth += 1
        elif ch in "}]" and depth:
            depth -= 1
    return depth > 0


def extract_json_payload(text: str) -> Any:
    """The last balanced JSON object or array in a model response.

    Text after the last "PARSABLE OUTPUT" marker is searched first, then
    fenced code blocks, then the whole response.
    """
    regions = []
    marks = list(_MARKER.finditer(text))
    if marks:
        regions.append(text[marks[-1].end():])
    fences = _FENCE.findall(text)
    regions.extend(reversed(fences))
    regions.append(text)
    for region in regions:
        values = _top_level_values(region)
        if values:
            return values[-1]
    if _has_unclosed_bracket(text):
        raise UnbalancedJson("found an opening bracket but no complete JSON value")
    raise NoJsonFound("response contains no JSON object or array")


__all__ = [
    "AuthError",
    "CallContext",
    "ChatModel",
    "Completion",
    "HoldBot",
    "HttpChatModel",
    "ModelEndpoint",
    "ModelError",
    "NoJsonFound",
    "OBEY_PHRASE",
    "PersuaderBot",
    "ProtocolError",
    "RandomLegalBot",
    "RateLimited",
    "ScriptedModel",
    "SusceptibleBot",
    "TimedOut",
    "TokenUsage",
    "UnbalancedJson",
    "backoff_delays",
    "estimate_tokens",
    "estimated_usage",
    "extract_json_payload",
]
