"""Order vocabulary, the text notation, validity checks and legal-order enumeration.

Canonical grammar (case-insensitive on input, uppercase on output)::

    <A|F> <LOC>[/<COAST>] ( H
                          | - <LOC>[/<COAST>] [VIA]
                          | S <A|F> <LOC> [- <LOC>[/<COAST>]]
                          | C A <LOC> - <LOC>
                          | R <LOC>[/<COAST>]
                          | D
                          | B )
    WAIVE
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from typing import Optional, Union

from .board import GameState, PhaseKind, Unit
from .mapgraph import Location, MapGraph, Terrain, UnitType
from .mapgraph import UnknownProvince as _MapUnknownProvince


class OrderError(ValueError):
    """Raised when order text cannot be turned into an order."""


class MalformedSyntax(OrderError):
    pass


class UnknownProvince(OrderError, _MapUnknownProvince):
    pass


class NotYourUnit(OrderError):
    pass


class IllegalCoast(OrderError):
    pass


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class Hold:
    pass


@dataclass(frozen=True)
class Move:
    dest: Location
    via_convoy: bool = False


@dataclass(frozen=True)
class SupportHold:
    target_kind: UnitType
    target: Location


@dataclass(frozen=True)
class SupportMove:
    target_kind: UnitType
    source: Location
    dest: Location


@dataclass(frozen=True)
class Convoy:
    army_from: Location
    army_to: Location


@dataclass(frozen=True)
class Retreat:
    dest: Location


@dataclass(frozen=True)
class Disband:
    pass


@dataclass(frozen=True)
class Build:
    pass


@dataclass(frozen=True)
class Waive:
    pass


Action = Union[Hold, Move, SupportHold, SupportMove, Convoy, Retreat, Disband, Build, Waive]


@dataclass(frozen=True)
class Order:
    """One order. ``unit`` is the unit to build for Build and None for Waive."""

    power: str
    unit: Optional[Unit]
    action: Action

    def __str__(self) -> str:
        return render_order(self)

    @property
    def type_name(self) -> str:
        return type(self.action).__name__


# -- rendering -----------------------------------------------------------------


def render_order(order: Order) -> str:
    a = order.action
    if isinstance(a, Waive):
        return "WAIVE"
    head = f"{order.unit.kind.value} {order.unit.location}"
    if isinstance(a, Hold):
        return f"{head} H"
    if isinstance(a, Move):
        return f"{head} - {a.dest}" + (" VIA" if a.via_convoy else "")
    if isinstance(a, SupportHold):
        return f"{head} S {a.target_kind.value} {a.target}"
    if isinstance(a, SupportMove):
        return f"{head} S {a.target_kind.value} {a.source} - {a.dest}"
    if isinstance(a, Convoy):
        return f"{head} C A {a.army_from} - {a.army_to}"
    if isinstance(a, Retreat):
        return f"{head} R {a.dest}"
    if isinstance(a, Disband):
        return f"{head} D"
    if isinstance(a, Build):
        return f"{head} B"
    raise TypeError(f"unknown action {a!r}")


# -- parsing -------------------------------------------------------------------

ALIASES = {
    "NAT": "NAO", "NRG": "NWG", "MID": "MAO", "GOL": "LYO", "GOB": "BOT", "WMS": "WES",
    "EMS": "EAS", "TYN": "TYS", "LPL": "LVP", "ECH": "ENG", "NTS": "NTH", "HEL": "HEL",
    "HGB": "HEL", "SWI": "SWI",
}
_KEYWORDS = {
    "H": "H", "HOLD": "H", "HOLDS": "H",
    "S": "S", "SUPPORT": "S", "SUPPORTS": "S",
    "C": "C", "CONVOY": "C", "CONVOYS": "C",
    "R": "R", "RETREAT": "R", "RETREATS": "R",
    "D": "D", "DISBAND": "D", "DISBANDS": "D",
    "B": "B", "BUILD": "B", "BUILDS": "B",
    "VIA": "VIA", "-": "-", "TO": "-", "M": "-", "MOVE": "-", "MOVES": "-",
}
_UNIT_WORDS = {"A": UnitType.ARMY, "ARMY": UnitType.ARMY, "F": UnitType.FLEET, "FLEET": UnitType.FLEET}
_COAST_RE = re.compile(r"\(\s*(NC|SC|EC|WC)\s*\)")
_TOKEN_RE = re.compile(r"->|=>|[-–—]|[^\s\-–—]+")


def _tokenize(text: str) -> list[str]:
    text = text.upper().replace(",", " ").replace(".", " ")
    text = _COAST_RE.sub(lambda m: "/" + m.group(1), text)
    text = re.sub(r"\s*/\s*", "/", text)
    tokens = []
    for tok in _TOKEN_RE.findall(text):
        tokens.append("-" if tok in ("->", "=>", "–", "—") else tok)
    # "VIA CONVOY" is one keyword
    out: list[str] = []
    for tok in tokens:
        if tok in ("CONVOY", "C") and out and out[-1] == "VIA":
            continue
        out.append(tok)
    return out


def _loc_token(graph: MapGraph, tok: str) -> Location:
    prov, _, coast = tok.partition("/")
    prov = ALIASES.get(prov, prov)
    if prov not in graph.provinces:
        if re.fullmatch(r"[A-Z]{3}", prov):
            raise UnknownProvince(f"unknown province {prov!r}")
        raise MalformedSyntax(f"expected a province, got {tok!r}")
    if coast:
        if coast not in graph.provinces[prov].coasts:
            raise IllegalCoast(f"{prov} has no coast {coast!r}")
        return Location(prov, coast)
    return Location(prov)


class _Cursor:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise MalformedSyntax("order ends early")
        self.i += 1
        return tok

    def done(self) -> bool:
        return self.i >= len(self.tokens)


def _maybe_kind(cur: _Cursor) -> Optional[UnitType]:
    tok = cur.peek()
    if tok in _UNIT_WORDS:
        cur.take()
        return _UNIT_WORDS[tok]
    return None


def _keyword(tok: Optional[str]) -> Optional[str]:
    return _KEYWORDS.get(tok) if tok is not None else None


def parse_order(text: str, power: str, state: GameState, graph: MapGraph) -> Order:
    """Parse order text for ``power`` against ``state``.

    Raises an OrderError subclass for anything that is not a structurally valid
    order bound to one of ``power``'s units.
    """
    if not isinstance(text, str):
        raise MalformedSyntax("order must be text")
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedSyntax("empty order")
    if tokens == ["WAIVE"]:
        return Order(power, None, Waive())

    cur = _Cursor(tokens)
    # prefix keyword forms: "BUILD F STP/NC", "DISBAND A PAR"
    prefix = None
    if _keyword(cur.peek()) in ("B", "D"):
        prefix = _keyword(cur.take())
    kind = _maybe_kind(cur)
    loc = _loc_token(graph, cur.take())

    if prefix is None and _keyword(cur.peek()) == "B":
        cur.take()
        prefix = "B"
    if prefix == "B":
        if not cur.done():
            raise MalformedSyntax(f"unexpected {cur.peek()!r} after build")
        return _bind_build(graph, state, power, kind, loc)

    unit = _bind_unit(graph, state, power, kind, loc, prefix == "D")
    if prefix == "D":
        if not cur.done():
            raise MalformedSyntax(f"unexpected {cur.peek()!r} after disband")
        return Order(power, unit, Disband())

    kw = _keyword(cur.peek())
    if kw is None:
        raise MalformedSyntax(f"expected an order keyword, got {cur.peek()!r}")
    cur.take()
    retreating = state.phase_kind is PhaseKind.RETREAT

    if kw == "H":
        action: Action = Hold()
    elif kw == "D":
        action = Disband()
    elif kw in ("-", "R"):
        if kw == "R" and _keyword(cur.peek()) == "-":
            cur.take()
        dest = _loc_token(graph, cur.take())
        via = False
        if _keyword(cur.peek()) == "VIA":
            cur.take()
            via = True
        dest = _resolve_dest_coast(graph, unit, dest)
        if kw == "R" or retreating:
            if via:
                raise MalformedSyntax("retreats cannot be convoyed")
            action = Retreat(dest)
        else:
            if unit.kind is UnitType.ARMY and not via and dest.province not in graph.army_adjacency.get(unit.province, ()):
                via = True  # a non-adjacent army move can only be a convoy
            action = Move(dest, via)
    elif kw == "S":
        tkind = _maybe_kind(cur)
        src = _loc_token(graph, cur.take())
        tkind = tkind or _kind_at(state, src)
        if _keyword(cur.peek()) == "-":
            cur.take()
            dest = _loc_token(graph, cur.take())
            if tkind is UnitType.ARMY or not graph.provinces[dest.province].coasts:
                dest = Location(dest.province)
            action = SupportMove(tkind, Location(src.province), dest)
            if _keyword(cur.peek()) == "VIA":
                cur.take()
        else:
            if _keyword(cur.peek()) == "H":
                cur.take()
            action = SupportHold(tkind, Location(src.province))
    elif kw == "C":
        ckind = _maybe_kind(cur)
        if ckind is UnitType.FLEET:
            raise MalformedSyntax("only armies can be convoyed")
        src = _loc_token(graph, cur.take())
        if _keyword(cur.take()) != "-":
            raise MalformedSyntax("convoy needs '-' between provinces")
        dest = _loc_token(graph, cur.take())
        action = Convoy(Location(src.province), Location(dest.province))
    else:
        raise MalformedSyntax(f"unexpected keyword {kw!r}")

    if not cur.done():
        raise MalformedSyntax(f"trailing text {' '.join(cur.tokens[cur.i:])!r}")
    return Order(power, unit, action)


def _kind_at(state: GameState, loc: Location) -> UnitType:
    u = state.unit_at(loc.province)
    if u is None:
        raise MalformedSyntax(f"support target at {loc.province} needs a unit type")
    return u.kind


def _bind_unit(graph, state, power, kind, loc, disbanding) -> Unit:
    pool = state.units
    if state.phase_kind is PhaseKind.RETREAT:
        pool = tuple(d.unit for d in state.dislodged)
    for u in pool:
        if u.province == loc.province:
            if u.power != power:
                raise NotYourUnit(f"the unit in {loc.province} belongs to {u.power}")
            if kind is not None and u.kind is not kind:
                raise NotYourUnit(f"no {kind.name.lower()} of {power} in {loc.province}")
            return u
    raise NotYourUnit(f"{power} has no unit in {loc.province}")


def _bind_build(graph, state, power, kind, loc) -> Order:
    if kind is None:
        raise MalformedSyntax("build needs a unit type")
    prov = graph.provinces[loc.province]
    if kind is UnitType.ARMY:
        loc = Location(loc.province)
    elif prov.coasts and loc.coast is None:
        raise IllegalCoast(f"fleet build in {loc.province} needs a coast")
    return Order(power, Unit(power, kind, loc), Build())


def _resolve_dest_coast(graph: MapGraph, unit: Unit, dest: Location) -> Location:
    prov = graph.provinces[dest.province]
    if unit.kind is UnitType.ARMY:
        return Location(dest.province)
    if prov.coasts and dest.coast is None:
        try:
            reach = graph.adjacency(UnitType.FLEET, unit.location)
        except Exception:
            return dest
        options = [l for l in reach if l.province == dest.province]
        if len(options) == 1:
            return options[0]
        if len(options) > 1:
            raise IllegalCoast(f"{dest.province} is reachable on more than one coast; name one")
    return dest


# -- convoy geometry -------------------------------------------------------------


def _waters_touching(graph: MapGraph, pid: str) -> set[str]:
    out = set()
    for loc in graph.fleet_locations(pid):
        for nb in graph.fleet_adjacency.get(loc, ()):
            if graph.provinces[nb.province].terrain is Terrain.WATER:
                out.add(nb.province)
    return out


def convoy_destinations(graph: MapGraph, start: str, fleets: set[str]) -> dict[str, frozenset[str]]:
    """Coastal provinces an army at ``start`` could reach through fleet-held water.

    Returns destination -> the connected set of water provinces that touches it.
    """
    if graph.provinces[start].terrain is not Terrain.COAST:
        return {}
    seeds = _waters_touching(graph, start) & fleets
    seen: set[str] = set()
    queue = deque(sorted(seeds))
    seen.update(seeds)
    while queue:
        w = queue.popleft()
        for nb in graph.fleet_adjacency.get(Location(w), ()):
            if nb.province in fleets and nb.province not in seen:
                seen.add(nb.province)
                queue.append(nb.province)
    out: dict[str, frozenset[str]] = {}
    chain = frozenset(seen)
    for w in seen:
        for nb in graph.fleet_adjacency.get(Location(w), ()):
            p = nb.province
            if p != start and graph.provinces[p].terrain is Terrain.COAST:
                out[p] = chain
    return out


def fleet_waters(state: GameState, graph: MapGraph) -> set[str]:
    return {
        u.province
        for u in state.units
        if u.kind is UnitType.FLEET and graph.provinces[u.province].terrain is Terrain.WATER
    }


def can_reach(graph: MapGraph, state: GameState, unit: Unit, province: str, fleets=None) -> bool:
    """Could ``unit`` move into ``province`` (convoys counted for armies)?"""
    if province == unit.province:
        return False
    if unit.kind is UnitType.FLEET:
        return province in graph.reachable_provinces(UnitType.FLEET, unit.location)
    if province in graph.army_adjacency.get(unit.province, ()):
        return True
    if graph.provinces[province].terrain is not Terrain.COAST:
        return False
    fleets = fleet_waters(state, graph) if fleets is None else fleets
    return province in convoy_destinations(graph, unit.province, fleets)


def support_reach(graph: MapGraph, unit: Unit) -> frozenset[str]:
    """Provinces a unit can lend support into (no convoys, coasts folded)."""
    return graph.reachable_provinces(unit.kind, unit.location)


# -- validity --------------------------------------------------------------------


def adjustment_delta(state: GameState, power: str) -> int:
    return len(state.centers_of(power)) - len(state.units_of(power))


def buildable_sites(graph: MapGraph, state: GameState, power: str) -> list[str]:
    occupied = {u.province for u in state.units}
    return [
        h for h in graph.home_centers(power)
        if state.sc_ownership.get(h) == power and h not in occupied
    ]


def retreat_options(graph: MapGraph, state: GameState, dislodged) -> list[Location]:
    occupied = {u.province for u in state.units}
    unit = dislodged.unit
    out = []
    for loc in sorted(graph.adjacency(unit.kind, unit.location), key=lambda l: (l.province, l.coast or "")):
        if loc.province in occupied or loc.province in dislodged.forbidden:
            continue
        if loc.province == dislodged.attacker_from:
            continue
        out.append(loc)
    return out


def validate_order(graph: MapGraph, state: GameState, order: Order, fleets=None) -> Optional[str]:
    """Return None when ``order`` is legal in ``state``, else a short reason."""
    a = order.action
    kind = state.phase_kind
    if kind is PhaseKind.ADJUSTMENT:
        return _validate_adjustment(graph, state, order)
    if isinstance(a, (Build, Waive)):
        return "builds only happen in adjustment phases"
    if order.unit is None:
        return "order has no unit"
    if kind is PhaseKind.RETREAT:
        entry = next((d for d in state.dislodged if d.unit.province == order.unit.province), None)
        if entry is None or entry.unit.power != order.power or entry.unit.kind is not order.unit.kind:
            return "no such dislodged unit"
        if isinstance(a, Disband):
            return None
        if not isinstance(a, Retreat):
            return "only retreats and disbands are allowed now"
        dest = _normalize_fleet_dest(graph, entry.unit, a.dest)
        if dest is None or dest not in retreat_options(graph, state, entry):
            return "illegal retreat destination"
        return None

    unit = state.unit_at(order.unit.province)
    if unit is None or unit.power != order.power or unit.kind is not order.unit.kind:
        return "no such unit"
    if isinstance(a, Hold):
        return None
    if isinstance(a, Move):
        if a.dest.province not in graph.provinces:
            return "unknown destination"
        if a.dest.province == unit.province:
            return "cannot move to own province"
        if unit.kind is UnitType.FLEET:
            if a.via_convoy:
                return "fleets cannot be convoyed"
            if _normalize_fleet_dest(graph, unit, a.dest) is None:
                return "fleet cannot reach destination"
            return None
        dest_terrain = graph.provinces[a.dest.province].terrain
        if dest_terrain is Terrain.WATER:
            return "army cannot enter water"
        if not a.via_convoy and a.dest.province in graph.army_adjacency.get(unit.province, ()):
            return None
        fleets = fleet_waters(state, graph) if fleets is None else fleets
        if dest_terrain is Terrain.COAST and a.dest.province in convoy_destinations(graph, unit.province, fleets):
            return None
        return "army cannot reach destination"
    if isinstance(a, SupportHold):
        target = state.unit_at(a.target.province)
        if target is None or target.kind is not a.target_kind:
            return "no such unit to support"
        if target.province == unit.province:
            return "a unit cannot support itself"
        if a.target.province not in support_reach(graph, unit):
            return "supporter cannot reach the supported province"
        return None
    if isinstance(a, SupportMove):
        target = state.unit_at(a.source.province)
        if target is None or target.kind is not a.target_kind:
            return "no such unit to support"
        if target.province == unit.province:
            return "a unit cannot support itself"
        if a.dest.province == unit.province:
            return "cannot support a move into own province"
        if a.dest.province not in support_reach(graph, unit):
            return "supporter cannot reach the destination"
        if not can_reach(graph, state, target, a.dest.province, fleets):
            return "supported unit cannot reach the destination"
        if a.dest.coast is not None and target.kind is UnitType.FLEET:
            if a.dest not in graph.adjacency(UnitType.FLEET, target.location):
                return "supported fleet cannot reach that coast"
        return None
    if isinstance(a, Convoy):
        if unit.kind is not UnitType.FLEET or graph.provinces[unit.province].terrain is not Terrain.WATER:
            return "only fleets at sea can convoy"
        army = state.unit_at(a.army_from.province)
        if army is None or army.kind is not UnitType.ARMY:
            return "no army to convoy"
        if a.army_to.province == a.army_from.province:
            return "convoy destination equals origin"
        if graph.provinces[a.army_to.province].terrain is not Terrain.COAST:
            return "convoy destination must be coastal"
        if graph.provinces[a.army_from.province].terrain is not Terrain.COAST:
            return "convoyed army must be on a coast"
        return None
    return "order not allowed in a movement phase"


def _normalize_fleet_dest(graph: MapGraph, unit: Unit, dest: Location) -> Optional[Location]:
    """The concrete location a move/retreat targets, or None if unreachable/ambiguous."""
    try:
        reach = graph.adjacency(unit.kind, unit.location)
    except Exception:
        return None
    if unit.kind is UnitType.ARMY:
        loc = Location(dest.province)
        return loc if loc in reach else None
    if dest.coast is None and graph.provinces.get(dest.province) and graph.provinces[dest.province].coasts:
        options = [l for l in reach if l.province == dest.province]
        return options[0] if len(options) == 1 else None
    return dest if dest in reach else None


def normalized_destination(graph: MapGraph, unit: Unit, dest: Location) -> Location:
    loc = _normalize_fleet_dest(graph, unit, dest)
    return loc if loc is not None else dest


def _validate_adjustment(graph: MapGraph, state: GameState, order: Order) -> Optional[str]:
    a = order.action
    delta = adjustment_delta(state, order.power)
    if isinstance(a, Waive):
        return None
    if isinstance(a, Build):
        if delta <= 0 or order.unit is None:
            return "no builds available"
        unit = order.unit
        if unit.power != order.power:
            return "build for another power"
        if unit.province not in graph.home_centers(order.power):
            return "can only build in home centers"
        if state.sc_ownership.get(unit.province) != order.power:
            return "home center not controlled"
        if state.unit_at(unit.province) is not None:
            return "home center is occupied"
        if not graph.is_legal_location(unit.kind, unit.location):
            return "unit type cannot be built there"
        return None
    if isinstance(a, Disband):
        if delta >= 0 or order.unit is None:
            return "no disbands required"
        unit = state.unit_at(order.unit.province)
        if unit is None or unit.power != order.power or unit.kind is not order.unit.kind:
            return "no such unit"
        return None
    return "only builds, disbands and waives are allowed now"


# -- enumeration -----------------------------------------------------------------

PossibleOrders = dict  # Unit | "BUILDS" -> list[Order]
BUILD_KEY = "BUILDS"


def _move_destinations(graph: MapGraph, state: GameState, unit: Unit, fleets: set[str]) -> list[Move]:
    moves = [Move(loc) for loc in sorted(graph.adjacency(unit.kind, unit.location), key=_loc_key)]
    if unit.kind is UnitType.ARMY:
        convoyable = convoy_destinations(graph, unit.province, fleets)
        moves += [Move(Location(p), True) for p in sorted(convoyable)]
    return moves


def _loc_key(loc: Location) -> tuple:
    return (loc.province, loc.coast or "")


def enumerate_possible_orders(graph: MapGraph, state: GameState, power: str) -> PossibleOrders:
    """Every legal order for ``power``'s units, keyed by unit.

    Supports and convoys are listed only for the power's own units. In
    adjustment phases builds are grouped under ``BUILD_KEY``.
    """
    kind = state.phase_kind
    if kind is PhaseKind.RETREAT:
        out: PossibleOrders = {}
        for d in state.dislodged_of(power):
            opts = [Order(power, d.unit, Retreat(loc)) for loc in retreat_options(graph, state, d)]
            out[d.unit] = opts + [Order(power, d.unit, Disband())]
        return out
    if kind is PhaseKind.ADJUSTMENT:
        return _enumerate_adjustments(graph, state, power)

    own = state.units_of(power)
    fleets = fleet_waters(state, graph)
    moves_by_unit = {u: _move_destinations(graph, state, u, fleets) for u in own}
    out = {}
    for u in own:
        opts = [Order(power, u, Hold())]
        opts += [Order(power, u, m) for m in moves_by_unit[u]]
        reach = support_reach(graph, u)
        for v in own:
            if v == u:
                continue
            if v.province in reach:
                opts.append(Order(power, u, SupportHold(v.kind, Location(v.province))))
            seen: set[str] = set()
            for m in moves_by_unit[v]:
                p = m.dest.province
                if p in seen or p == u.province or p not in reach:
                    continue
                seen.add(p)
                opts.append(Order(power, u, SupportMove(v.kind, Location(v.province), Location(p))))
        if u.kind is UnitType.FLEET and graph.provinces[u.province].terrain is Terrain.WATER:
            for army in own:
                if army.kind is not UnitType.ARMY:
                    continue
                for dest, chain in sorted(convoy_destinations(graph, army.province, fleets).items()):
                    if u.province in chain:
                        opts.append(Order(power, u, Convoy(Location(army.province), Location(dest))))
        out[u] = opts
    return out


def _enumerate_adjustments(graph: MapGraph, state: GameState, power: str) -> PossibleOrders:
    delta = adjustment_delta(state, power)
    out: PossibleOrders = {}
    if delta > 0:
        builds = []
        for h in buildable_sites(graph, state, power):
            if graph.provinces[h].terrain is not Terrain.WATER:
                builds.append(Order(power, Unit(power, UnitType.ARMY, Location(h)), Build()))
            for loc in graph.fleet_locations(h):
                builds.append(Order(power, Unit(power, UnitType.FLEET, loc), Build()))
        if builds:
            out[BUILD_KEY] = builds + [Order(power, None, Waive())]
    elif delta < 0:
        for u in state.units_of(power):
            out[u] = [Order(power, u, Disband())]
    return out


def flatten(possible: PossibleOrders) -> list[Order]:
    return [o for opts in possible.values() for o in opts]
