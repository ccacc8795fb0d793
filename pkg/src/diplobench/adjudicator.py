"""Simultaneous order resolution for movement, retreat and adjustment phases.

Movement uses a guess-and-check resolver over per-order decisions. When a
decision depends on itself through a cycle with two consistent answers (or
none), the backup rule applies: a cycle that involves a convoy is a convoy
paradox and the convoys in it fail; any other cycle is circular movement and
the moves in it all succeed.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional

from .board import DislodgedUnit, GameState, PhaseKind, Season, Unit
from .mapgraph import POWERS, Location, MapGraph, Terrain, UnitType
from .orders import (
    Build,
    Convoy,
    Disband,
    Hold,
    Move,
    Order,
    Retreat,
    SupportHold,
    SupportMove,
    adjustment_delta,
    fleet_waters,
    normalized_destination,
    validate_order,
)

WIN_CENTERS = 18


class OrderOutcome(str, enum.Enum):
    SUCCESS = "SUCCESS"
    BOUNCE = "BOUNCE"
    CUT = "CUT"
    DISLODGED = "DISLODGED"
    VOID = "VOID"
    INVALID = "INVALID"


class PhaseMismatch(ValueError):
    pass


@dataclass(frozen=True)
class OrderResult:
    power: str
    order: Order
    outcome: OrderOutcome
    reason: Optional[str] = None


@dataclass(frozen=True)
class PhaseResolution:
    phase: str
    outcomes: tuple[OrderResult, ...]
    next_state: GameState
    notes: tuple[str, ...] = ()

    def outcome_of(self, order: Order) -> Optional[OrderOutcome]:
        for r in self.outcomes:
            if r.order == order:
                return r.outcome
        return None

    def by_power(self) -> dict[str, list[OrderResult]]:
        out: dict[str, list[OrderResult]] = {}
        for r in self.outcomes:
            out.setdefault(r.power, []).append(r)
        return out


OrdersByPower = Mapping[str, Iterable[Order]]


def _ordered_items(orders: OrdersByPower) -> list[tuple[str, Order]]:
    known = [p for p in POWERS if p in orders] + sorted(p for p in orders if p not in POWERS)
    return [(p, o) for p in known for o in orders[p]]


# -- movement ----------------------------------------------------------------------

_UNRESOLVED, _GUESSING, _RESOLVED = 0, 1, 2


class _MovementResolver:
    def __init__(self, graph: MapGraph, state: GameState, actions: dict[str, object]):
        self.graph = graph
        self.state = state
        self.units = {u.province: u for u in state.units}
        self.actions = actions  # province -> effective action
        self.moves_to: dict[str, list[str]] = {}
        for p, a in actions.items():
            if isinstance(a, Move):
                self.moves_to.setdefault(a.dest.province, []).append(p)
        self.convoyed = {p for p in actions if self._is_convoyed(p)}
        self.status: dict[str, int] = {}
        self.result: dict[str, bool] = {}
        self.deps: list[str] = []
        self.failed_paths: set[str] = set()

    # ---- static facts

    def _is_convoyed(self, p: str) -> bool:
        a = self.actions[p]
        unit = self.units[p]
        if not isinstance(a, Move) or unit.kind is not UnitType.ARMY:
            return False
        if a.via_convoy:
            return True
        if a.dest.province not in self.graph.army_adjacency.get(p, ()):
            return True
        # an adjacent move is still convoyed when the army's own power convoys it
        for q in self._convoyers(p):
            if self.units[q].power == unit.power:
                return True
        return False

    def _convoyers(self, p: str) -> list[str]:
        a = self.actions[p]
        return sorted(
            q
            for q, c in self.actions.items()
            if isinstance(c, Convoy) and c.army_from.province == p and c.army_to.province == a.dest.province
        )

    def head_to_head(self, p: str) -> Optional[str]:
        a = self.actions[p]
        q = a.dest.province
        b = self.actions.get(q)
        if isinstance(b, Move) and b.dest.province == p and p not in self.convoyed and q not in self.convoyed:
            return q
        return None

    # ---- resolver core

    def resolve(self, p: str) -> bool:
        st = self.status.get(p, _UNRESOLVED)
        if st == _RESOLVED:
            return self.result[p]
        if st == _GUESSING:
            if p not in self.deps:
                self.deps.append(p)
            return self.result[p]
        old = len(self.deps)
        self.status[p] = _GUESSING
        self.result[p] = False
        first = self._adjudicate(p)
        if len(self.deps) == old:
            if self.status[p] != _RESOLVED:
                self.status[p] = _RESOLVED
                self.result[p] = first
            return self.result[p]
        if self.deps[old] != p:
            # part of a larger cycle; report upward with the guess-based answer
            self.deps.append(p)
            self.result[p] = first
            return first
        # p is the start of a cycle: try the other guess
        for q in self.deps[old:]:
            self.status[q] = _UNRESOLVED
        del self.deps[old:]
        self.status[p] = _GUESSING
        self.result[p] = True
        second = self._adjudicate(p)
        if first == second:
            for q in self.deps[old:]:
                self.status[q] = _UNRESOLVED
            del self.deps[old:]
            self.status[p] = _RESOLVED
            self.result[p] = first
            return first
        self._backup_rule(self.deps[old:] or [p], p)
        del self.deps[old:]
        return self.resolve(p)

    def _backup_rule(self, cycle: list[str], start: str) -> None:
        members = list(dict.fromkeys([start] + cycle))
        convoys = {q for q in members if isinstance(self.actions[q], Convoy)}
        for q in members:
            self.status[q] = _UNRESOLVED
        if convoys:
            # convoy paradox: the convoys in the cycle fail
            for c in convoys:
                self.status[c] = _RESOLVED
                self.result[c] = False
            for q in self.convoyed:
                if set(self._convoyers(q)) & convoys:
                    self.failed_paths.add(q)
        else:
            # circular movement: every move in the cycle succeeds
            for q in members:
                if isinstance(self.actions[q], Move):
                    self.status[q] = _RESOLVED
                    self.result[q] = True

    def _adjudicate(self, p: str) -> bool:
        a = self.actions[p]
        if isinstance(a, Move):
            return self._move_succeeds(p)
        if isinstance(a, (SupportHold, SupportMove)):
            return not self._support_cut(p)
        if isinstance(a, Convoy):
            return not self._dislodged(p)
        return True

    # ---- decisions

    def path_ok(self, p: str) -> bool:
        if p not in self.convoyed:
            return True
        if p in self.failed_paths:
            return False
        convoyers = self._convoyers(p)
        if not convoyers:
            return False
        dest = self.actions[p].dest.province
        if not self._route(p, dest, set(convoyers), resolve=False):
            return False
        unattacked = {q for q in convoyers if not self.moves_to.get(q)}
        if self._route(p, dest, unattacked, resolve=False):
            return True
        return self._route(p, dest, set(convoyers), resolve=True)

    def _route(self, start: str, dest: str, fleets: set[str], resolve: bool) -> bool:
        def usable(q: str) -> bool:
            return q in fleets and (not resolve or self.resolve(q))

        touching_dest = _waters_touching(self.graph, dest)
        seen: set[str] = set()
        queue = deque()
        for w in sorted(_waters_touching(self.graph, start)):
            if usable(w):
                seen.add(w)
                queue.append(w)
        while queue:
            w = queue.popleft()
            if w in touching_dest:
                return True
            for nb in sorted(self.graph.fleet_adjacency.get(Location(w), ()), key=lambda l: l.province):
                q = nb.province
                if q not in seen and usable(q):
                    seen.add(q)
                    queue.append(q)
        return False

    def _supports_for_move(self, p: str) -> list[str]:
        a = self.actions[p]
        out = []
        for s, b in self.actions.items():
            if not isinstance(b, SupportMove) or b.source.province != p:
                continue
            if b.dest.province != a.dest.province:
                continue
            if b.dest.coast is not None and a.dest.coast is not None and b.dest.coast != a.dest.coast:
                continue
            out.append(s)
        return sorted(out)

    def _supports_for_hold(self, q: str) -> list[str]:
        if isinstance(self.actions.get(q), Move):
            return []
        return sorted(
            s for s, b in self.actions.items() if isinstance(b, SupportHold) and b.target.province == q
        )

    def hold_strength(self, q: str) -> int:
        if q not in self.units:
            return 0
        if isinstance(self.actions[q], Move):
            return 0 if self.resolve(q) else 1
        return 1 + sum(1 for s in self._supports_for_hold(q) if self.resolve(s))

    def attack_strength(self, p: str) -> int:
        if not self.path_ok(p):
            return 0
        q = self.actions[p].dest.province
        target = self.units.get(q)
        mover = self.units[p]
        supports = self._supports_for_move(p)
        vacated = (
            target is not None
            and isinstance(self.actions[q], Move)
            and self.head_to_head(p) is None
            and self.resolve(q)
        )
        if target is None or vacated:
            return 1 + sum(1 for s in supports if self.resolve(s))
        if target.power == mover.power:
            return 0
        return 1 + sum(
            1 for s in supports if self.units[s].power != target.power and self.resolve(s)
        )

    def defend_strength(self, p: str) -> int:
        return 1 + sum(1 for s in self._supports_for_move(p) if self.resolve(s))

    def prevent_strength(self, p: str) -> int:
        if not self.path_ok(p):
            return 0
        opp = self.head_to_head(p)
        if opp is not None and self.resolve(opp):
            return 0
        return 1 + sum(1 for s in self._supports_for_move(p) if self.resolve(s))

    def _move_succeeds(self, p: str) -> bool:
        if not self.path_ok(p):
            return False
        q = self.actions[p].dest.province
        attack = self.attack_strength(p)
        opp = self.head_to_head(p)
        if opp is not None:
            if attack <= self.defend_strength(opp):
                return False
        elif attack <= self.hold_strength(q):
            return False
        for other in self.moves_to.get(q, ()):
            if other != p and attack <= self.prevent_strength(other):
                return False
        return True

    def _dislodged(self, q: str) -> bool:
        if isinstance(self.actions.get(q), Move) and self.resolve(q):
            return False
        return self.dislodger(q) is not None

    def dislodger(self, q: str) -> Optional[str]:
        for src in self.moves_to.get(q, ()):
            if self.resolve(src):
                return src
        return None

    def _support_cut(self, s: str) -> bool:
        b = self.actions[s]
        supporter = self.units[s]
        for src in self.moves_to.get(s, ()):
            if self.units[src].power == supporter.power:
                continue
            if isinstance(b, SupportMove) and src == b.dest.province:
                continue
            if src in self.convoyed and not self.path_ok(src):
                continue
            return True
        return self._dislodged(s)


def _waters_touching(graph: MapGraph, pid: str) -> set[str]:
    out = set()
    for loc in graph.fleet_locations(pid):
        for nb in graph.fleet_adjacency.get(loc, ()):
            if graph.provinces[nb.province].terrain is Terrain.WATER:
                out.add(nb.province)
    return out


def _check_phase(state: GameState, kind: PhaseKind) -> None:
    if state.phase_kind is not kind:
        raise PhaseMismatch(f"{state.phase} is not a {kind.value.lower()} phase")


def resolve_movement(graph: MapGraph, state: GameState, orders: OrdersByPower) -> PhaseResolution:
    _check_phase(state, PhaseKind.MOVEMENT)
    fleets = fleet_waters(state, graph)
    actions: dict[str, object] = {u.province: Hold() for u in state.units}
    submitted: list[tuple[str, Order, Optional[str]]] = []
    taken: set[str] = set()
    for power, order in _ordered_items(orders):
        reason = validate_order(graph, state, order, fleets)
        if reason is None and order.unit.province in taken:
            reason = "unit already has an order"
        if reason is None:
            taken.add(order.unit.province)
            a = order.action
            if isinstance(a, Move):
                a = replace(a, dest=normalized_destination(graph, order.unit, a.dest))
            actions[order.unit.province] = a
        submitted.append((power, order, reason))

    r = _MovementResolver(graph, state, actions)
    for p in sorted(actions):
        if not isinstance(actions[p], Hold):
            r.resolve(p)

    moved = {p for p, a in actions.items() if isinstance(a, Move) and r.resolve(p)}
    dislodged_by: dict[str, str] = {}
    for p in sorted(actions):
        if p in moved:
            continue
        src = r.dislodger(p)
        if src is not None:
            dislodged_by[p] = src

    new_units: list[Unit] = []
    for p, unit in r.units.items():
        if p in moved:
            new_units.append(replace(unit, location=actions[p].dest))
        elif p not in dislodged_by:
            new_units.append(unit)
    occupied = {u.province for u in new_units}
    contested = frozenset(
        q
        for q, srcs in r.moves_to.items()
        if q not in occupied and any(s not in moved and r.path_ok(s) for s in srcs)
    )
    dislodged = []
    for p in sorted(dislodged_by):
        src = dislodged_by[p]
        origin = None if src in r.convoyed else src
        forbidden = set(contested)
        if origin:
            forbidden.add(origin)
        dislodged.append(DislodgedUnit(r.units[p], origin, frozenset(forbidden)))

    results = []
    for power, order, reason in submitted:
        if reason is not None:
            results.append(OrderResult(power, order, OrderOutcome.INVALID, reason))
            continue
        results.append(OrderResult(power, order, _movement_outcome(r, order, moved, dislodged_by)))

    next_state = state.with_units(new_units, dislodged=tuple(dislodged), contested=contested)
    return PhaseResolution(state.phase, tuple(results), next_state)


def _movement_outcome(r: _MovementResolver, order: Order, moved, dislodged_by) -> OrderOutcome:
    p = order.unit.province
    a = r.actions[p]
    if isinstance(a, Move):
        if p in moved:
            return OrderOutcome.SUCCESS
        if not r.path_ok(p):
            return OrderOutcome.VOID
        if p in dislodged_by:
            return OrderOutcome.DISLODGED
        return OrderOutcome.BOUNCE
    if p in dislodged_by:
        return OrderOutcome.DISLODGED
    if isinstance(a, SupportHold):
        if isinstance(r.actions.get(a.target.province), Move):
            return OrderOutcome.VOID
        return OrderOutcome.SUCCESS if r.resolve(p) else OrderOutcome.CUT
    if isinstance(a, SupportMove):
        src = a.source.province
        if not isinstance(r.actions.get(src), Move) or p not in r._supports_for_move(src):
            return OrderOutcome.VOID
        return OrderOutcome.SUCCESS if r.resolve(p) else OrderOutcome.CUT
    if isinstance(a, Convoy):
        army = a.army_from.province
        b = r.actions.get(army)
        if not (isinstance(b, Move) and b.dest.province == a.army_to.province and army in r.convoyed):
            return OrderOutcome.VOID
        return OrderOutcome.SUCCESS if r.resolve(p) else OrderOutcome.VOID
    return OrderOutcome.SUCCESS


# -- retreats ----------------------------------------------------------------------


def resolve_retreats(graph: MapGraph, state: GameState, orders: OrdersByPower) -> PhaseResolution:
    _check_phase(state, PhaseKind.RETREAT)
    chosen: dict[str, tuple[str, Order]] = {}
    results: list[Optional[OrderResult]] = []
    pending: list[tuple[int, str, Order]] = []
    for power, order in _ordered_items(orders):
        reason = validate_order(graph, state, order)
        if reason is None and order.unit.province in chosen:
            reason = "unit already has an order"
        if reason is not None:
            results.append(OrderResult(power, order, OrderOutcome.INVALID, reason))
            continue
        chosen[order.unit.province] = (power, order)
        pending.append((len(results), power, order))
        results.append(None)

    targets: dict[str, list[str]] = {}
    dests: dict[str, Location] = {}
    for prov, (power, order) in chosen.items():
        if isinstance(order.action, Retreat):
            dest = normalized_destination(graph, order.unit, order.action.dest)
            dests[prov] = dest
            targets.setdefault(dest.province, []).append(prov)

    survivors = list(state.units)
    notes = []
    for idx, power, order in pending:
        prov = order.unit.province
        if isinstance(order.action, Retreat):
            if len(targets[dests[prov].province]) > 1:
                results[idx] = OrderResult(power, order, OrderOutcome.BOUNCE, "retreat collision")
            else:
                survivors.append(replace(order.unit, location=dests[prov]))
                results[idx] = OrderResult(power, order, OrderOutcome.SUCCESS)
        else:
            results[idx] = OrderResult(power, order, OrderOutcome.SUCCESS)
    for d in state.dislodged:
        if d.unit.province not in chosen:
            notes.append(f"{d.unit.describe()} disbanded without orders")

    next_state = state.with_units(survivors, dislodged=(), contested=frozenset())
    return PhaseResolution(state.phase, tuple(results), next_state, tuple(notes))


# -- adjustments -------------------------------------------------------------------


def auto_disband_order(graph: MapGraph, state: GameState, power: str) -> list[Unit]:
    """Units of ``power`` ranked for forced removal, first removed first."""
    homes = [h for h in graph.home_centers(power) if state.sc_ownership.get(h) == power]
    homes = homes or list(graph.home_centers(power))

    def distance(u: Unit) -> int:
        dist = graph.province_distances(u.province)
        vals = [dist[h] for h in homes if h in dist]
        return min(vals) if vals else 10**6

    return sorted(
        state.units_of(power),
        key=lambda u: (-distance(u), 0 if u.kind is UnitType.FLEET else 1, u.province),
    )


def resolve_adjustments(graph: MapGraph, state: GameState, orders: OrdersByPower) -> PhaseResolution:
    _check_phase(state, PhaseKind.ADJUSTMENT)
    results: list[OrderResult] = []
    units = list(state.units)
    notes = []
    by_power: dict[str, list[Order]] = {}
    for power, order in _ordered_items(orders):
        by_power.setdefault(power, []).append(order)

    for power in POWERS:
        delta = adjustment_delta(state, power)
        built: set[str] = set()
        removed: set[str] = set()
        for order in by_power.get(power, ()):
            reason = validate_order(graph, state, order)
            a = order.action
            if reason is None and isinstance(a, Build):
                if len(built) >= delta:
                    reason = "no builds left"
                elif order.unit.province in built:
                    reason = "already building there"
            if reason is None and isinstance(a, Disband):
                if len(removed) >= -delta:
                    reason = "no disbands left"
                elif order.unit.province in removed:
                    reason = "unit already disbanded"
            if reason is not None:
                results.append(OrderResult(power, order, OrderOutcome.INVALID, reason))
                continue
            if isinstance(a, Build):
                built.add(order.unit.province)
                units.append(order.unit)
            elif isinstance(a, Disband):
                removed.add(order.unit.province)
            results.append(OrderResult(power, order, OrderOutcome.SUCCESS))
        if delta < 0:
            for u in auto_disband_order(graph, state, power):
                if len(removed) >= -delta:
                    break
                if u.province not in removed:
                    removed.add(u.province)
                    notes.append(f"{u.describe()} disbanded automatically")
        units = [u for u in units if not (u.power == power and u.province in removed)]

    next_state = state.with_units(units, dislodged=(), contested=frozenset())
    # other powers' units are untouched; order results were appended per power
    extra = sorted(p for p in by_power if p not in POWERS)
    for power in extra:
        for order in by_power[power]:
            results.append(OrderResult(power, order, OrderOutcome.INVALID, "unknown power"))
    return PhaseResolution(state.phase, tuple(results), next_state, tuple(notes))


def resolve_phase(graph: MapGraph, state: GameState, orders: OrdersByPower) -> PhaseResolution:
    kind = state.phase_kind
    if kind is PhaseKind.MOVEMENT:
        return resolve_movement(graph, state, orders)
    if kind is PhaseKind.RETREAT:
        return resolve_retreats(graph, state, orders)
    return resolve_adjustments(graph, state, orders)


# -- phase clock -------------------------------------------------------------------


def needs_adjustment(graph: MapGraph, state: GameState) -> bool:
    occupied = {u.province for u in state.units}
    for power in POWERS:
        delta = adjustment_delta(state, power)
        if delta < 0:
            return True
        if delta > 0 and any(
            state.sc_ownership.get(h) == power and h not in occupied for h in graph.home_centers(power)
        ):
            return True
    return False


def _year_end(graph: MapGraph, board: GameState) -> GameState:
    owners = dict(board.sc_ownership)
    for u in board.units:
        if u.province in graph.supply_centers:
            owners[u.province] = u.power
    board = replace(board, sc_ownership=owners, dislodged=(), contested=frozenset())
    counts = board.sc_counts()
    leader = max(POWERS, key=lambda p: (counts[p], -POWERS.index(p)))
    winner = leader if counts[leader] >= WIN_CENTERS else None
    board = replace(board, winner=winner)
    if needs_adjustment(graph, board):
        return replace(board, season=Season.WINTER, phase_kind=PhaseKind.ADJUSTMENT)
    return replace(board, year=board.year + 1, season=Season.SPRING, phase_kind=PhaseKind.MOVEMENT)


def advance_phase(graph: MapGraph, state: GameState, resolution: PhaseResolution) -> GameState:
    """The state at the start of the phase after ``resolution``."""
    if resolution.phase != state.phase:
        raise PhaseMismatch(f"resolution for {resolution.phase} applied to {state.phase}")
    board = resolution.next_state
    kind, season = state.phase_kind, state.season
    if kind is PhaseKind.MOVEMENT:
        if board.dislodged:
            return replace(board, phase_kind=PhaseKind.RETREAT)
        if season is Season.SPRING:
            return replace(board, season=Season.FALL, contested=frozenset())
        return _year_end(graph, board)
    if kind is PhaseKind.RETREAT:
        if season is Season.SPRING:
            return replace(board, season=Season.FALL, phase_kind=PhaseKind.MOVEMENT)
        return _year_end(graph, board)
    return replace(
        board, year=board.year + 1, season=Season.SPRING, phase_kind=PhaseKind.MOVEMENT
    )
