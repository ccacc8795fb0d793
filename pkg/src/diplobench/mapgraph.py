"""Board topology: provinces, unit-type adjacency, shortest paths.

The map is read from a small line-oriented document (see ``data/standard.map``)::

    PROVINCE <id> <terrain> [SC] [HOME <power>] [COASTS <list>] [NAME <display name>]
    EDGE <ARMY|FLEET> <loc> <loc>

Edges are directed in the file and must be listed in both directions.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional

POWERS = ("AUSTRIA", "ENGLAND", "FRANCE", "GERMANY", "ITALY", "RUSSIA", "TURKEY")
COAST_IDS = ("NC", "SC", "EC", "WC")


class MapError(ValueError):
    """Base class for map loading and query errors."""


class MalformedMap(MapError):
    pass


class DuplicateProvince(MapError):
    pass


class AsymmetricAdjacency(MapError):
    pass


class UnknownCoast(MapError):
    pass


class UnknownTerrain(MapError):
    pass


class UnknownProvince(MapError):
    pass


class IllegalLocation(MapError):
    """A unit type was queried somewhere it can never stand."""


class Terrain(str, enum.Enum):
    LAND = "LAND"
    COAST = "COAST"
    WATER = "WATER"


class UnitType(str, enum.Enum):
    ARMY = "A"
    FLEET = "F"


@dataclass(frozen=True)
class Province:
    id: str
    display_name: str
    terrain: Terrain
    is_supply_center: bool = False
    home_power: Optional[str] = None
    coasts: tuple[str, ...] = ()


@dataclass(frozen=True, order=True)
class Location:
    province: str
    coast: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.province}/{self.coast}" if self.coast else self.province

    @classmethod
    def parse(cls, text: str) -> "Location":
        text = text.strip().upper()
        if "/" in text:
            prov, coast = text.split("/", 1)
            return cls(prov, coast)
        return cls(text)


@dataclass
class MapGraph:
    provinces: dict[str, Province]
    army_adjacency: dict[str, frozenset[str]]
    fleet_adjacency: dict[Location, frozenset[Location]]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- basic lookups -------------------------------------------------

    def province(self, pid: str) -> Province:
        try:
            return self.provinces[pid]
        except KeyError:
            raise UnknownProvince(pid) from None

    @property
    def supply_centers(self) -> frozenset[str]:
        if "scs" not in self._cache:
            self._cache["scs"] = frozenset(p.id for p in self.provinces.values() if p.is_supply_center)
        return self._cache["scs"]

    def home_centers(self, power: str) -> tuple[str, ...]:
        return tuple(sorted(p.id for p in self.provinces.values() if p.home_power == power))

    @property
    def powers(self) -> tuple[str, ...]:
        found = {p.home_power for p in self.provinces.values() if p.home_power}
        return tuple(p for p in POWERS if p in found) + tuple(sorted(found - set(POWERS)))

    def is_legal_location(self, unit_type: UnitType, loc: Location) -> bool:
        prov = self.provinces.get(loc.province)
        if prov is None:
            return False
        if unit_type is UnitType.ARMY:
            return prov.terrain is not Terrain.WATER and loc.coast is None
        if prov.terrain is Terrain.LAND:
            return False
        if prov.coasts:
            return loc.coast in prov.coasts
        return loc.coast is None

    def fleet_locations(self, pid: str) -> tuple[Location, ...]:
        prov = self.province(pid)
        if prov.terrain is Terrain.LAND:
            return ()
        if prov.coasts:
            return tuple(Location(pid, c) for c in prov.coasts)
        return (Location(pid),)

    # -- queries -------------------------------------------------------

    def adjacency(self, unit_type: UnitType, at: Location) -> frozenset[Location]:
        """One-step destinations for ``unit_type`` standing at ``at``."""
        prov = self.province(at.province)
        if unit_type is UnitType.ARMY:
            if prov.terrain is Terrain.WATER:
                raise IllegalLocation(f"army cannot stand in water province {at.province}")
            return frozenset(Location(p) for p in self.army_adjacency.get(at.province, ()))
        if prov.terrain is Terrain.LAND:
            raise IllegalLocation(f"fleet cannot stand in landlocked province {at.province}")
        if prov.coasts and at.coast is None:
            raise IllegalLocation(f"fleet in {at.province} needs a coast")
        return self.fleet_adjacency.get(at, frozenset())

    def reachable_provinces(self, unit_type: UnitType, at: Location) -> frozenset[str]:
        """Province ids reachable in one step (coasts folded)."""
        return frozenset(loc.province for loc in self.adjacency(unit_type, at))

    def shortest_path(self, unit_type: UnitType, start: Location, to: str) -> Optional[list[str]]:
        """Minimum-length walk from ``start`` to province ``to``, or None if unreachable.

        Frontier expansion is in lexicographic order, so among equal-length walks
        the lexicographically smallest sequence of province ids is returned.
        Dual-coast provinces are coast-qualified nodes for fleets; the returned
        walk lists province ids only.
        """
        self.province(to)
        if not self.is_legal_location(unit_type, start):
            if unit_type is UnitType.FLEET and start.coast is None and self.province(start.province).coasts:
                raise IllegalLocation(f"fleet in {start.province} needs a coast")
            self.adjacency(unit_type, start)  # raises the precise error
            raise IllegalLocation(str(start))
        if start.province == to:
            return [to]
        parents = self._bfs_tree(unit_type, start)
        goals = [n for n in parents if n.province == to]
        if not goals:
            return None
        # all goal nodes share the minimal depth only if BFS order says so; pick the first visited
        node = min(goals, key=lambda n: parents[n][1])
        walk = []
        while node is not None:
            walk.append(node.province)
            node = parents[node][0]
        return walk[::-1]

    def distance(self, unit_type: UnitType, start: Location, to: str) -> Optional[int]:
        path = self.shortest_path(unit_type, start, to)
        return None if path is None else len(path) - 1

    def _bfs_tree(self, unit_type: UnitType, start: Location) -> dict[Location, tuple[Optional[Location], int]]:
        """BFS from ``start``; maps node -> (parent, visit order)."""
        key = ("bfs", unit_type, start)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        parents: dict[Location, tuple[Optional[Location], int]] = {start: (None, 0)}
        frontier = [start]
        order = 1
        while frontier:
            nxt = []
            for node in frontier:
                for nb in sorted(self.adjacency(unit_type, node), key=lambda l: (l.province, l.coast or "")):
                    if nb not in parents:
                        parents[nb] = (node, order)
                        order += 1
                        nxt.append(nb)
            # keep lexicographic walk order: sort next frontier by the walk that reached it
            frontier = sorted(nxt, key=lambda n: _walk_key(parents, n))
        self._cache[key] = parents
        return parents

    def province_distances(self, start: str) -> dict[str, int]:
        """Province-level BFS distances over the union of army and fleet edges."""
        key = ("union", start)
        if key in self._cache:
            return self._cache[key]
        graph: dict[str, set[str]] = {p: set() for p in self.provinces}
        for a, bs in self.army_adjacency.items():
            graph[a].update(bs)
        for a, bs in self.fleet_adjacency.items():
            graph[a.province].update(b.province for b in bs)
        dist = {start: 0}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nb in graph[cur]:
                if nb not in dist:
                    dist[nb] = dist[cur] + 1
                    queue.append(nb)
        self._cache[key] = dist
        return dist


def _walk_key(parents, node) -> tuple[str, ...]:
    walk = []
    while node is not None:
        walk.append(node.province + ("/" + node.coast if node.coast else ""))
        node = parents[node][0]
    return tuple(reversed(walk))


# -- loading -------------------------------------------------------------


def _parse_location(token: str) -> Location:
    return Location.parse(token)


def load_map(source: str) -> MapGraph:
    """Parse and validate a map-description document."""
    provinces: dict[str, Province] = {}
    army_edges: list[tuple[str, str, int]] = []
    fleet_edges: list[tuple[Location, Location, int]] = []

    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].upper()
        if head == "PROVINCE":
            provinces_entry = _parse_province(tokens[1:], lineno)
            if provinces_entry.id in provinces:
                raise DuplicateProvince(f"line {lineno}: duplicate province {provinces_entry.id}")
            provinces[provinces_entry.id] = provinces_entry
        elif head == "EDGE":
            if len(tokens) != 4:
                raise MalformedMap(f"line {lineno}: EDGE needs a unit type and two locations")
            kind = tokens[1].upper()
            if kind == "ARMY":
                army_edges.append((tokens[2].upper(), tokens[3].upper(), lineno))
            elif kind == "FLEET":
                fleet_edges.append((_parse_location(tokens[2]), _parse_location(tokens[3]), lineno))
            else:
                raise MalformedMap(f"line {lineno}: unknown edge kind {tokens[1]!r}")
        else:
            raise MalformedMap(f"line {lineno}: unknown record {tokens[0]!r}")

    if not provinces:
        raise MalformedMap("map document defines no provinces")

    army: dict[str, set[str]] = {}
    for a, b, lineno in army_edges:
        for pid in (a, b):
            if pid not in provinces:
                raise UnknownProvince(f"line {lineno}: {pid}")
            if provinces[pid].terrain is Terrain.WATER:
                raise MalformedMap(f"line {lineno}: army edge touches water province {pid}")
        army.setdefault(a, set()).add(b)

    fleet: dict[Location, set[Location]] = {}
    for a, b, lineno in fleet_edges:
        for loc in (a, b):
            prov = provinces.get(loc.province)
            if prov is None:
                raise UnknownProvince(f"line {lineno}: {loc.province}")
            if loc.coast is not None and loc.coast not in prov.coasts:
                raise UnknownCoast(f"line {lineno}: {loc} names a coast {loc.province} does not have")
            if prov.terrain is Terrain.LAND:
                raise MalformedMap(f"line {lineno}: fleet edge touches landlocked province {loc.province}")
            if prov.coasts and loc.coast is None:
                raise UnknownCoast(f"line {lineno}: fleet edge at {loc.province} must name a coast")
        fleet.setdefault(a, set()).add(b)

    for a, bs in army.items():
        for b in bs:
            if a not in army.get(b, ()):
                raise AsymmetricAdjacency(f"ARMY edge {a}->{b} has no reverse {b}->{a}")
    for a, bs in fleet.items():
        for b in bs:
            if a not in fleet.get(b, ()):
                raise AsymmetricAdjacency(f"FLEET edge {a}->{b} has no reverse {b}->{a}")

    return MapGraph(
        provinces=provinces,
        army_adjacency={k: frozenset(v) for k, v in army.items()},
        fleet_adjacency={k: frozenset(v) for k, v in fleet.items()},
    )


def _parse_province(tokens: list[str], lineno: int) -> Province:
    if len(tokens) < 2:
        raise MalformedMap(f"line {lineno}: PROVINCE needs an id and a terrain")
    pid = tokens[0].upper()
    if len(pid) != 3 or not pid.isalpha():
        raise MalformedMap(f"line {lineno}: province id {pid!r} is not a 3-letter code")
    try:
        terrain = Terrain(tokens[1].upper())
    except ValueError:
        raise UnknownTerrain(f"line {lineno}: {tokens[1]!r}") from None
    sc = False
    home = None
    coasts: tuple[str, ...] = ()
    name = pid
    i = 2
    while i < len(tokens):
        tok = tokens[i].upper()
        if tok == "SC":
            sc = True
            i += 1
        elif tok == "HOME" and i + 1 < len(tokens):
            home = tokens[i + 1].upper()
            i += 2
        elif tok == "COASTS" and i + 1 < len(tokens):
            coasts = tuple(c.upper() for c in tokens[i + 1].split(","))
            for c in coasts:
                if c not in COAST_IDS:
                    raise UnknownCoast(f"line {lineno}: unknown coast {c!r}")
            i += 2
        elif tok == "NAME":
            name = " ".join(tokens[i + 1:]) or pid
            break
        else:
            raise MalformedMap(f"line {lineno}: unexpected token {tokens[i]!r}")
    if coasts and terrain is not Terrain.COAST:
        raise MalformedMap(f"line {lineno}: only COAST provinces may list coasts")
    return Province(pid, name, terrain, sc, home, coasts)


@lru_cache(maxsize=1)
def standard_map() -> MapGraph:
    """The bundled standard board (cached; treat as immutable)."""
    text = resources.files("diplobench.data").joinpath("standard.map").read_text()
    return load_map(text)


def iter_locations(graph: MapGraph, unit_type: UnitType) -> Iterable[Location]:
    for pid in sorted(graph.provinces):
        if unit_type is UnitType.ARMY:
            if graph.provinces[pid].terrain is not Terrain.WATER:
                yield Location(pid)
        else:
            yield from graph.fleet_locations(pid)
