"""Game state values: units, the phase clock, supply-center ownership."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .mapgraph import POWERS, Location, MapGraph, UnitType


class Season(str, enum.Enum):
    SPRING = "SPRING"
    FALL = "FALL"
    WINTER = "WINTER"


class PhaseKind(str, enum.Enum):
    MOVEMENT = "MOVEMENT"
    RETREAT = "RETREAT"
    ADJUSTMENT = "ADJUSTMENT"


@dataclass(frozen=True, order=True)
class Unit:
    power: str
    kind: UnitType
    location: Location

    @property
    def province(self) -> str:
        return self.location.province

    def __str__(self) -> str:
        return f"{self.kind.value} {self.location}"

    def describe(self) -> str:
        return f"{self.kind.value} {self.location} ({self.power})"


@dataclass(frozen=True)
class DislodgedUnit:
    unit: Unit
    attacker_from: Optional[str]
    forbidden: frozenset[str] = frozenset()


def phase_name(season: Season, year: int, kind: PhaseKind) -> str:
    return f"{season.value[0]}{year}{kind.value[0]}"


def parse_phase_name(name: str) -> tuple[Season, int, PhaseKind]:
    name = name.strip().upper()
    seasons = {"S": Season.SPRING, "F": Season.FALL, "W": Season.WINTER}
    kinds = {"M": PhaseKind.MOVEMENT, "R": PhaseKind.RETREAT, "A": PhaseKind.ADJUSTMENT}
    if len(name) < 3 or name[0] not in seasons or name[-1] not in kinds or not name[1:-1].isdigit():
        raise ValueError(f"not a phase name: {name!r}")
    return seasons[name[0]], int(name[1:-1]), kinds[name[-1]]


@dataclass(frozen=True)
class GameState:
    year: int
    season: Season
    phase_kind: PhaseKind
    units: tuple[Unit, ...]
    sc_ownership: dict[str, str]
    dislodged: tuple[DislodgedUnit, ...] = ()
    started_year: int = 1901
    winner: Optional[str] = None
    # provinces contested by a standoff in the preceding movement phase
    contested: frozenset[str] = frozenset()

    def __hash__(self) -> int:  # dict field; hash by digest instead
        return hash(self.digest())

    @property
    def phase(self) -> str:
        return phase_name(self.season, self.year, self.phase_kind)

    def unit_at(self, province: str) -> Optional[Unit]:
        for u in self.units:
            if u.location.province == province:
                return u
        return None

    def units_of(self, power: str) -> list[Unit]:
        return [u for u in self.units if u.power == power]

    def dislodged_of(self, power: str) -> list[DislodgedUnit]:
        return [d for d in self.dislodged if d.unit.power == power]

    def centers_of(self, power: str) -> list[str]:
        return sorted(p for p, owner in self.sc_ownership.items() if owner == power)

    def sc_counts(self) -> dict[str, int]:
        return {p: len(self.centers_of(p)) for p in POWERS}

    def is_eliminated(self, power: str) -> bool:
        return not self.centers_of(power) and not self.units_of(power) and not self.dislodged_of(power)

    def alive_powers(self) -> list[str]:
        return [p for p in POWERS if not self.is_eliminated(p)]

    def with_units(self, units: Iterable[Unit], **changes) -> "GameState":
        return replace(self, units=tuple(sorted(units, key=_unit_key)), **changes)

    def to_dict(self) -> dict:
        return {
            "year": self.year,
            "season": self.season.value,
            "phase_kind": self.phase_kind.value,
            "units": [unit_to_dict(u) for u in sorted(self.units, key=_unit_key)],
            "sc_ownership": dict(sorted(self.sc_ownership.items())),
            "dislodged": [
                {
                    "unit": unit_to_dict(d.unit),
                    "attacker_from": d.attacker_from,
                    "forbidden": sorted(d.forbidden),
                }
                for d in self.dislodged
            ],
            "started_year": self.started_year,
            "winner": self.winner,
            "contested": sorted(self.contested),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GameState":
        return cls(
            year=data["year"],
            season=Season(data["season"]),
            phase_kind=PhaseKind(data["phase_kind"]),
            units=tuple(sorted((unit_from_dict(u) for u in data["units"]), key=_unit_key)),
            sc_ownership=dict(data["sc_ownership"]),
            dislodged=tuple(
                DislodgedUnit(unit_from_dict(d["unit"]), d.get("attacker_from"), frozenset(d.get("forbidden", ())))
                for d in data.get("dislodged", ())
            ),
            started_year=data.get("started_year", 1901),
            winner=data.get("winner"),
            contested=frozenset(data.get("contested", ())),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def check_invariants(self, graph: MapGraph) -> None:
        seen: set[str] = set()
        for u in self.units:
            if u.province in seen:
                raise ValueError(f"two units in {u.province}")
            seen.add(u.province)
            if not graph.is_legal_location(u.kind, u.location):
                raise ValueError(f"{u} stands on an illegal location")
        for prov in self.sc_ownership:
            if prov not in graph.supply_centers:
                raise ValueError(f"{prov} is owned but is not a supply center")


def _unit_key(u: Unit) -> tuple:
    return (u.location.province, u.location.coast or "", u.power, u.kind.value)


def unit_to_dict(u: Unit) -> dict:
    return {"power": u.power, "kind": u.kind.value, "location": str(u.location)}


def unit_from_dict(d: dict) -> Unit:
    return Unit(d["power"], UnitType(d["kind"]), Location.parse(d["location"]))


STARTING_UNITS = {
    "AUSTRIA": ("A BUD", "A VIE", "F TRI"),
    "ENGLAND": ("F EDI", "F LON", "A LVP"),
    "FRANCE": ("F BRE", "A MAR", "A PAR"),
    "GERMANY": ("F KIE", "A BER", "A MUN"),
    "ITALY": ("F NAP", "A ROM", "A VEN"),
    "RUSSIA": ("A MOS", "A WAR", "F SEV", "F STP/SC"),
    "TURKEY": ("F ANK", "A CON", "A SMY"),
}


def make_unit(power: str, spec: str) -> Unit:
    kind, loc = spec.split()
    return Unit(power, UnitType(kind.upper()), Location.parse(loc))


def initial_state(graph: MapGraph, year: int = 1901) -> GameState:
    units = [make_unit(p, s) for p, specs in STARTING_UNITS.items() for s in specs]
    owners = {
        pid: prov.home_power
        for pid, prov in graph.provinces.items()
        if prov.is_supply_center and prov.home_power
    }
    return GameState(
        year=year,
        season=Season.SPRING,
        phase_kind=PhaseKind.MOVEMENT,
        units=tuple(sorted(units, key=_unit_key)),
        sc_ownership=owners,
        started_year=year,
    )


def custom_state(
    units: dict[str, Iterable[str]],
    sc_ownership: Optional[dict[str, str]] = None,
    year: int = 1901,
    season: Season = Season.SPRING,
    phase_kind: PhaseKind = PhaseKind.MOVEMENT,
) -> GameState:
    """Build a state from ``{"FRANCE": ["A PAR", "F BRE"], ...}``."""
    built = [make_unit(p, s) for p, specs in units.items() for s in specs]
    return GameState(
        year=year,
        season=season,
        phase_kind=phase_kind,
        units=tuple(sorted(built, key=_unit_key)),
        sc_ownership=dict(sc_ownership or {}),
    )


__all__ = [
    "DislodgedUnit",
    "GameState",
    "PhaseKind",
    "Season",
    "Unit",
    "custom_state",
    "initial_state",
    "make_unit",
    "parse_phase_name",
    "phase_name",
    "unit_from_dict",
    "unit_to_dict",
]
