import pytest
from hypothesis import given
from hypothesis import strategies as st

from diplobench.adjudicator import OrderOutcome, resolve_phase
from diplobench.board import PhaseKind, Season, custom_state, initial_state, make_unit
from diplobench.mapgraph import POWERS, Location, UnitType
from diplobench.orders import (
    BUILD_KEY,
    Build,
    Hold,
    IllegalCoast,
    MalformedSyntax,
    Move,
    NotYourUnit,
    Order,
    OrderError,
    SupportMove,
    UnknownProvince,
    enumerate_possible_orders,
    flatten,
    parse_order,
    render_order,
    validate_order,
)

from helpers import random_reachable_state


@pytest.fixture(scope="module")
def opening(graph):
    return initial_state(graph)


def test_parse_move_both_spacings(graph, opening):
    expected = Order("FRANCE", make_unit("FRANCE", "A PAR"), Move(Location("PIC")))
    assert parse_order("A PAR - PIC", "FRANCE", opening, graph) == expected
    assert parse_order("a par-pic", "FRANCE", opening, graph) == expected
    assert parse_order("A Par-Pic", "FRANCE", opening, graph) == expected


def test_parse_coastal_fleet(graph):
    state = custom_state({"FRANCE": ["F SPA/SC"]})
    order = parse_order("F SPA/SC - MAO", "FRANCE", state, graph)
    assert order == Order("FRANCE", make_unit("FRANCE", "F SPA/SC"), Move(Location("MAO")))


def test_parse_hold(graph):
    state = custom_state({"ITALY": ["A VEN"]})
    assert parse_order("A VEN H", "ITALY", state, graph).action == Hold()


def test_parse_errors(graph, opening):
    with pytest.raises(UnknownProvince):
        parse_order("A XYZ - PIC", "FRANCE", opening, graph)
    with pytest.raises(NotYourUnit):
        parse_order("A BER - KIE", "FRANCE", opening, graph)
    with pytest.raises(MalformedSyntax):
        parse_order("march on paris", "FRANCE", opening, graph)
    with pytest.raises(IllegalCoast):
        parse_order("F BRE - PAR/NC", "FRANCE", opening, graph)


def test_render_examples(graph):
    assert render_order(Order("FRANCE", make_unit("FRANCE", "A PAR"), Move(Location("PIC")))) == "A PAR - PIC"
    support = Order("TURKEY", make_unit("TURKEY", "F ANK"), SupportMove(UnitType.FLEET, Location("SEV"), Location("ARM")))
    assert render_order(support) == "F ANK S F SEV - ARM"
    build = Order("RUSSIA", make_unit("RUSSIA", "F STP/NC"), Build())
    assert render_order(build) == "F STP/NC B"
    winter = custom_state({}, {"STP": "RUSSIA"}, season=Season.WINTER, phase_kind=PhaseKind.ADJUSTMENT)
    assert parse_order("F STP/NC B", "RUSSIA", winter, graph) == build


def test_enumerate_opening_army_paris(graph, opening):
    possible = enumerate_possible_orders(graph, opening, "FRANCE")
    texts = [render_order(o) for o in possible[make_unit("FRANCE", "A PAR")]]
    moves = {t for t in texts if " - " in t and " S " not in t}
    assert moves == {"A PAR - BUR", "A PAR - PIC", "A PAR - BRE", "A PAR - GAS"}
    assert "A PAR H" in texts
    assert "A PAR S A MAR - BUR" in texts
    # supports of foreign units are never listed
    for order in flatten(possible):
        target = getattr(order.action, "source", None) or getattr(order.action, "target", None)
        if target is not None:
            assert opening.unit_at(target.province).power == "FRANCE"


def test_enumerate_no_units(graph):
    assert enumerate_possible_orders(graph, custom_state({"ITALY": ["A VEN"]}), "FRANCE") == {}


def test_enumerate_builds(graph):
    winter = custom_state(
        {"RUSSIA": ["A MOS"]},
        {"STP": "RUSSIA", "MOS": "RUSSIA", "SEV": "RUSSIA", "WAR": "RUSSIA"},
        season=Season.WINTER,
        phase_kind=PhaseKind.ADJUSTMENT,
    )
    texts = [render_order(o) for o in enumerate_possible_orders(graph, winter, "RUSSIA")[BUILD_KEY]]
    assert {"F STP/NC B", "F STP/SC B", "A WAR B", "WAIVE"} <= set(texts)
    assert not any("MOS" in t for t in texts)  # occupied home center


def test_cross_power_support_validates(graph):
    state = custom_state({"AUSTRIA": ["A TYR"], "ITALY": ["A VEN"]})
    order = parse_order("A TYR S A VEN - TRI", "AUSTRIA", state, graph)
    assert validate_order(graph, state, order) is None
    assert order not in flatten(enumerate_possible_orders(graph, state, "AUSTRIA"))


@given(st.integers(0, 100_000), st.integers(0, 30))
def test_enumerated_orders_round_trip_and_adjudicate(graph, seed, phases):
    state = random_reachable_state(graph, seed, phases)
    for power in POWERS:
        for order in flatten(enumerate_possible_orders(graph, state, power)):
            assert parse_order(render_order(order), power, state, graph) == order
            if order.unit is not None:
                assert order.unit.power == power
            res = resolve_phase(graph, state, {power: [order]})
            mine = [r for r in res.outcomes if r.order == order]
            assert mine and mine[0].outcome is not OrderOutcome.INVALID


@given(st.integers(0, 100_000), st.integers(0, 20), st.data())
def test_completeness_of_single_moves(graph, seed, phases, data):
    """Any move the engine accepts is among the enumerated orders."""
    state = random_reachable_state(graph, seed, phases)
    if state.phase_kind is not PhaseKind.MOVEMENT or not state.units:
        return
    unit = data.draw(st.sampled_from(state.units))
    dest = data.draw(st.sampled_from(sorted(graph.provinces)))
    locs = graph.fleet_locations(dest) if unit.kind is UnitType.FLEET and graph.provinces[dest].coasts else (Location(dest),)
    listed = flatten(enumerate_possible_orders(graph, state, unit.power))
    for loc in locs:
        for via in (False, True):
            order = Order(unit.power, unit, Move(loc, via))
            if validate_order(graph, state, order) is None:
                assert order in listed


@given(st.binary(max_size=40))
def test_parse_fuzz_never_crashes(graph, blob):
    text = blob.decode("utf-8", errors="replace")
    state = initial_state(graph)
    try:
        result = parse_order(text, "FRANCE", state, graph)
    except OrderError:
        return
    assert isinstance(result, Order)
