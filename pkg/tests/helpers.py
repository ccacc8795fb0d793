"""Shared test utilities: an independent BFS oracle and random reachable states."""

import random
from collections import deque

from diplobench.adjudicator import advance_phase, resolve_phase
from diplobench.board import PhaseKind, initial_state
from diplobench.mapgraph import POWERS, UnitType
from diplobench.orders import BUILD_KEY, enumerate_possible_orders


def bfs_distance(graph, kind, start_loc, target):
    """Breadth-first distance in provinces, ignoring tie-breaking and caches."""
    if start_loc.province == target:
        return 0
    seen = {start_loc}
    queue = deque([(start_loc, 0)])
    while queue:
        loc, d = queue.popleft()
        if kind is UnitType.ARMY:
            nxt = [type(loc)(p, None) for p in graph.army_adjacency[loc.province]]
        else:
            nxt = list(graph.fleet_adjacency[loc])
        for n in nxt:
            if n.province == target:
                return d + 1
            if n not in seen:
                seen.add(n)
                queue.append((n, d + 1))
    return None


def random_orders(graph, state, rng):
    orders = {}
    for p in POWERS:
        possible = enumerate_possible_orders(graph, state, p)
        chosen = []
        for key, options in sorted(possible.items(), key=lambda kv: str(kv[0])):
            if key == BUILD_KEY or not options:
                continue
            chosen.append(rng.choice(options))
        if state.phase_kind is PhaseKind.ADJUSTMENT:
            chosen = []  # let the engine handle removals; no builds
        orders[p] = chosen
    return orders


def random_reachable_state(graph, seed, phases):
    rng = random.Random(seed)
    state = initial_state(graph)
    for _ in range(phases):
        resolution = resolve_phase(graph, state, random_orders(graph, state, rng))
        state = advance_phase(graph, state, resolution)
        if state.winner:
            break
    return state
