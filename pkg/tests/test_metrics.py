import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diplobench.mapgraph import POWERS
from diplobench.metrics import (
    DegenerateVariance,
    ScoreInputs,
    action_type,
    aggression_series,
    elapsed,
    game_score,
    invalid_order_rate,
    lexicon_aggression,
    mean_ci95,
    order_distribution,
    pearson_r,
    relative_incoming_sentiment,
)
from diplobench.prompts import Press
from diplobench.records import MatchRecord
from diplobench.runner import MatchConfig, run_match


def formula(y_max, sc, y_elim=None, y_win=None):
    """Direct re-evaluation: elapsed years alive + centers + early-win bonus."""
    alive = min(y_elim if y_elim is not None else math.inf, y_max) - 1900
    return alive + sc + ((y_max - y_win) if y_win is not None else 0)


# -- game score ----------------------------------------------------------------------


def test_worked_examples():
    assert game_score(ScoreInputs(1925, 6)) == 31
    assert game_score(ScoreInputs(1925, 0, y_elim=1905)) == 5
    assert game_score(ScoreInputs(1925, 18, y_win=1920)) == 48
    assert elapsed(1925) == 25 and elapsed(1901) == 1


def test_score_invariants():
    for bad in (
        dict(y_max=1925, sc_at_end=0, y_elim=1905, y_win=1905),
        dict(y_max=1925, sc_at_end=3, y_elim=1905),
        dict(y_max=1925, sc_at_end=17, y_win=1920),
        dict(y_max=1925, sc_at_end=35),
        dict(y_max=1925, sc_at_end=18, y_win=1926),
        dict(y_max=1899, sc_at_end=1),
    ):
        with pytest.raises(ValueError):
            ScoreInputs(**bad)


def random_inputs(rng):
    y_max = rng.randint(1901, 1940)
    kind = rng.choice(["survive", "elim", "win"])
    if kind == "elim":
        return ScoreInputs(y_max, 0, y_elim=rng.randint(1901, y_max))
    if kind == "win":
        return ScoreInputs(y_max, rng.randint(18, 34), y_win=rng.randint(1901, y_max))
    return ScoreInputs(y_max, rng.randint(0, 34))


def test_thousand_random_inputs():
    rng = random.Random(2024)
    for _ in range(1000):
        x = random_inputs(rng)
        assert game_score(x) == formula(x.y_max, x.sc_at_end, x.y_elim, x.y_win)
        assert game_score(x) <= elapsed(x.y_max) + 34 + (x.y_max - x.y_win if x.y_win else 0)


@given(st.integers(1901, 1950), st.integers(0, 33), st.data())
def test_monotone_in_centers(y_max, sc, data):
    assert game_score(ScoreInputs(y_max, sc + 1)) >= game_score(ScoreInputs(y_max, sc))
    y_win = data.draw(st.integers(1901, y_max))
    if sc >= 18:
        assert game_score(ScoreInputs(y_max, sc + 1, y_win=y_win)) >= game_score(ScoreInputs(y_max, sc, y_win=y_win))


@given(st.integers(1902, 1950), st.integers(18, 34), st.data())
def test_monotone_in_win_year(y_max, sc, data):
    y = data.draw(st.integers(1901, y_max - 1))
    assert game_score(ScoreInputs(y_max, sc, y_win=y)) >= game_score(ScoreInputs(y_max, sc, y_win=y + 1))


# -- synthetic records ---------------------------------------------------------------


def synthetic(rows, assignment=None, max_year=1925):
    """A MatchRecord from compact per-phase dicts; unspecified fields get neutral values."""
    phases = []
    for i, r in enumerate(rows):
        units = {p: 3 for p in POWERS}
        units.update(r.get("unit_counts", {}))
        rel = {p: {q: 0 for q in POWERS if q != p} for p in POWERS}
        for p, toward in r.get("incoming", {}).items():
            for q in POWERS:
                if q != p:
                    rel[q][p] = toward
        phases.append({
            "type": "phase",
            "phase": r.get("phase", f"S{1901 + i}M"),
            "orders": r.get("orders", []),
            "submissions": r.get("submissions", {}),
            "unit_counts": units,
            "sc_counts": {p: 3 for p in POWERS},
            "relationships": rel,
            "messages": r.get("messages", []),
        })
    return MatchRecord(config={"assignment": assignment or {p: "m" for p in POWERS}, "max_year": max_year}, phases=phases)


def sub(submitted, invalid):
    return {"submitted": submitted, "invalid_count": invalid}


# -- invalid rate --------------------------------------------------------------------


def test_invalid_rate_simple():
    rec = synthetic([{"submissions": {"FRANCE": sub(10, 1)}}])
    assert invalid_order_rate(rec, "FRANCE").rate == 0.1


def test_invalid_rate_absent_without_submissions():
    rec = synthetic([{"submissions": {"FRANCE": sub(0, 0)}}, {}])
    r = invalid_order_rate(rec, "FRANCE")
    assert r.rate is None and r.submitted == 0


def test_invalid_rate_by_unit_count():
    rows = [
        {"unit_counts": {"FRANCE": n}, "submissions": {"FRANCE": sub(n, 2 if n >= 8 else 0)}}
        for n in (3, 5, 7, 8, 9, 10)
    ]
    series = invalid_order_rate(synthetic(rows), "FRANCE").series()
    assert series == {3: 0.0, 5: 0.0, 7: 0.0, 8: 2 / 8, 9: 2 / 9, 10: 2 / 10}


# -- order distribution --------------------------------------------------------------


def orders(*texts, outcome="SUCCESS"):
    return [{"power": "FRANCE", "order": t, "outcome": outcome} for t in texts]


def test_action_type():
    assert [action_type(t) for t in ("A PAR H", "A PAR - BUR", "A MAR S A PAR - BUR", "F ENG C A LON - BRE", "A PAR B")] == [
        "hold", "move", "support", "convoy", "other",
    ]


def test_shares_fixture():
    texts = ["A PAR - BUR"] * 6 + ["A MAR H"] * 3 + ["F BRE S A PAR - BUR"]
    stats = order_distribution(synthetic([{"orders": orders(*texts)}]), "FRANCE")
    shares = stats.shares()
    assert (shares["move"], shares["hold"], shares["support"]) == (0.6, 0.3, 0.1)
    assert stats.total == 10 and sum(stats.outcome_counts.values()) == 10


def test_all_hold_bot_and_outcomes_match_engine():
    from diplobench.runner import replay_log, state_before
    from diplobench.adjudicator import resolve_phase
    from diplobench.orders import parse_order
    from diplobench.mapgraph import standard_map

    cfg = MatchConfig(assignment={p: "hold" for p in POWERS}, press=Press.NONE, negotiation_rounds=0, max_year=1903)
    rec = run_match(cfg)
    assert order_distribution(rec, "FRANCE").shares()["hold"] == 1.0

    cfg = MatchConfig(assignment={p: "random" for p in POWERS}, press=Press.NONE, negotiation_rounds=0, max_year=1904, seed=8)
    rec = run_match(cfg)
    graph = standard_map()
    engine: dict = {}
    for row in rec.phases:
        if not row["phase"].endswith("M"):
            continue
        state = state_before(rec, row["phase"], graph)
        submitted: dict = {}
        for o in row["orders"]:
            submitted.setdefault(o["power"], []).append(parse_order(o["order"], o["power"], state, graph))
        for r in resolve_phase(graph, state, submitted).outcomes:
            if r.power == "FRANCE":
                engine[r.outcome.value] = engine.get(r.outcome.value, 0) + 1
    stats = order_distribution(rec, "FRANCE")
    assert stats.outcome_counts == dict(sorted(engine.items()))
    assert sum(stats.type_counts.values()) == sum(stats.outcome_counts.values())
    assert replay_log(rec) == []


# -- sentiment -----------------------------------------------------------------------


def test_single_model_is_zero():
    rec = synthetic([{"unit_counts": {"FRANCE": 3}, "incoming": {"FRANCE": 1}}, {"unit_counts": {"FRANCE": 5}, "incoming": {"FRANCE": -2}}])
    out = relative_incoming_sentiment({"A": [rec]}, power="FRANCE")
    assert out == {"A": 0.0}


def test_two_model_fixture():
    a = synthetic([{"unit_counts": {"FRANCE": 3}, "incoming": {"FRANCE": 1}}, {"unit_counts": {"FRANCE": 4}, "incoming": {"FRANCE": 0}}])
    b = synthetic([{"unit_counts": {"FRANCE": 3}, "incoming": {"FRANCE": -1}}, {"unit_counts": {"FRANCE": 5}, "incoming": {"FRANCE": 2}}])
    # size 3 is shared: means 1 and -1, cross-model mean 0; sizes 4 and 5 have no peer
    assert relative_incoming_sentiment({"A": [a], "B": [b]}, power="FRANCE") == {"A": 1.0, "B": -1.0}


def test_no_overlap_is_absent():
    a = synthetic([{"unit_counts": {"FRANCE": 3}, "incoming": {"FRANCE": 1}}])
    b = synthetic([{"unit_counts": {"FRANCE": 6}, "incoming": {"FRANCE": 1}}])
    assert relative_incoming_sentiment({"A": [a], "B": [b]}, power="FRANCE") == {"A": None, "B": None}


def test_model_powers_from_assignment():
    assignment = {p: ("A" if p == "ITALY" else "B") for p in POWERS}
    rec = synthetic([{"unit_counts": {"ITALY": 3}, "incoming": {"ITALY": 2}}], assignment)
    out = relative_incoming_sentiment({"A": [rec], "B": [rec]})
    assert out["A"] > 0 > out["B"]


# -- aggression ----------------------------------------------------------------------


def chat(sender, text):
    return {"kind": "global", "sender": sender, "recipient": None, "content": text, "phase": "S1901M", "round": 1}


def test_aggression_series():
    rec = synthetic([
        {"messages": [[chat("FRANCE", "a"), chat("ITALY", "zzz")], [chat("FRANCE", "bb")]]},
        {"messages": [[]]},
        {"messages": [[chat("FRANCE", "cccc")]]},
    ])
    scores = {"a": 0.2, "bb": 0.6, "cccc": 1.0}
    assert aggression_series(rec, "FRANCE", scores.__getitem__) == [("S1901M", pytest.approx(0.4)), ("S1903M", 1.0)]
    assert aggression_series(rec, "FRANCE", lambda t: 0.0) == [("S1901M", 0.0), ("S1903M", 0.0)]


def test_classifier_failure_skips(caplog):
    rec = synthetic([{"messages": [[chat("FRANCE", "ok"), chat("FRANCE", "boom")]]}])

    def clf(text):
        if text == "boom":
            raise RuntimeError("classifier down")
        return 0.5

    assert aggression_series(rec, "FRANCE", clf) == [("S1901M", 0.5)]
    assert "classifier failed" in caplog.text


def test_no_press_series_is_empty():
    cfg = MatchConfig(assignment={p: "random-chatty" for p in POWERS}, press=Press.NONE, negotiation_rounds=0, max_year=1902)
    assert aggression_series(run_match(cfg), "FRANCE") == []


def test_lexicon():
    assert lexicon_aggression("") == 0.0
    assert lexicon_aggression("we will attack") == 1.0
    assert lexicon_aggression("peace and friendship for all of us now") == 0.0
    assert lexicon_aggression("I attack you in spring maybe later my friend okay") == pytest.approx(0.4)


# -- statistics ----------------------------------------------------------------------


def test_pearson():
    xs = [1, 2, 3, 4, 5]
    assert pearson_r(xs, [2 * x + 1 for x in xs]) == pytest.approx(1.0)
    assert pearson_r(xs, [-x for x in xs]) == pytest.approx(-1.0)
    # hand: dx = -2..2, dy = -2,0,1,0,1; Sxy = 6, Sxx = 10, Syy = 6
    assert pearson_r(xs, [2, 4, 5, 4, 5]) == pytest.approx(6 / math.sqrt(60), abs=1e-12)
    with pytest.raises(DegenerateVariance):
        pearson_r(xs, [3] * 5)
    with pytest.raises(ValueError):
        pearson_r([1], [1])


@given(
    st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30),
    st.floats(0.1, 10), st.floats(-10, 10),
)
def test_pearson_properties(pairs, scale, shift):
    xs, ys = [float(x) for x, _ in pairs], [float(y) for _, y in pairs]
    try:
        r = pearson_r(xs, ys)
    except DegenerateVariance:
        return
    assert -1.0 <= r <= 1.0
    assert pearson_r([scale * x + shift for x in xs], ys) == pytest.approx(r, abs=1e-9)


def test_mean_ci95():
    assert mean_ci95([5.0]) == (5.0, None)
    assert mean_ci95([5.0, 5.0, 5.0]) == (5.0, (5.0, 5.0))
    mean, (lo, hi) = mean_ci95([1.0, 2.0, 3.0, 4.0])
    half = 1.96 * math.sqrt(5 / 3) / 2
    assert mean == 2.5 and lo == pytest.approx(2.5 - half) and hi == pytest.approx(2.5 + half)
