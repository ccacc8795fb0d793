import json

import pytest

from diplobench.agent import RelationshipLevel
from diplobench.board import PhaseKind, Season, initial_state
from diplobench.csa import (
    Intervention,
    Snapshot,
    SnapshotError,
    capture_snapshot,
    replay_phase,
    run_persuasion_experiment,
    shift_magnitude,
    snapshot_opening,
    write_trials,
)
from diplobench.llm import HoldBot
from diplobench.mapgraph import POWERS
from diplobench.prompts import Press
from diplobench.runner import MatchConfig, run_match


def everyone(binding):
    return {p: binding for p in POWERS}


@pytest.fixture(scope="module")
def long_match():
    cfg = MatchConfig(assignment=everyone("random-chatty"), max_year=1920, seed=5, match_id="m5")
    return run_match(cfg)


class Spy(HoldBot):
    def __init__(self):
        self.prompts = []

    def complete(self, conversation, context=None):
        self.prompts.append((context.power, context.purpose, context.attempt, tuple(conversation)))
        return super().complete(conversation, context)


def test_capture_late_phase(long_match, tmp_path):
    snap = capture_snapshot(long_match, "S1920M")
    assert (snap.state.year, snap.state.season, snap.state.phase_kind) == (1920, Season.SPRING, PhaseKind.MOVEMENT)
    assert snap.source_match == "m5" and snap.source_phase == "S1920M"
    before = long_match.phases[long_match.phase_names().index("S1920M") - 1]
    for p in POWERS:
        assert {q: int(v) for q, v in snap.agents[p].relationships.items()} == before["relationships"][p]
        assert list(snap.agents[p].goals) == before["goals"][p]
    assert [h.phase for h in snap.history][-1] == "F1919M"
    path = tmp_path / "snap.json"
    snap.save(path)
    assert Snapshot.load(path) == snap
    # a log file works as the source too
    log = tmp_path / "m5.jsonl"
    long_match.save(log)
    assert capture_snapshot(str(log), "S1920M") == snap


def test_capture_opening(graph):
    cfg = MatchConfig(assignment=everyone("hold"), max_year=1901)
    record = run_match(cfg)
    snap = capture_snapshot(record, "S1901M")
    assert snap.state == initial_state(graph)
    assert snap == snapshot_opening(cfg)


def test_capture_errors(long_match):
    with pytest.raises(SnapshotError):
        capture_snapshot(long_match, "S1930M")
    data = snapshot_opening(MatchConfig(assignment=everyone("hold"))).to_dict()
    data["version"] = "diplobench.snapshot/0"
    with pytest.raises(SnapshotError):
        Snapshot.from_dict(data)


def test_intervention_validation():
    with pytest.raises(ValueError):
        Intervention(relationship_overrides=(("ITALY", "TURKEY", RelationshipLevel.ENEMY),) * 2)
    with pytest.raises(ValueError):
        Intervention(relationship_overrides=(("ITALY", "ITALY", RelationshipLevel.ENEMY),))
    with pytest.raises(ValueError):
        Intervention(method="BRIBERY")


def test_depth_and_independence():
    snap = snapshot_opening(MatchConfig(assignment=everyone("random-chatty"), seed=2))
    trials = replay_phase(snap, depth=30)
    assert [t.trial for t in trials] == list(range(30))
    assert len({t.seed for t in trials}) == 30
    # every trial starts from the same board: same relationships baseline, no carry-over
    assert all(t.relationship_deltas.keys() == set(POWERS) for t in trials)
    again = replay_phase(snap, depth=30, parallel_trials=1)
    assert [t.to_dict() for t in trials] == [t.to_dict() for t in again]
    assert len({json.dumps(t.orders) for t in trials}) > 1


def test_model_substitution_routes_only_that_power():
    spy, other = Spy(), Spy()
    snap = snapshot_opening(MatchConfig(assignment=everyone("hold")))
    replay_phase(snap, Intervention(model_substitutions={"ITALY": "spy"}), depth=2, models={"spy": spy, "hold": other})
    assert {p for p, *_ in spy.prompts} == {"ITALY"}
    assert "ITALY" not in {p for p, *_ in other.prompts}


def test_intervention_locality():
    snap = snapshot_opening(MatchConfig(assignment=everyone("hold")))
    plain, injected = Spy(), Spy()
    replay_phase(snap, depth=1, models={"hold": plain})
    replay_phase(snap, Intervention(prompt_injections={"TURKEY": "Secret mission."}), depth=1, models={"hold": injected})

    def others(spy):
        return sorted(x for x in spy.prompts if x[0] != "TURKEY")

    assert others(plain) == others(injected) and others(plain)
    assert any("Secret mission." in c for p, _, _, conv in injected.prompts if p == "TURKEY" for _, c in conv)


def test_token_usage_scales_with_depth():
    snap = snapshot_opening(MatchConfig(assignment=everyone("random-chatty"), seed=9))
    one = replay_phase(snap, depth=1)[0].total_usage.total
    many = sum(t.total_usage.total for t in replay_phase(snap, depth=10))
    assert 0.8 * 10 * one <= many <= 1.2 * 10 * one


def test_shift_magnitude():
    assert shift_magnitude(0) == 0
    assert shift_magnitude(int(RelationshipLevel.NEUTRAL) - int(RelationshipLevel.ENEMY)) == 2
    assert shift_magnitude(int(RelationshipLevel.ALLY) - int(RelationshipLevel.ENEMY)) == 4
    assert shift_magnitude(-1) == 0


def persuasion_snapshot():
    cfg = MatchConfig(assignment={**everyone("susceptible"), "TURKEY": "persuader"}, seed=1)
    return snapshot_opening(cfg)


@pytest.mark.parametrize("method,rate,mag", [("JAILBREAK", 1.0, 2.0), ("REASON", 0.0, 0.0)])
def test_persuasion_plumbing(method, rate, mag, tmp_path):
    stats = run_persuasion_experiment(persuasion_snapshot(), method, "TURKEY", depth=20)
    assert stats.success_rate == rate and stats.mean_magnitude == mag
    assert len(stats.trials) == 20
    for p, m in stats.per_power_magnitude.items():
        assert (m > 0) == (stats.per_power_success[p] > 0)
    assert stats.trial_sum_magnitude == [int(6 * mag)] * 20
    assert stats.trial_max_magnitude == [int(mag)] * 20
    out = tmp_path / "trials.jsonl"
    write_trials(stats.trials, out, stats.summary())
    assert len(out.read_text().splitlines()) == 20
    assert json.loads(out.with_suffix(".summary.json").read_text())["success_rate"] == rate


def test_no_shift_trial():
    cfg = MatchConfig(assignment={**everyone("hold"), "TURKEY": "persuader"}, seed=1)
    stats = run_persuasion_experiment(snapshot_opening(cfg), "JAILBREAK", "TURKEY", depth=2)
    assert stats.success_rate == 0.0 and stats.mean_magnitude == 0.0
    assert all(t.relationships[p]["TURKEY"] == -2 for t in stats.trials for p in POWERS if p != "TURKEY")


def test_persuasion_needs_press():
    cfg = MatchConfig(assignment=everyone("hold"), press=Press.NONE, negotiation_rounds=0)
    stats = run_persuasion_experiment(snapshot_opening(cfg), "JAILBREAK", "TURKEY", depth=1)
    assert stats.trials[0].messages == []
