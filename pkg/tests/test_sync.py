import math

import numpy as np
import pytest

from hasl_osc import expr
from hasl_osc.desp import GspnModel, StopCondition, TimedEvent, Transition, simulate
from hasl_osc.lha import AUTONOMOUS, DeterminismFault, Edge, EventSet, Lha, Location, Update
from hasl_osc.models import gene_expression, transcription_counter
from hasl_osc.sync import (
    ACCEPTED, DEADLOCK, END_OF_TRACE, EVENT_BUDGET, NO_EDGE, NO_INITIAL, REJECTED, TIME_BUDGET,
    EVENT_AVERAGE, ResourceBudget, replay, synchronize,
)

from conftest import random_times, replay_single, to_events


def cond(text):
    return tuple(expr.parse_condition(text))


CLOCK = (("t", expr.Num(1.0)),)


def watcher(horizon):
    """Follows every event and accepts at model time ``horizon``."""
    locs = [Location("l0", (), CLOCK), Location("end")]
    edges = [Edge("l0", "l0", EventSet()), Edge("l0", "end", AUTONOMOUS, cond(f"t >= {horizon}"))]
    return Lha(locs, ["l0"], ["end"], ["t"], edges)


# ---------------------------------------------------------------------------
# synchronize


@pytest.mark.parametrize("seed", range(5))
def test_counter_accepts_after_three_transcriptions(seed):
    out = synchronize(gene_expression(), transcription_counter(3), np.random.default_rng(seed),
                      record_moves=True)
    assert out.verdict == ACCEPTED and out.reason == "final"
    assert out.valuation["n"] == 3
    assert sum(m.event == "transc" for m in out.moves) == 3
    assert out.moves[-1].event is None and out.moves[-1].target == "l1"
    assert out.valuation["t"] == pytest.approx(out.model_time)
    assert out.valuation["a"] == out.marking["protA"]


def test_deadlock_before_completion_rejects():
    m = GspnModel(["P", "mrnA"], [Transition.make("transc", {"P": 1}, {"mrnA": 1})], {"P": 2})
    out = synchronize(m, transcription_counter(3, observed="mrnA"), np.random.default_rng(0))
    assert (out.verdict, out.reason) == (REJECTED, DEADLOCK)
    assert out.valuation["n"] == 2


def test_failed_initial_invariant_rejects_immediately():
    a = Lha([Location("l0", cond("protA >= 5")), Location("l1")], ["l0"], ["l1"], [], [])
    out = synchronize(gene_expression(), a, np.random.default_rng(0))
    assert (out.verdict, out.reason, out.event_count) == (REJECTED, NO_INITIAL, 0)


def test_initial_location_chosen_by_invariant():
    a = Lha([Location("lo", cond("protA <= 1")), Location("hi", cond("protA >= 2")), Location("f")],
            ["lo", "hi"], ["f"], [], [Edge("hi", "f", AUTONOMOUS)])
    out = synchronize(gene_expression(), a, np.random.default_rng(0))
    assert out.accepted and out.model_time == 0.0


def test_budgets_flag_exhaustion():
    a = transcription_counter(10**6)
    out = synchronize(gene_expression(), a, np.random.default_rng(1), ResourceBudget(max_events=50))
    assert (out.reason, out.event_count) == (EVENT_BUDGET, 50) and out.budget_exhausted
    out = synchronize(gene_expression(), a, np.random.default_rng(1), ResourceBudget(max_time=3.0))
    assert out.reason == TIME_BUDGET and out.model_time <= 3.0


# ---------------------------------------------------------------------------
# replay


def test_replayed_trace_with_three_transcriptions():
    events = [TimedEvent("bind", 0.5, (1, 0, 1, 0)), TimedEvent("transc", 1.0, (1, 0, 1, 1)),
              TimedEvent("transc", 2.0, (1, 0, 1, 2)), TimedEvent("transl", 2.5, (2, 0, 1, 2)),
              TimedEvent("transc", 4.0, (2, 0, 1, 3))]
    init = {"protA": 2, "geneA": 1, "A_geneA": 0, "mrnA": 0}
    out = replay(events, init, transcription_counter(3))
    assert out.accepted and out.valuation["t"] == 4.0 and out.valuation["a"] == 2
    assert [(m.source, m.target) for m in out.moves][-1] == ("l0", "l1")
    short = replay(events[:4], init, transcription_counter(3))
    assert (short.verdict, short.reason) == (REJECTED, END_OF_TRACE)


def test_empty_trace_accepted_through_zero_delay_chain():
    locs = [Location("a"), Location("b"), Location("c")]
    a = Lha(locs, ["a"], ["c"], [], [Edge("a", "b", AUTONOMOUS), Edge("b", "c", AUTONOMOUS)])
    out = replay([], {"A": 0}, a)
    assert out.accepted and out.model_time == 0.0
    assert [m.target for m in out.moves] == ["b", "c"]


def test_autonomous_edge_wins_a_tie_with_an_event():
    # at t = 1 both the clock guard and the event are due; the event edge would reject
    locs = [Location("l0", (), CLOCK), Location("end"), Location("trap")]
    edges = [Edge("l0", "end", AUTONOMOUS, cond("t >= 1")), Edge("l0", "trap", EventSet())]
    a = Lha(locs, ["l0"], ["end"], ["t"], edges)
    out = replay_single(to_events([1], [1.0]), a)
    assert out.accepted and out.event_count == 0


def test_synchronous_guard_reads_the_post_event_marking():
    locs = [Location("l0"), Location("end")]
    a = Lha(locs, ["l0"], ["end"], ["x"], [
        Edge("l0", "end", EventSet(), cond("A >= 3")),
        Edge("l0", "l0", EventSet(), cond("A < 3")),
    ])
    out = replay_single(to_events([1, 2, 3, 4]), a)
    assert out.accepted and out.event_count == 3


def test_no_enabled_edge_rejects():
    a = Lha([Location("l0"), Location("end")], ["l0"], ["end"], [],
            [Edge("l0", "l0", EventSet(frozenset(["inc"])))])
    out = replay_single(to_events([1, 0]), a)
    assert (out.verdict, out.reason, out.event_count) == (REJECTED, NO_EDGE, 2)


def test_runaway_autonomous_chain_faults():
    # cyclic zero-delay edges (a checker escape) are caught at run time
    a = Lha([Location("a"), Location("b"), Location("f", cond("A >= 5"))], ["a"], ["f"], [], [
        Edge("a", "b", AUTONOMOUS), Edge("b", "a", AUTONOMOUS)])
    with pytest.raises(DeterminismFault):
        replay([], {"A": 0}, a)


def test_histogram_increments_and_overflow():
    locs = [Location("l0"), Location("end")]
    upd = Update.make({}, [("H", "A / 2")])
    a = Lha(locs, ["l0"], ["end"], [], [
        Edge("l0", "l0", EventSet(), cond("A < 9"), upd),
        Edge("l0", "end", EventSet(), cond("A >= 9")),
    ], arrays={"H": 3})
    out = replay_single(to_events([1, 2, 5, 6, 7, 9]), a)
    assert out.accepted
    assert out.arrays["H"].tolist() == [1, 1, 1]
    assert out.overflow["H"] == 2


# ---------------------------------------------------------------------------
# path statistics


def naive_stats(events, start, horizon):
    times = [0.0] + [e.time for e in events if e.time <= horizon] + [horizon]
    values = [start] + [e.marking_after[0] for e in events if e.time <= horizon]
    area = sum(v * (t1 - t0) for v, t0, t1 in zip(values, times, times[1:]))
    return min(values), max(values), area / horizon, values[-1]


@pytest.mark.parametrize("seed", range(20))
def test_statistics_match_a_naive_recomputation(seed, rng):
    rng.seed(seed)
    n = rng.randint(1, 60)
    values = [rng.randint(0, 40) for _ in range(n)]
    times = random_times(rng, n)
    horizon = times[-1] + 0.75
    events = to_events(values, times)
    out = replay(events, {"A": 5}, watcher(horizon), tracked={"A": "A", "lin": "2 * A + t"})
    lo, hi, avg, last = naive_stats(events, 5, horizon)
    s = out.statistics
    assert out.accepted
    assert (s.min["A"], s.max["A"], s.last["A"]) == (lo, hi, last)
    assert s.avg("A") == pytest.approx(avg, rel=1e-12)
    # 2A + t is affine, so the trapezoid rule stays exact
    assert s.avg("lin") == pytest.approx(2 * avg + horizon / 2, rel=1e-12)
    assert s.min["A"] <= s.avg("A") <= s.max["A"]
    assert s.min["A"] <= s.avg("A", EVENT_AVERAGE) <= s.max["A"]


def test_tracked_max_of_a_crafted_trace():
    a = transcription_counter(2)
    events = [TimedEvent("transl", 1.0, (12, 1, 0, 0)), TimedEvent("transc", 2.0, (12, 1, 0, 1)),
              TimedEvent("degrade", 3.0, (11, 1, 0, 1)), TimedEvent("transc", 4.0, (11, 1, 0, 2))]
    out = replay(events, {"protA": 2, "geneA": 1, "A_geneA": 0, "mrnA": 0}, a, tracked=["a"])
    assert out.accepted and out.statistics.max["a"] == 12


def test_nan_poisons_a_tracked_expression():
    out = replay(to_events([1, 0, 2]), {"A": 1}, watcher(5.0), tracked={"r": "t / A"})
    assert math.isnan(out.statistics.min["r"]) and math.isnan(out.statistics.max["r"])


def test_model_driven_and_replayed_runs_agree():
    m = gene_expression()
    out = synchronize(m, transcription_counter(4), np.random.default_rng(7), record_moves=True)
    events = list(simulate(m, np.random.default_rng(7), StopCondition(max_events=out.event_count)))
    again = replay(events, m.marking_dict(m.initial_marking), transcription_counter(4))
    assert again.accepted and again.valuation == out.valuation
