"""Reference execution of the product D x A.

This module is the readable, dictionary-based engine: it drives
:mod:`hasl_osc.desp` step by step (or consumes a recorded trace) and moves
the automaton alongside. It is what tests and oracles use. The numba kernel
in :mod:`hasl_osc.kernel` implements the same decision procedure for bulk
sampling, and its traces replay here to identical verdicts.

Synchronous edges read the marking *after* the event: a guard such as
``A - x >= delta`` compares the register with the population the event has
just produced, and the target invariant is checked on that same marking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from . import expr
from .desp import Deadlock, GspnModel, RandomSource, TimedEvent, initial_configuration, step
from .expr import Node
from .lha import DeterminismFault, Edge, Lha, apply_update, elapse, holds, next_autonomous, satisfies

ACCEPTED = "accepted"
REJECTED = "rejected"

# reasons attached to a verdict
FINAL = "final"
NO_INITIAL = "no-initial-location"
NO_EDGE = "no-synchronous-edge"
DEADLOCK = "deadlock"
END_OF_TRACE = "end-of-trace"
EVENT_BUDGET = "event-budget"
TIME_BUDGET = "time-budget"

TIME_AVERAGE = "time"
EVENT_AVERAGE = "event"


@dataclass(frozen=True)
class ResourceBudget:
    """Per-trajectory limits; running out yields a rejection flagged as budget exhaustion."""

    max_events: int = 10**9
    max_time: float = 1e6


@dataclass(frozen=True)
class SyncState:
    marking: tuple[int, ...]
    location: str
    valuation: Mapping[str, float]
    time: float


@dataclass(frozen=True)
class Move:
    """One automaton step: ``event`` is None for autonomous edges."""

    time: float
    source: str
    target: str
    event: Optional[str]
    valuation: Optional[Mapping[str, float]] = None


class PathStatistics:
    """Running last/min/max/average of tracked expressions along one path.

    Values are sampled at the start, at the end of every delay and after
    every discrete step. ``avg`` integrates the piecewise-linear path with the
    trapezoid rule, which is exact for expressions affine in the variables.
    An undefined value (division by zero) poisons that expression with nan.
    """

    def __init__(self, names: Sequence[str]):
        self.names = tuple(names)
        self.last = {k: math.nan for k in self.names}
        self.min = {k: math.inf for k in self.names}
        self.max = {k: -math.inf for k in self.names}
        self.integral = {k: 0.0 for k in self.names}
        self.event_sum = {k: 0.0 for k in self.names}
        self.event_count = 0
        self.duration = 0.0

    def observe(self, values: Mapping[str, float], dt: float = 0.0, discrete: bool = True) -> None:
        for k in self.names:
            y = values[k]
            if dt > 0:
                self.integral[k] += 0.5 * (self.last[k] + y) * dt
            if math.isnan(y):
                self.min[k] = self.max[k] = math.nan
            elif not math.isnan(self.min[k]):
                self.min[k] = min(self.min[k], y)
                self.max[k] = max(self.max[k], y)
            self.last[k] = y
            if discrete:
                self.event_sum[k] += y
        if discrete:
            self.event_count += 1
        self.duration += dt

    def avg(self, name: str, mode: str = TIME_AVERAGE) -> float:
        if mode == EVENT_AVERAGE:
            return self.event_sum[name] / self.event_count if self.event_count else math.nan
        if self.duration > 0:
            return self.integral[name] / self.duration
        return self.last[name]

    def value(self, op: str, name: str, mode: str = TIME_AVERAGE) -> float:
        if op == "avg":
            return self.avg(name, mode)
        return getattr(self, op)[name]


@dataclass
class SyncOutcome:
    verdict: str
    reason: str
    final_state: SyncState
    statistics: PathStatistics
    event_count: int
    model_time: float
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    overflow: dict[str, int] = field(default_factory=dict)
    moves: list[Move] = field(default_factory=list)
    places: tuple[str, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.verdict == ACCEPTED

    @property
    def budget_exhausted(self) -> bool:
        return self.reason in (EVENT_BUDGET, TIME_BUDGET)

    @property
    def valuation(self) -> Mapping[str, float]:
        return self.final_state.valuation

    @property
    def marking(self) -> dict[str, int]:
        return dict(zip(self.places, self.final_state.marking))


# ---------------------------------------------------------------------------
# Event sources: the simulator, or a recorded trace


class _ModelEvents:
    def __init__(self, model: GspnModel, rng: RandomSource):
        self.model = model
        self.rng = rng
        self.config = initial_configuration(model, rng)
        self._next: Optional[TimedEvent] = None
        self._done = False

    def peek(self) -> Optional[TimedEvent]:
        if self._next is None and not self._done:
            try:
                self.config, self._next = step(self.config, self.model, self.rng)
            except Deadlock:
                self._done = True
        return self._next

    def take(self) -> TimedEvent:
        ev = self.peek()
        self._next = None
        return ev


class _TraceEvents:
    def __init__(self, events: Iterable[TimedEvent]):
        self._it = iter(events)
        self._next: Optional[TimedEvent] = None
        self._done = False

    def peek(self) -> Optional[TimedEvent]:
        if self._next is None and not self._done:
            self._next = next(self._it, None)
            self._done = self._next is None
        return self._next

    def take(self) -> TimedEvent:
        ev = self.peek()
        self._next = None
        return ev


def _tracked_nodes(a: Lha, tracked) -> dict[str, Node]:
    if tracked is None:
        return {x: expr.Name(x) for x in a.variables}
    if isinstance(tracked, Mapping):
        return {k: expr.as_node(v) for k, v in tracked.items()}
    return {expr.to_text(expr.as_node(k)): expr.as_node(k) for k in tracked}


def _safe_eval(node: Node, env: Mapping[str, float]) -> float:
    try:
        return expr.evaluate(node, env)
    except ZeroDivisionError:
        return math.nan


def _run(
    source,
    places: Sequence[str],
    initial_marking: Sequence[int],
    a: Lha,
    budget: ResourceBudget,
    tracked,
    record_moves: bool,
    record_valuations: bool,
    end_reason: str,
) -> SyncOutcome:
    places = tuple(places)
    marking = dict(zip(places, (int(v) for v in initial_marking)))
    v = {x: 0.0 for x in a.variables}
    tau = 0.0
    arrays = {k: np.zeros(n, dtype=np.int64) for k, n in a.arrays.items()}
    overflow = {k: 0 for k in a.arrays}
    nodes = _tracked_nodes(a, tracked)
    stats = PathStatistics(list(nodes))
    moves: list[Move] = []
    events = 0
    chain = 0
    cap = len(a.locations) ** 2

    def observe(dt: float, discrete: bool) -> None:
        env = dict(marking)
        env.update(v)
        stats.observe({k: _safe_eval(n, env) for k, n in nodes.items()}, dt, discrete)

    def outcome(verdict: str, reason: str, loc: str) -> SyncOutcome:
        state = SyncState(tuple(marking[p] for p in places), loc, dict(v), tau)
        return SyncOutcome(verdict, reason, state, stats, events, tau, arrays, overflow, moves, places)

    def take(e: Edge, event: Optional[str]) -> None:
        nonlocal v
        env = dict(marking)
        env.update(v)
        for arr, node in e.update.increments:
            k = math.floor(expr.evaluate(node, env))
            if 0 <= k < len(arrays[arr]):
                arrays[arr][k] += 1
            else:
                overflow[arr] += 1
        v = apply_update(e.update, marking, v)
        if record_moves:
            moves.append(Move(tau, e.source, e.target, event, dict(v) if record_valuations else None))

    starts = [l for l in a.initial if holds(a.location(l).invariant, marking)]
    if len(starts) > 1:
        raise DeterminismFault(f"initial locations {starts} all hold on the initial marking")
    if not starts:
        observe(0.0, True)
        return outcome(REJECTED, NO_INITIAL, a.initial[0] if a.initial else "")
    loc = starts[0]
    observe(0.0, True)

    while True:
        if loc in a.final:
            return outcome(ACCEPTED, FINAL, loc)
        nxt = source.peek()
        t_event = nxt.time if nxt is not None else math.inf
        auto = next_autonomous(a, loc, marking, v)
        if auto is not None:
            d, e = auto
            when = tau + d
            if when <= t_event and when <= budget.max_time:
                chain = chain + 1 if d == 0 else 1
                if chain > cap:
                    raise DeterminismFault(
                        f"more than {cap} autonomous firings at time {tau} from {loc!r}")
                if d > 0:
                    v = elapse(a.location(loc), marking, v, d)
                    tau = when
                    observe(d, False)
                take(e, None)
                loc = e.target
                observe(0.0, True)
                continue
        if nxt is None:
            return outcome(REJECTED, end_reason, loc)
        if t_event > budget.max_time:
            return outcome(REJECTED, TIME_BUDGET, loc)
        if events >= budget.max_events:
            return outcome(REJECTED, EVENT_BUDGET, loc)
        ev = source.take()
        dt = ev.time - tau
        if dt > 0:
            v = elapse(a.location(loc), marking, v, dt)
            tau = ev.time
            observe(dt, False)
        marking = dict(zip(places, ev.marking_after))
        events += 1
        chain = 0
        enabled = [
            e for e in a.out_edges[loc]
            if not e.autonomous and ev.event in e.trigger
            and satisfies(e.guard, marking, v)
            and holds(a.location(e.target).invariant, marking)
        ]
        if not enabled:
            observe(0.0, True)
            return outcome(REJECTED, NO_EDGE, loc)
        if len(enabled) > 1:
            raise DeterminismFault(
                f"{len(enabled)} synchronous edges out of {loc!r} enabled by {ev.event!r} at {tau}")
        e = enabled[0]
        take(e, ev.event)
        loc = e.target
        observe(0.0, True)


def synchronize(
    model: GspnModel,
    a: Lha,
    rng: RandomSource,
    budget: ResourceBudget = ResourceBudget(),
    tracked=None,
    record_moves: bool = False,
) -> SyncOutcome:
    """Simulate ``model`` under ``a`` until acceptance or rejection.

    Parameters
    ----------
    tracked : sequence of expression texts, or mapping name -> expression, optional
        Expressions whose min/max/avg are accumulated; defaults to every variable.
    """
    a.check_places(model.places)
    source = _ModelEvents(model, rng)
    return _run(source, model.places, model.initial_marking, a, budget, tracked,
                record_moves, False, DEADLOCK)


def replay(
    events: Iterable[TimedEvent],
    initial_marking: Union[Mapping[str, int], Sequence[int]],
    a: Lha,
    places: Optional[Sequence[str]] = None,
    budget: ResourceBudget = ResourceBudget(),
    tracked=None,
    record_valuations: bool = False,
) -> SyncOutcome:
    """Run the synchronisation on a recorded trace; ``outcome.moves`` holds the location trace.

    ``places`` defaults to the key order of ``initial_marking`` when that is a mapping.
    Running out of events rejects the trajectory with reason ``end-of-trace``.
    """
    if isinstance(initial_marking, Mapping):
        places = tuple(places or initial_marking)
        m0 = [int(initial_marking.get(p, 0)) for p in places]
    else:
        if places is None:
            raise TypeError("a positional initial marking needs the place names")
        m0 = list(initial_marking)
    a.check_places(places)
    return _run(_TraceEvents(events), places, m0, a, budget, tracked, True,
                record_valuations, END_OF_TRACE)


def trace_events(model: GspnModel, indices: Sequence[int], times: Sequence[float]) -> Iterator[TimedEvent]:
    """Rebuild TimedEvents from (transition index, time) pairs by refiring the net."""
    m = model.initial_marking.copy()
    for j, t in zip(indices, times):
        m = model.fire(int(j), m)
        yield TimedEvent(model.transitions[int(j)].name, float(t), tuple(int(x) for x in m))
