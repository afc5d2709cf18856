"""Recorded trajectories: generation, the replay text format and CSV series.

The replay format is line oriented::

    # places: D_A,D'_A,...
    # initial: 1,0,...
    0.0132<TAB>R6<TAB>1,0,1,0,1,0,0,0,0
    ...
    # deadlock at 812.5

Comment lines start with ``#``; every other line is
``time<TAB>event<TAB>marking-csv`` with the marking after the event.
Times are written with ``repr`` so a file round-trips exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import expr
from .desp import GspnModel, TimedEvent, enabled_transitions
from .kernel import CompiledProduct, trajectory_seed
from .lha import ALL_EVENTS, AUTONOMOUS, Edge, Lha, Location
from .sync import ResourceBudget


@dataclass
class RecordedTrace:
    """A model trajectory: times, fired transitions and markings after each event."""

    places: tuple[str, ...]
    initial: np.ndarray  # (places,)
    times: np.ndarray  # (events,)
    events: list[str]
    markings: np.ndarray  # (events, places)
    deadlock: Optional[float] = None
    horizon: float = math.inf

    def __len__(self) -> int:
        return len(self.times)

    def timed_events(self) -> list[TimedEvent]:
        return [TimedEvent(e, float(t), tuple(int(x) for x in m))
                for e, t, m in zip(self.events, self.times, self.markings)]

    def series(self, place: str) -> list[tuple[float, float]]:
        """``(time, value)`` pairs of one place, starting with the initial value at time 0."""
        k = self.places.index(place)
        return [(0.0, float(self.initial[k]))] + [
            (float(t), float(v)) for t, v in zip(self.times, self.markings[:, k])]


def _horizon_automaton(horizon: float) -> Lha:
    clock = (("t", expr.Num(1.0)),)
    stop = tuple(expr.parse_condition(f"t >= {float(horizon)!r}"))
    edges = [Edge("run", "run", ALL_EVENTS), Edge("run", "stop", AUTONOMOUS, stop)]
    return Lha([Location("run", (), clock), Location("stop", (), clock)], ["run"], ["stop"], ["t"],
               edges, name=f"horizon({horizon:g})")


def record(model: GspnModel, horizon: float, seed: int = 0, index: int = 0,
           max_events: int = 50_000_000) -> RecordedTrace:
    """Simulate ``model`` up to model time ``horizon`` with the compiled sampler.

    Events at exactly ``horizon`` are not included. The trajectory uses the
    seed ``trajectory_seed(seed, index)``, the one the estimator gives
    trajectory ``index``.
    """
    if not horizon >= 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    prod = CompiledProduct(model, _horizon_automaton(horizon))
    res, idx, times = prod.run_one(trajectory_seed(seed, index), ResourceBudget(max_events=max_events),
                                   max_record=max_events)
    m0 = np.asarray(model.initial_marking, dtype=np.int64)
    markings = m0 + np.cumsum(np.asarray(model.delta)[idx], axis=0) if len(idx) else \
        np.zeros((0, len(m0)), dtype=np.int64)
    # the clock edge still fires after a deadlock, so test the final marking directly
    final = markings[-1] if len(idx) else m0
    dead = None
    if len(idx) < max_events and not enabled_transitions(final, model):
        dead = float(times[-1]) if len(idx) else 0.0
    names = [model.transitions[j].name for j in idx]
    return RecordedTrace(tuple(model.places), m0, times, names, markings, dead, float(horizon))


def write_trace(trace: RecordedTrace, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        if math.isfinite(trace.horizon):
            fh.write(f"# horizon: {trace.horizon!r}\n")
        fh.write("# places: " + ",".join(trace.places) + "\n")
        fh.write("# initial: " + ",".join(str(int(x)) for x in trace.initial) + "\n")
        for t, e, m in zip(trace.times, trace.events, trace.markings):
            fh.write(f"{float(t)!r}\t{e}\t{','.join(str(int(x)) for x in m)}\n")
        if trace.deadlock is not None:
            fh.write(f"# deadlock at {trace.deadlock!r}\n")


def read_trace(path: Union[str, Path]) -> RecordedTrace:
    """Parse the replay format; raises ValueError with the line number on malformed input."""
    places: tuple[str, ...] = ()
    initial = None
    times, events, markings = [], [], []
    dead = None
    horizon = math.inf
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("horizon:"):
                    horizon = float(body[8:])
                elif body.startswith("places:"):
                    places = tuple(p.strip() for p in body[7:].split(",") if p.strip())
                elif body.startswith("initial:"):
                    initial = [int(x) for x in body[8:].split(",")]
                elif body.startswith("deadlock at"):
                    dead = float(body[11:])
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{no}: expected time<TAB>event<TAB>marking")
            try:
                t = float(parts[0])
                m = [int(x) for x in parts[2].split(",")]
            except ValueError as exc:
                raise ValueError(f"{path}:{no}: {exc}") from None
            if places and len(m) != len(places):
                raise ValueError(f"{path}:{no}: marking has {len(m)} entries for {len(places)} places")
            if times and t < times[-1]:
                raise ValueError(f"{path}:{no}: time goes backwards")
            times.append(t)
            events.append(parts[1])
            markings.append(m)
    if not places:
        raise ValueError(f"{path}: missing '# places:' header")
    if initial is None:
        raise ValueError(f"{path}: missing '# initial:' header")
    return RecordedTrace(places, np.array(initial, dtype=np.int64), np.array(times, dtype=float),
                         events, np.array(markings, dtype=np.int64).reshape(-1, len(places)), dead,
                         horizon)


def write_series_csv(trace: RecordedTrace, path: Union[str, Path],
                     places: Optional[Sequence[str]] = None) -> None:
    """Per-species time series ``time,<place>,...``, one row per event after the initial state."""
    places = list(places or trace.places)
    cols = [trace.places.index(p) for p in places]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *places])
        if trace.horizon > 0:
            w.writerow([repr(0.0), *(int(trace.initial[c]) for c in cols)])
        for t, m in zip(trace.times, trace.markings):
            w.writerow([repr(float(t)), *(int(m[c]) for c in cols)])


def read_series_csv(path: Union[str, Path]) -> list[tuple[float, float]]:
    """Read an oracle trace ``time,value`` (header optional)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except ValueError:
                if out:
                    raise
    if any(b[0] < a[0] for a, b in zip(out, out[1:])) or any(math.isnan(t) for t, _ in out):
        raise ValueError(f"{path}: times must be non-decreasing")
    return out
