"""Shared helpers: synthetic single-species traces and their replay."""

from __future__ import annotations

import random
from typing import Optional

import pytest

from hasl_osc.desp import TimedEvent
from hasl_osc.sync import ResourceBudget, replay

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def to_events(values, times=None, start: int = 0):
    """TimedEvents of a one-place net ``A`` whose value after event ``i`` is ``values[i]``.

    Event names encode the move: ``inc``, ``dec`` or ``nop``.
    """
    out = []
    prev = start
    for i, v in enumerate(values):
        t = float(i + 1) if times is None else float(times[i])
        name = "inc" if v > prev else "dec" if v < prev else "nop"
        out.append(TimedEvent(name, t, (int(v),)))
        prev = v
    return out


def as_trace(events, start: int = 0):
    """The ``(time, value)`` view used by the offline oracles."""
    return [(0.0, float(start))] + [(e.time, float(e.marking_after[0])) for e in events]


def replay_single(events, a, start: int = 0, budget: Optional[ResourceBudget] = None,
                  record_valuations: bool = True):
    return replay(events, {"A": start}, a, budget=budget or ResourceBudget(),
                  record_valuations=record_valuations)


def noisy_periodic(rng: random.Random, L: int, H: int, crossings: int, noise: int = 3,
                   start: Optional[int] = None) -> list[int]:
    """Integer staircase alternating between the low (<= L) and high (>= H) regions.

    Each leg wanders with noise of up to ``noise`` steps against its direction
    but is forced to reach its region before turning; the trace visits each
    region ``crossings`` times.
    """
    v = rng.randint(0, L) if start is None else start
    out = []
    for k in range(crossings):
        for target_high in (True, False):
            goal = rng.randint(H, H + 5) if target_high else rng.randint(max(0, L - 5), L)
            while (v < goal) if target_high else (v > goal):
                step = rng.randint(1, max(1, (H - L) // 4))
                if rng.random() < 0.25:
                    step = -rng.randint(1, noise)
                v = max(0, v + step if target_high else v - step)
                out.append(v)
            # linger around the extreme, staying inside the region
            for _ in range(rng.randint(0, 3)):
                v = max(0, min(v, L)) if not target_high else max(v, H)
                v = v + rng.randint(0, 2) if target_high else max(0, v - rng.randint(0, min(2, v)))
                out.append(v)
    return out


def random_times(rng: random.Random, n: int, ties: bool = True) -> list[float]:
    """Nondecreasing event times; with ``ties`` some consecutive events share a time."""
    t, out = 0.0, []
    for _ in range(n):
        if not (ties and out and rng.random() < 0.05):
            t += rng.choice([0.25, 0.5, 1.0, rng.expovariate(1.0)])
        out.append(t)
    return out


@pytest.fixture
def rng():
    return random.Random(12345)
