"""Period and peak measurement of stochastic oscillators.

Two automaton families are generated here. ``build_Aper`` measures the
period of a noisy oscillation as the time between successive entries into
the low region, each separated by a visit to the high region. ``build_Apeaks``
commits a local maximum (minimum) once the observed species has moved at
least ``delta`` away from it, and accumulates the committed heights.

Each automaton has an offline counterpart (``offline_periods`` and
``offline_peaks``) that processes a recorded ``(time, value)`` trace
directly; tests hold the automata to these oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import expr
from .desp import GspnModel
from .kernel import CompiledProduct, trajectory_seed
from .lha import ALL_EVENTS, AUTONOMOUS, EventSet, Edge, Lha, Location, Update

Trace = Sequence[tuple[float, float]]


# ---------------------------------------------------------------------------
# Online statistics


def update_mean(mean: float, t_p: float, n: int) -> float:
    """Mean after appending ``t_p`` to ``n`` values whose mean is ``mean``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return (mean * n + t_p) / (n + 1)


def update_fluctuation(s2: float, mean: float, t_p: float, n: int) -> float:
    """Population variance after appending ``t_p``.

    Parameters
    ----------
    s2 : float
        Variance of the previous ``n - 1`` values.
    mean : float
        Their mean, i.e. the mean *before* ``t_p`` is included.
    t_p : float
        The new value.
    n : int
        Number of values including ``t_p``; at least 2.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return ((n - 1) * s2 + (t_p - mean) * (t_p - update_mean(mean, t_p, n - 1))) / n


def batch_statistics(periods: Sequence[float]) -> tuple[float, float]:
    """Mean and population variance of ``periods`` computed in one pass over the list."""
    k = len(periods)
    if k == 0:
        return math.nan, math.nan
    mean = math.fsum(periods) / k
    return mean, math.fsum((p - mean) ** 2 for p in periods) / k


def online_statistics(periods: Iterable[float]) -> tuple[float, float]:
    """Fold ``update_mean``/``update_fluctuation`` over ``periods``, as the automaton does."""
    mean, s2, n = 0.0, 0.0, 0
    for t_p in periods:
        if n >= 1:
            s2 = update_fluctuation(s2, mean, t_p, n + 1)
        mean = update_mean(mean, t_p, n)
        n += 1
    if n == 0:
        return math.nan, math.nan
    return mean, s2


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class PeriodParams:
    """Thresholds ``L < H`` on species ``species``, transient ``initT`` and ``N`` periods.

    ``measure`` picks the region whose entries delimit periods: ``"low"``
    (the default) or ``"high"``.
    """

    species: str = "A"
    L: float = 1
    H: float = 1000
    initT: float = 0.0
    N: int = 100
    measure: str = "low"

    def __post_init__(self):
        if not self.L < self.H:
            raise ValueError(f"need L < H, got L={self.L}, H={self.H}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not self.initT >= 0:
            raise ValueError(f"initT must be >= 0, got {self.initT}")
        if self.measure not in ("low", "high"):
            raise ValueError(f"measure must be 'low' or 'high', got {self.measure!r}")


@dataclass(frozen=True)
class PeaksParams:
    """Noise level ``delta``, transient ``initT``, ``N`` maxima and the event partition of ``species``.

    ``partition`` is ``(increasing, decreasing, neutral)`` event names.
    ``bound`` sizes the Lmax/Lmin frequency arrays; heights at or above it
    land in the overflow counter.
    """

    species: str
    delta: float
    partition: tuple[frozenset, frozenset, frozenset]
    N: int = 100
    initT: float = 0.0
    bound: int = 4096

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not self.initT >= 0:
            raise ValueError(f"initT must be >= 0, got {self.initT}")
        if self.bound < 1:
            raise ValueError(f"bound must be >= 1, got {self.bound}")
        plus, minus, zero = (frozenset(s) for s in self.partition)
        object.__setattr__(self, "partition", (plus, minus, zero))
        if plus & minus or plus & zero or minus & zero:
            raise ValueError("event partition classes overlap")
        if not plus or not minus:
            raise ValueError("partition needs at least one increasing and one decreasing event")

    def check_covers(self, events: Iterable[str]) -> None:
        events = set(events)
        covered = set().union(*self.partition)
        if covered != events:
            missing, extra = sorted(events - covered), sorted(covered - events)
            raise ValueError(f"partition does not match the model events (missing {missing}, unknown {extra})")


def classify_events(model: GspnModel, species: str) -> tuple[frozenset, frozenset, frozenset]:
    """Split the transitions into those increasing, decreasing and not changing ``species``."""
    k = model.place_index[species]
    plus, minus, zero = set(), set(), set()
    for j, t in enumerate(model.transitions):
        d = model.delta[j, k]
        (plus if d > 0 else minus if d < 0 else zero).add(t.name)
    return frozenset(plus), frozenset(minus), frozenset(zero)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x) == int(x) else repr(float(x))


def _c(text: str):
    return tuple(expr.parse_condition(text))


def _u(assignments=None, increments=()) -> Update:
    return Update.make(assignments or {}, increments)


# ---------------------------------------------------------------------------
# A_per


def build_Aper(p: PeriodParams) -> Lha:
    """Automaton measuring ``N`` periods of ``p.species`` after the transient ``p.initT``.

    Variables: ``t`` (time since the first complete period started), ``n``
    (period counter, -1 until that start), ``top`` (visited the opposite
    region since the last entry), ``t_p`` (current period timer), ``tbar_p``
    (running mean period) and ``s2_tp`` (running population variance).
    """
    A, L, H, N = p.species, _fmt(p.L), _fmt(p.H), int(p.N)
    inv = {
        "low": _c(f"{A} <= {L}"),
        "mid": _c(f"{A} > {L} && {A} < {H}"),
        "high": _c(f"{A} >= {H}"),
    }
    anchor, other = ("low", "high") if p.measure == "low" else ("high", "low")
    outside = _c(f"{A} > {L}") if anchor == "low" else _c(f"{A} < {H}")
    clocks = (("t", expr.Num(1.0)), ("t_p", expr.Num(1.0)))
    locs = [
        Location("l0", (), clocks),
        Location("l0'", outside, clocks),
        *(Location(r, inv[r], clocks) for r in ("low", "mid", "high")),
        Location("end", (), clocks),
    ]
    start = {"t": "0", "n": "-1"}
    mean = "(tbar_p * n + t_p) / (n + 1)"
    fluct = "(n * s2_tp + (t_p - tbar_p) * (t_p - (tbar_p * n + t_p) / (n + 1))) / (n + 1)"
    closures = [
        ("n = -1 && top = 1", {"n": "0", "top": "0", "t": "0", "t_p": "0"}),
        ("n = 0 && top = 1", {"n": "1", "top": "0", "tbar_p": mean, "t_p": "0"}),
    ]
    if N >= 2:
        closures.append((f"n >= 1 && n <= {N - 1} && top = 1",
                         {"n": "n + 1", "top": "0", "tbar_p": mean, "s2_tp": fluct, "t_p": "0"}))
    closures.append((f"n < {N} && top = 0", {}))

    edges = [
        Edge("l0", "l0", ALL_EVENTS),
        Edge("l0", "l0'", AUTONOMOUS, _c(f"t >= {_fmt(p.initT)}"), _u(start)),
        Edge("l0", anchor, AUTONOMOUS, _c(f"t >= {_fmt(p.initT)}"), _u(start)),
        Edge("l0'", "l0'", ALL_EVENTS),
        Edge("l0'", anchor, ALL_EVENTS, (), _u(start)),
    ]
    regions = ("low", "mid", "high")
    for s in regions:
        for r in regions:
            if r == anchor and s != anchor:
                edges += [Edge(s, r, ALL_EVENTS, _c(g), _u(u)) for g, u in closures]
            elif r == other and s != other:
                edges.append(Edge(s, r, ALL_EVENTS, (), _u({"top": "1"})))
            else:
                edges.append(Edge(s, r, ALL_EVENTS))
    edges.append(Edge(anchor, "end", AUTONOMOUS, _c(f"n = {N}")))
    return Lha(
        locs, ["l0"], ["end"], ["t", "n", "top", "t_p", "tbar_p", "s2_tp"], edges,
        name=f"Aper({A}, L={L}, H={H}, initT={_fmt(p.initT)}, N={N})",
    )


# ---------------------------------------------------------------------------
# A_peaks


def build_Apeaks(p: PeaksParams, events: Optional[Iterable[str]] = None) -> Lha:
    """Automaton committing ``delta``-separated extrema of ``p.species`` until ``N`` maxima are found.

    When ``events`` (the model's transition names) is given, the partition
    must cover it exactly.
    """
    if events is not None:
        p.check_covers(events)
    A, d, N = p.species, _fmt(p.delta), int(p.N)
    plus, minus, zero = (EventSet(frozenset(s)) for s in p.partition)
    both = EventSet(frozenset(p.partition[0] | p.partition[1]))
    clock = (("t", expr.Num(1.0)),)
    names = ["l0", "start", "Max", "noisyDec", "Min", "noisyInc", "end"]
    locs = [Location(n, (), clock) for n in names]
    grab = {"x": A}
    commit_max = _u({"Smax": "Smax + x", "n_M": "n_M + 1", "x": A}, [("Lmax", "x")])
    commit_min = _u({"Smin": "Smin + x", "n_m": "n_m + 1", "x": A}, [("Lmin", "x")])
    zero_loops = [Edge(n, n, zero) for n in names[1:6]] if p.partition[2] else []
    edges = [
        Edge("l0", "l0", ALL_EVENTS),
        Edge("l0", "start", AUTONOMOUS, _c(f"t >= {_fmt(p.initT)}"), _u({"x": A, "t": "0"})),
        Edge("start", "Max", both, _c(f"{A} - x >= {d}"), _u(grab)),
        Edge("start", "Min", both, _c(f"{A} - x <= -{d}"), _u(grab)),
        Edge("start", "start", both, _c(f"{A} - x > -{d} && {A} - x < {d}")),
        Edge("Max", "Max", plus, (), _u(grab)),
        Edge("Max", "Min", minus, _c(f"x - {A} >= {d}"), commit_max),
        Edge("Max", "noisyDec", minus, _c(f"x - {A} < {d}")),
        Edge("noisyDec", "Max", plus, _c(f"{A} >= x"), _u(grab)),
        Edge("noisyDec", "noisyDec", plus, _c(f"{A} < x")),
        Edge("noisyDec", "Min", minus, _c(f"x - {A} >= {d}"), commit_max),
        Edge("noisyDec", "noisyDec", minus, _c(f"x - {A} < {d}")),
        Edge("Min", "Min", minus, (), _u(grab)),
        Edge("Min", "Max", plus, _c(f"{A} - x >= {d}"), commit_min),
        Edge("Min", "noisyInc", plus, _c(f"{A} - x < {d}")),
        Edge("noisyInc", "Min", minus, _c(f"{A} <= x"), _u(grab)),
        Edge("noisyInc", "noisyInc", minus, _c(f"{A} > x")),
        Edge("noisyInc", "Max", plus, _c(f"{A} - x >= {d}"), commit_min),
        Edge("noisyInc", "noisyInc", plus, _c(f"{A} - x < {d}")),
        *zero_loops,
        Edge("Min", "end", AUTONOMOUS, _c(f"n_M = {N}")),
    ]
    return Lha(
        locs, ["l0"], ["end"], ["t", "x", "n_M", "n_m", "Smax", "Smin"], edges,
        events=set().union(*p.partition),
        arrays={"Lmax": p.bound, "Lmin": p.bound},
        name=f"Apeaks({A}, delta={d}, initT={_fmt(p.initT)}, N={N})",
    )


def build_Amax(species: str, horizon: float) -> Lha:
    """Pilot automaton: copies ``species`` into ``a`` on every event and stops at ``horizon``.

    ``max(a)`` then gives the largest population seen up to the horizon.
    """
    clock = (("t", expr.Num(1.0)),)
    locs = [Location("l0", (), clock), Location("end", (), clock)]
    edges = [
        Edge("l0", "l0", ALL_EVENTS, (), _u({"a": species})),
        Edge("l0", "end", AUTONOMOUS, _c(f"t >= {_fmt(horizon)}")),
    ]
    return Lha(locs, ["l0"], ["end"], ["t", "a"], edges, name=f"Amax({species}, {_fmt(horizon)})")


@dataclass(frozen=True)
class PilotResult:
    """Pilot statistics of one species: mean and largest per-trajectory maximum."""

    species: str
    mean_max: float
    largest: float
    delta: int
    bound: int
    trajectories: int


def pilot_peaks(model: GspnModel, species: str, seed: int = 0, trajectories: int = 10,
                horizon: float = 500.0) -> PilotResult:
    """Noise level and array bound for ``build_Apeaks`` from a short pilot.

    Runs ``trajectories`` paths up to ``horizon`` and sets
    ``delta = ceil(0.1 * mean of max(species))`` and
    ``bound = 4 * largest max(species) + 1``.
    """
    if trajectories < 1:
        raise ValueError(f"trajectories must be >= 1, got {trajectories}")
    prod = CompiledProduct(model, build_Amax(species, horizon), ["a"])
    res = prod.run_batch([trajectory_seed(seed, i) for i in range(trajectories)])
    maxima = res.stats[:, 0, 2]
    mean_max = float(np.mean(maxima))
    largest = float(maxima.max())
    delta = max(1, math.ceil(0.1 * mean_max))
    return PilotResult(species, mean_max, largest, delta, int(4 * largest) + 1, trajectories)


# ---------------------------------------------------------------------------
# Offline oracles over (time, value) traces


def _value_at(trace: Trace, initT: float) -> tuple[float, int]:
    """Value holding at ``initT`` (events at exactly ``initT`` not yet applied) and the index of the next event."""
    value = trace[0][1]
    i = 1
    while i < len(trace) and trace[i][0] < initT:
        value = trace[i][1]
        i += 1
    return value, i


def offline_periods(trace: Trace, L: float, H: float, initT: float = 0.0, measure: str = "low") -> list[float]:
    """Period realisations of a piecewise-constant trace.

    ``trace[0]`` is the initial state; each later ``(time, value)`` is the
    value right after an event. Regions follow the closed conventions
    ``low: v <= L`` and ``high: v >= H``. The first entry into the measured
    region after ``initT`` opens a spurious leading interval that is
    dropped; afterwards every entry preceded by a visit to the opposite
    region closes one period.
    """
    if not L < H:
        raise ValueError(f"need L < H, got L={L}, H={H}")
    if len(trace) == 0:
        return []
    if measure == "low":
        inside, opposite = (lambda v: v <= L), (lambda v: v >= H)
    else:
        inside, opposite = (lambda v: v >= H), (lambda v: v <= L)
    prev, i = _value_at(trace, initT)
    anchored = inside(prev)
    entries: list[float] = []
    visited = False
    for when, v in trace[i:]:
        if not anchored:
            anchored = inside(v)
        else:
            if opposite(v):
                visited = True
            if inside(v) and not inside(prev) and visited:
                entries.append(when)
                visited = False
        prev = v
    return [b - a for a, b in zip(entries, entries[1:])]


def offline_peaks(
    trace: Trace, delta: float, initT: float = 0.0, N: Optional[int] = None
) -> tuple[list[float], list[float]]:
    """Delta-separated maxima and minima of a trace, in detection order.

    A candidate extremum is kept in a register and replaced whenever the
    trace goes further in the same direction; it is committed once the trace
    has moved back by at least ``delta``. With ``N`` the scan stops at the
    ``N``-th committed maximum.
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    maxima: list[float] = []
    minima: list[float] = []
    if len(trace) == 0:
        return maxima, minima
    x, i = _value_at(trace, initT)
    direction = 0  # +1 tracking a maximum, -1 tracking a minimum, 0 undecided
    for _, a in trace[i:]:
        if N is not None and len(maxima) >= N:
            break
        if direction == 0:
            if a - x >= delta:
                direction, x = 1, a
            elif x - a >= delta:
                direction, x = -1, a
        elif direction == 1:
            if a >= x:
                x = a
            elif x - a >= delta:
                maxima.append(x)
                direction, x = -1, a
        else:
            if a <= x:
                x = a
            elif a - x >= delta:
                minima.append(x)
                direction, x = 1, a
    return maxima, minima


def local_extrema(values: Sequence[float]) -> tuple[list[float], list[float]]:
    """Simple local maxima and minima of ``values`` after merging repeated values."""
    v = [x for k, x in enumerate(values) if k == 0 or x != values[k - 1]]
    maxima = [v[i] for i in range(1, len(v) - 1) if v[i - 1] < v[i] > v[i + 1]]
    minima = [v[i] for i in range(1, len(v) - 1) if v[i - 1] > v[i] < v[i + 1]]
    return maxima, minima
