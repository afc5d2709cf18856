"""Synchronised linear hybrid automata.

Locations carry a marking-only invariant and one flow per variable. Edges
are either synchronous (triggered by a set of model events) or autonomous
(fired as soon as their guard becomes true). Guards must be linear in the
automaton variables, with coefficients that may read the marking; that is
what makes the firing time of an autonomous edge solvable in closed form.

Update right-hand sides may be arbitrary arithmetic over variables and
places: the online period statistics need ``(tbar_p * n + t_p) / (n + 1)``.
"""

from __future__ import annotations

import graphlib
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from . import expr
from .expr import Cmp, Node

AUTONOMOUS = "#"

Valuation = dict  # variable name -> float


class AutomatonError(ValueError):
    """Structurally invalid automaton (unknown names, non-linear guard, ...)."""


class DeterminismFault(RuntimeError):
    """Two edges were enabled at once at run time; the static checker missed a case."""


@dataclass(frozen=True)
class EventSet:
    """Events an edge synchronises on: ``events`` (None meaning all) minus ``exclude``."""

    events: Optional[frozenset] = None
    exclude: frozenset = frozenset()

    def __contains__(self, e: str) -> bool:
        return (self.events is None or e in self.events) and e not in self.exclude

    def resolve(self, alphabet: Optional[Iterable[str]]) -> Optional[frozenset]:
        if self.events is not None:
            return frozenset(self.events) - self.exclude
        if alphabet is None:
            return None
        return frozenset(alphabet) - self.exclude

    def to_json(self):
        if self.events is None and not self.exclude:
            return "*"
        if self.events is None:
            return {"except": sorted(self.exclude)}
        return sorted(self.events - self.exclude)

    @classmethod
    def from_json(cls, value) -> "EventSet":
        if value == "*":
            return cls()
        if isinstance(value, Mapping):
            return cls(None, frozenset(value.get("except", ())))
        if isinstance(value, str):
            return cls(frozenset([value]))
        return cls(frozenset(value))


ALL_EVENTS = EventSet()


@dataclass(frozen=True)
class Location:
    name: str
    invariant: tuple[Cmp, ...] = ()
    flow: tuple[tuple[str, Node], ...] = ()  # variables left out have flow 0

    def flow_of(self, var: str) -> Node:
        for v, node in self.flow:
            if v == var:
                return node
        return expr.Num(0.0)


@dataclass(frozen=True)
class Update:
    assignments: tuple[tuple[str, Node], ...] = ()
    # histogram side effects: (array name, index expression), each adds one
    increments: tuple[tuple[str, Node], ...] = ()

    @classmethod
    def make(cls, assignments: Mapping[str, Union[str, Node]] | None = None,
             increments: Sequence[tuple[str, Union[str, Node]]] = ()) -> "Update":
        return cls(
            tuple((k, expr.as_node(v)) for k, v in (assignments or {}).items()),
            tuple((a, expr.as_node(i)) for a, i in increments),
        )


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    trigger: Union[EventSet, str]  # AUTONOMOUS or an EventSet
    guard: tuple[Cmp, ...] = ()
    update: Update = Update()

    @property
    def autonomous(self) -> bool:
        return self.trigger == AUTONOMOUS

    @property
    def left_closed(self) -> bool:
        return all(a.op in ("=", "<=", ">=") for a in self.guard)


@dataclass(frozen=True)
class Violation:
    condition: str  # c1..c4
    message: str

    def __str__(self) -> str:
        return f"{self.condition}: {self.message}"


class Lha:
    """A synchronised LHA; validated structurally on construction.

    Parameters
    ----------
    locations : sequence of Location
    initial, final : iterable of location names
    variables : sequence of str
    edges : sequence of Edge
    events : iterable of str, optional
        The alphabet. When omitted, wildcard edges match any model event and
        the determinism check treats the alphabet as unknown.
    arrays : mapping of str to int, optional
        Bounded frequency arrays incremented by ``Update.increments``.
    """

    def __init__(
        self,
        locations: Sequence[Location],
        initial: Iterable[str],
        final: Iterable[str],
        variables: Sequence[str],
        edges: Sequence[Edge],
        events: Optional[Iterable[str]] = None,
        arrays: Optional[Mapping[str, int]] = None,
        name: str = "lha",
    ):
        self.name = name
        self.locations = tuple(locations)
        self.location_index = {l.name: i for i, l in enumerate(self.locations)}
        if len(self.location_index) != len(self.locations):
            raise AutomatonError("duplicate location names")
        self.initial = tuple(initial)
        self.final = frozenset(final)
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise AutomatonError("duplicate variable names")
        self.edges = tuple(edges)
        self.events = None if events is None else frozenset(events)
        self.arrays = dict(arrays or {})
        self._validate()
        self.out_edges: dict[str, tuple[Edge, ...]] = {
            l.name: tuple(e for e in self.edges if e.source == l.name) for l in self.locations
        }

    def __repr__(self) -> str:
        return (f"Lha({self.name!r}, {len(self.locations)} locations, "
                f"{len(self.variables)} variables, {len(self.edges)} edges)")

    def location(self, name: str) -> Location:
        return self.locations[self.location_index[name]]

    def _validate(self) -> None:
        vs = set(self.variables)
        for name in list(self.initial) + sorted(self.final):
            if name not in self.location_index:
                raise AutomatonError(f"unknown location {name!r} in initial/final set")
        for loc in self.locations:
            if expr.names(loc.invariant) & vs:
                raise AutomatonError(f"invariant of {loc.name!r} mentions automaton variables")
            for v, node in loc.flow:
                if v not in vs:
                    raise AutomatonError(f"flow of {loc.name!r} assigns unknown variable {v!r}")
                if expr.names(node) & vs:
                    raise AutomatonError(f"flow of {v!r} in {loc.name!r} must not read variables")
        for e in self.edges:
            where = f"edge {e.source}->{e.target}"
            if e.source not in self.location_index or e.target not in self.location_index:
                raise AutomatonError(f"{where} references an unknown location")
            if not e.autonomous:
                if not isinstance(e.trigger, EventSet):
                    raise AutomatonError(f"{where} has an invalid trigger {e.trigger!r}")
                if self.events is not None and e.trigger.events is not None:
                    extra = e.trigger.events - self.events
                    if extra:
                        raise AutomatonError(f"{where} uses events outside the alphabet: {sorted(extra)}")
            elif not e.left_closed:
                raise AutomatonError(f"{where} is autonomous but its guard is not left-closed")
            for atom in e.guard:
                try:
                    expr.linear_form(expr.Bin("-", atom.left, atom.right), vs)
                except expr.NonLinearError as err:
                    raise AutomatonError(f"{where}: guard {atom} is not linear ({err})") from None
            seen = set()
            for v, _ in e.update.assignments:
                if v not in vs:
                    raise AutomatonError(f"{where} updates unknown variable {v!r}")
                if v in seen:
                    raise AutomatonError(f"{where} assigns {v!r} twice")
                seen.add(v)
            for arr, _ in e.update.increments:
                if arr not in self.arrays:
                    raise AutomatonError(f"{where} increments unknown array {arr!r}")

    def check_places(self, places: Iterable[str]) -> None:
        """Every free name must be a model place or an automaton variable."""
        known = set(places) | set(self.variables)
        if set(self.variables) & set(places):
            raise AutomatonError(
                f"variables shadow places: {sorted(set(self.variables) & set(places))}")
        for loc in self.locations:
            bad = (expr.names(loc.invariant) | set().union(*[expr.names(n) for _, n in loc.flow])) - known
            if bad:
                raise AutomatonError(f"location {loc.name!r} references unknown names {sorted(bad)}")
        for e in self.edges:
            used = expr.names(e.guard)
            for _, n in e.update.assignments + e.update.increments:
                used |= expr.names(n)
            bad = used - known
            if bad:
                raise AutomatonError(f"edge {e.source}->{e.target} references unknown names {sorted(bad)}")


# ---------------------------------------------------------------------------
# Determinism conditions


@dataclass
class _Interval:
    lo: float = -math.inf
    lo_closed: bool = False
    hi: float = math.inf
    hi_closed: bool = False

    def meet(self, op: str, b: float) -> None:
        if op in ("=", ">=", ">"):
            closed = op != ">"
            if b > self.lo or (b == self.lo and not closed):
                self.lo, self.lo_closed = b, closed
        if op in ("=", "<=", "<"):
            closed = op != "<"
            if b < self.hi or (b == self.hi and not closed):
                self.hi, self.hi_closed = b, closed

    @property
    def empty(self) -> bool:
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and not (self.lo_closed and self.hi_closed)


_FLIP = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "=": "="}


def _canonical(atom: Cmp):
    """(key, op, bound) with ``key`` a normalised linear form over monomials, or None."""
    poly = expr.polynomial(expr.Bin("-", atom.left, atom.right))
    if poly is None:
        return None
    k = poly.pop((), 0.0)
    if not poly:
        return (), atom.op, -k  # constant atom: 0 op -k
    terms = sorted(poly.items())
    c0 = terms[0][1]
    op = atom.op if c0 > 0 else _FLIP[atom.op]
    key = tuple((m, c / c0) for m, c in terms)
    return key, op, -k / c0


def inconsistent(*conjunctions: Sequence[Cmp]) -> bool:
    """True when the conjunction is provably unsatisfiable under every interpretation.

    Interval reasoning per normalised linear form; anything else is assumed
    satisfiable, so a False answer does not mean the conjunction is satisfiable.
    """
    intervals: dict = {}
    for atoms in conjunctions:
        for atom in atoms:
            c = _canonical(atom)
            if c is None:
                continue
            key, op, b = c
            if key == ():
                if not expr.compare(op, 0.0, b):
                    return True
                continue
            intervals.setdefault(key, _Interval()).meet(op, b)
    return any(iv.empty for iv in intervals.values())


def _may_overlap(a: EventSet, b: EventSet, alphabet) -> bool:
    ra, rb = a.resolve(alphabet), b.resolve(alphabet)
    if ra is not None and rb is not None:
        return bool(ra & rb)
    if ra is not None:
        return bool(ra - b.exclude)
    if rb is not None:
        return bool(rb - a.exclude)
    return True  # both cover an unknown universe


def check_determinism(a: Lha) -> list[Violation]:
    """Conditions c1-c4; an empty list means the automaton is deterministic."""
    out: list[Violation] = []
    for l1, l2 in combinations(a.initial, 2):
        if not inconsistent(a.location(l1).invariant, a.location(l2).invariant):
            out.append(Violation("c1", f"initial locations {l1!r} and {l2!r} may both hold"))
    for loc in a.locations:
        edges = a.out_edges[loc.name]
        for e1, e2 in combinations(edges, 2):
            if e1.autonomous != e2.autonomous:
                continue  # autonomous priority resolves these
            if not e1.autonomous and not _may_overlap(e1.trigger, e2.trigger, a.events):
                continue
            if inconsistent(a.location(e1.target).invariant, a.location(e2.target).invariant):
                continue
            if inconsistent(e1.guard, e2.guard):
                continue
            cond = "c3" if e1.autonomous else "c2"
            out.append(Violation(
                cond,
                f"edges {e1.source}->{e1.target} and {e2.source}->{e2.target} "
                f"may be enabled together",
            ))
    graph: dict[str, set[str]] = {l.name: set() for l in a.locations}
    for e in a.edges:
        if e.autonomous:
            graph[e.target].add(e.source)
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as err:
        cycle = " -> ".join(err.args[1])
        out.append(Violation("c4", f"autonomous cycle {cycle}"))
    return out


# ---------------------------------------------------------------------------
# Evaluation against (marking, valuation)


def _env(marking: Mapping[str, float], v: Mapping[str, float] | None = None) -> dict:
    env = dict(marking)
    if v:
        env.update(v)
    return env


def holds(p: Sequence[Cmp], marking: Mapping[str, float]) -> bool:
    """Location proposition ``p`` on ``marking`` (a place -> count mapping)."""
    return expr.holds_all(p, marking)


def satisfies(c: Sequence[Cmp], marking: Mapping[str, float], v: Mapping[str, float]) -> bool:
    return expr.holds_all(c, _env(marking, v))


def apply_update(u: Update, marking: Mapping[str, float], v: Mapping[str, float]) -> Valuation:
    """Evaluate all assignments against the pre-update valuation, then assign."""
    env = _env(marking, v)
    new = dict(v)
    for var, node in u.assignments:
        new[var] = expr.evaluate(node, env)
    return new


def elapse(l: Location, marking: Mapping[str, float], v: Mapping[str, float], dt: float) -> Valuation:
    if dt < 0:
        raise ValueError(f"cannot elapse a negative duration {dt}")
    return {x: val + expr.evaluate(l.flow_of(x), marking) * dt for x, val in v.items()}


def solve_linear(op: str, a: float, b: float) -> Optional[tuple[float, float]]:
    """Times d >= 0 with ``a + b*d op 0``, as a closed interval [lo, hi], or None."""
    if b == 0:
        return (0.0, math.inf) if expr.compare(op, a, 0.0) else None
    root = -a / b
    if op == "=":
        return (root, root) if root >= 0 else None
    increasing = b > 0
    if (op == ">=") == increasing:  # holds from the root onwards
        return (max(root, 0.0), math.inf)
    return (0.0, root) if root >= 0 else None


def guard_window(
    guard: Sequence[Cmp], variables: Sequence[str], env: Mapping[str, float],
    rates: Mapping[str, float],
) -> Optional[tuple[float, float]]:
    lo, hi = 0.0, math.inf
    vs = set(variables)
    for atom in guard:
        coefs, rest = expr.linear_form(expr.Bin("-", atom.left, atom.right), vs)
        a = expr.evaluate(rest, env)
        b = 0.0
        for x, c in coefs.items():
            cv = expr.evaluate(c, env)
            a += cv * env[x]
            b += cv * rates[x]
        w = solve_linear(atom.op, a, b)
        if w is None:
            return None
        lo, hi = max(lo, w[0]), min(hi, w[1])
        if lo > hi:
            return None
    return lo, hi


def next_autonomous(
    a: Lha, l: Union[Location, str], marking: Mapping[str, float], v: Mapping[str, float]
) -> Optional[tuple[float, Edge]]:
    """Earliest delay at which an autonomous edge out of ``l`` becomes enabled.

    Flows are taken as constant (the marking does not change before the next
    event). Returns None if no autonomous edge can ever fire from here.
    """
    loc = a.location(l) if isinstance(l, str) else l
    env = _env(marking, v)
    rates = {x: expr.evaluate(loc.flow_of(x), marking) for x in a.variables}
    best: Optional[tuple[float, Edge]] = None
    tie = False
    for e in a.out_edges[loc.name]:
        if not e.autonomous or not holds(a.location(e.target).invariant, marking):
            continue
        w = guard_window(e.guard, a.variables, env, rates)
        if w is None:
            continue
        if best is None or w[0] < best[0]:
            best, tie = (w[0], e), False
        elif w[0] == best[0]:
            tie = True
    if tie:
        raise DeterminismFault(f"two autonomous edges out of {loc.name!r} fire at the same instant")
    return best


# ---------------------------------------------------------------------------
# Automaton files


def _cond(text) -> tuple[Cmp, ...]:
    return tuple(expr.parse_condition(text or "true"))


def lha_from_dict(data: Mapping) -> Lha:
    try:
        locs = [
            Location(
                d["name"],
                _cond(d.get("invariant", "true")),
                tuple((v, expr.parse(str(f))) for v, f in d.get("flow", {}).items()),
            )
            for d in data["locations"]
        ]
        edges = []
        for d in data["edges"]:
            sync = d.get("sync", AUTONOMOUS)
            trigger = AUTONOMOUS if sync == AUTONOMOUS else EventSet.from_json(sync)
            incs = [(i["array"], i["index"]) for i in d.get("increments", ())]
            edges.append(Edge(d["src"], d["dst"], trigger, _cond(d.get("guard", "true")),
                              Update.make(d.get("updates", {}), incs)))
        return Lha(
            locs,
            data["initial"] if not isinstance(data["initial"], str) else [data["initial"]],
            data.get("final", ()),
            data.get("variables", ()),
            edges,
            events=data.get("events"),
            arrays=data.get("arrays"),
            name=data.get("name", "lha"),
        )
    except KeyError as e:
        raise AutomatonError(f"automaton file is missing key {e.args[0]!r}") from None


def lha_to_dict(a: Lha) -> dict:
    edges = []
    for e in a.edges:
        d = {
            "src": e.source,
            "dst": e.target,
            "sync": AUTONOMOUS if e.autonomous else e.trigger.to_json(),
            "guard": expr.condition_text(e.guard),
            "updates": {v: expr.to_text(n) for v, n in e.update.assignments},
        }
        if e.update.increments:
            d["increments"] = [{"array": arr, "index": expr.to_text(n)}
                               for arr, n in e.update.increments]
        edges.append(d)
    out = {
        "name": a.name,
        "variables": list(a.variables),
        "locations": [
            {"name": l.name, "invariant": expr.condition_text(l.invariant),
             "flow": {v: expr.to_text(n) for v, n in l.flow}}
            for l in a.locations
        ],
        "initial": list(a.initial),
        "final": sorted(a.final),
        "edges": edges,
    }
    if a.events is not None:
        out["events"] = sorted(a.events)
    if a.arrays:
        out["arrays"] = dict(a.arrays)
    return out


def load_lha(path: Union[str, Path]) -> Lha:
    with open(path) as fh:
        return lha_from_dict(json.load(fh))


def save_lha(a: Lha, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(lha_to_dict(a), fh, indent=2)
