"""Stochastic Petri nets with discrete-event (DESP) semantics.

A :class:`GspnModel` is immutable once built. Trajectories are produced by
repeatedly applying :func:`step`, which fires the enabled transition with
the earliest scheduled occurrence and reschedules whatever the firing
affected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from . import expr
from .expr import Cmp, Node

EXP, DET, UNIF = "exp", "det", "unif"
LAW_KINDS = (EXP, DET, UNIF)


class ModelError(ValueError):
    """Invalid model structure, or a rate that evaluated to a nonpositive value."""

    def __init__(self, message: str, transition: Optional[str] = None):
        self.transition = transition
        if transition is not None:
            message = f"transition {transition!r}: {message}"
        super().__init__(message)


class Deadlock(Exception):
    """No transition is enabled; the trajectory ends."""


class RandomSource(Protocol):
    """The two draws the engine needs. ``numpy.random.Generator`` satisfies it."""

    def exponential(self, scale: float) -> float: ...

    def uniform(self, low: float, high: float) -> float: ...


@dataclass(frozen=True)
class DelayLaw:
    """Firing-delay distribution of a transition.

    ``exp`` takes its rate from the transition's rate expression; ``det`` waits
    exactly ``duration``; ``unif`` draws from ``[lo, hi)``.
    """

    kind: str = EXP
    duration: float = 0.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ModelError(f"unknown delay law {self.kind!r}")
        if self.kind == DET and not self.duration >= 0:
            raise ModelError(f"deterministic duration must be >= 0, got {self.duration}")
        if self.kind == UNIF and not self.lo < self.hi:
            raise ModelError(f"uniform law needs lo < hi, got [{self.lo}, {self.hi})")
        if self.kind == UNIF and self.lo < 0:
            raise ModelError("uniform delays must be nonnegative")

    def sample(self, rate: float, rng: RandomSource, elapsed: float = 0.0) -> float:
        # ``elapsed`` is the hook for time-dependent laws; none of ours use it
        if self.kind == EXP:
            return float(rng.exponential(1.0 / rate))
        if self.kind == DET:
            return self.duration
        return float(rng.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class Transition:
    name: str
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]
    rate: Node = expr.Num(1.0)
    law: DelayLaw = DelayLaw()
    # extra marking condition for enabling, on top of the input arcs
    guard: tuple[Cmp, ...] = ()

    @classmethod
    def make(
        cls,
        name: str,
        inputs: Mapping[str, int] | None = None,
        outputs: Mapping[str, int] | None = None,
        rate: Union[str, float, Node] = 1.0,
        law: DelayLaw | str = EXP,
        guard: str = "true",
    ) -> "Transition":
        if isinstance(law, str):
            law = DelayLaw(law)
        return cls(
            name,
            tuple((p, int(k)) for p, k in (inputs or {}).items()),
            tuple((p, int(k)) for p, k in (outputs or {}).items()),
            expr.as_node(rate),
            law,
            tuple(expr.parse_condition(guard)),
        )


@dataclass(frozen=True)
class TimedEvent:
    event: str
    time: float
    marking_after: tuple[int, ...]


@dataclass
class Configuration:
    """Current marking, clock, and the per-transition occurrence schedule (inf if disabled)."""

    marking: np.ndarray
    time: float
    schedule: np.ndarray

    def copy(self) -> "Configuration":
        return Configuration(self.marking.copy(), self.time, self.schedule.copy())


@dataclass(frozen=True)
class StopCondition:
    max_events: Optional[int] = None
    horizon: Optional[float] = None


class GspnModel:
    """Places, transitions, a Dirac initial marking, and optional P-invariants.

    Parameters
    ----------
    places : sequence of str
        Place names, in state-vector order.
    transitions : sequence of Transition
        Declaration order doubles as the tie-break priority.
    initial_marking : mapping or sequence
        Token counts, by place name or positionally.
    invariants : sequence of str, optional
        Linear equalities such as ``"D_A + D'_A = 1"``; only checked, never enforced.
    """

    def __init__(
        self,
        places: Sequence[str],
        transitions: Sequence[Transition],
        initial_marking: Union[Mapping[str, int], Sequence[int]],
        invariants: Sequence[str] = (),
        name: str = "model",
    ):
        self.name = name
        self.places = tuple(places)
        self.transitions = tuple(transitions)
        if len(set(self.places)) != len(self.places):
            raise ModelError("duplicate place names")
        tnames = [t.name for t in self.transitions]
        if len(set(tnames)) != len(tnames):
            raise ModelError("duplicate transition names")
        self.place_index = {p: i for i, p in enumerate(self.places)}
        self.transition_index = {t: i for i, t in enumerate(tnames)}

        if isinstance(initial_marking, Mapping):
            unknown = set(initial_marking) - set(self.places)
            if unknown:
                raise ModelError(f"initial marking names unknown places {sorted(unknown)}")
            m0 = [int(initial_marking.get(p, 0)) for p in self.places]
        else:
            m0 = [int(v) for v in initial_marking]
            if len(m0) != len(self.places):
                raise ModelError(
                    f"initial marking has {len(m0)} entries for {len(self.places)} places"
                )
        if any(v < 0 for v in m0):
            raise ModelError("initial marking must be nonnegative")
        self.initial_marking = np.array(m0, dtype=np.int64)
        self.initial_marking.setflags(write=False)

        n_p, n_t = len(self.places), len(self.transitions)
        pre = np.zeros((n_t, n_p), dtype=np.int64)
        post = np.zeros((n_t, n_p), dtype=np.int64)
        self._rate_fns = []
        rate_places = []
        for j, t in enumerate(self.transitions):
            for arcs, mat in ((t.inputs, pre), (t.outputs, post)):
                for p, k in arcs:
                    if p not in self.place_index:
                        raise ModelError(f"arc references unknown place {p!r}", t.name)
                    if k < 1:
                        raise ModelError(f"arc multiplicity must be >= 1, got {k}", t.name)
                    mat[j, self.place_index[p]] += k
            used = expr.names(t.rate)
            missing = used - set(self.place_index)
            if missing:
                raise ModelError(f"rate references unknown places {sorted(missing)}", t.name)
            gmissing = expr.names(t.guard) - set(self.place_index)
            if gmissing:
                raise ModelError(f"guard references unknown places {sorted(gmissing)}", t.name)
            used = used | expr.names(t.guard)
            rate_places.append({self.place_index[p] for p in used})
            self._rate_fns.append(expr.compile_node(t.rate, self.place_index, {}))
        self.pre = pre
        self.post = post
        self.delta = post - pre
        for a in (self.pre, self.post, self.delta):
            a.setflags(write=False)

        # transitions to reconsider after each firing: the fired one plus any
        # whose arcs, guard or rate read a place whose count changed
        reads = [set(np.nonzero(pre[j])[0]) | rate_places[j] for j in range(n_t)]
        self.affected: tuple[tuple[int, ...], ...] = tuple(
            tuple(
                k
                for k in range(n_t)
                if k == j or reads[k] & set(np.nonzero(self.delta[j])[0])
            )
            for j in range(n_t)
        )
        self.rate_places = tuple(frozenset(r) for r in rate_places)

        self.invariant_text = tuple(invariants)
        self.invariants: tuple[Cmp, ...] = tuple(
            _parse_invariant(s, self.place_index) for s in invariants
        )

    # -- convenience -------------------------------------------------------

    def __repr__(self) -> str:
        return (
            f"GspnModel({self.name!r}, {len(self.places)} places, "
            f"{len(self.transitions)} transitions)"
        )

    def transition(self, name: str) -> Transition:
        return self.transitions[self.transition_index[name]]

    def marking_vector(self, marking: Union[Mapping[str, int], Sequence[int]]) -> np.ndarray:
        if isinstance(marking, Mapping):
            unknown = set(marking) - set(self.places)
            if unknown:
                raise ModelError(f"marking names unknown places {sorted(unknown)}")
            return np.array([int(marking.get(p, 0)) for p in self.places], dtype=np.int64)
        m = np.asarray(marking, dtype=np.int64)
        if m.shape != (len(self.places),):
            raise ModelError(
                f"marking has shape {m.shape}, model has {len(self.places)} places"
            )
        return m

    def marking_dict(self, marking: Sequence[int]) -> dict[str, int]:
        return {p: int(v) for p, v in zip(self.places, marking)}

    def is_enabled(self, j: int, marking: Sequence[int]) -> bool:
        m = np.asarray(marking)
        if not np.all(m >= self.pre[j]):
            return False
        guard = self.transitions[j].guard
        return not guard or expr.holds_all(guard, self.marking_dict(m))

    def rate(self, j: int, marking: Sequence[int]) -> float:
        value = self._rate_fns[j](marking, ())
        if not value > 0:
            raise ModelError(f"rate evaluated to {value} on an enabled marking",
                             self.transitions[j].name)
        return value

    def fire(self, j: int, marking: np.ndarray) -> np.ndarray:
        return marking + self.delta[j]


def _parse_invariant(text: str, place_index: Mapping[str, int]) -> Cmp:
    atoms = expr.parse_condition(text)
    if len(atoms) != 1 or atoms[0].op != "=":
        raise ModelError(f"invariant {text!r} must be a single linear equality")
    atom = atoms[0]
    missing = expr.names(atom) - set(place_index)
    if missing:
        raise ModelError(f"invariant {text!r} references unknown places {sorted(missing)}")
    poly = expr.polynomial(expr.Bin("-", atom.left, atom.right))
    if poly is None or any(len(k) > 1 for k in poly):
        raise ModelError(f"invariant {text!r} is not linear")
    return atom


# ---------------------------------------------------------------------------
# Operations


def enabled_transitions(marking: Union[Mapping[str, int], Sequence[int]], model: GspnModel) -> set[str]:
    """Names of the transitions whose every input arc is covered by ``marking``."""
    m = model.marking_vector(marking)
    return {t.name for j, t in enumerate(model.transitions) if model.is_enabled(j, m)}


def evaluate_rate(
    t: Transition,
    marking: Union[Mapping[str, int], Sequence[int]],
    model: Optional[GspnModel] = None,
) -> float:
    """Value of ``t``'s rate expression on ``marking``.

    ``marking`` may be a name->count mapping, or a vector when ``model`` is given.
    """
    if isinstance(marking, Mapping):
        env = dict(marking)
        if model is not None:
            env = {p: 0 for p in model.places} | env
    else:
        if model is None:
            raise TypeError("a marking vector needs the model to resolve place names")
        env = model.marking_dict(model.marking_vector(marking))
    try:
        value = expr.evaluate(t.rate, env)
    except KeyError as e:
        raise ModelError(f"rate references unknown place {e.args[0]!r}", t.name) from None
    except ZeroDivisionError:
        raise ModelError("rate divides by zero", t.name) from None
    if not value > 0:
        raise ModelError(f"rate evaluated to {value}", t.name)
    return float(value)


def initial_configuration(model: GspnModel, rng: RandomSource) -> Configuration:
    m = model.initial_marking.copy()
    sched = np.full(len(model.transitions), math.inf)
    for j, t in enumerate(model.transitions):
        if model.is_enabled(j, m):
            rate = model.rate(j, m) if t.law.kind == EXP else 0.0
            sched[j] = t.law.sample(rate, rng)
    return Configuration(m, 0.0, sched)


def step(
    config: Configuration, model: GspnModel, rng: RandomSource
) -> tuple[Configuration, TimedEvent]:
    """Fire the earliest scheduled transition and reschedule what it affected.

    Ties on the schedule go to the earliest-declared transition. Raises
    :class:`Deadlock` when nothing is scheduled.
    """
    j = int(np.argmin(config.schedule))  # argmin returns the first minimum
    when = float(config.schedule[j])
    if math.isinf(when):
        raise Deadlock(f"no enabled transition at time {config.time}")
    assert when >= config.time, "schedule fell behind the clock"
    m = model.fire(j, config.marking)
    sched = config.schedule.copy()
    for k in model.affected[j]:
        t = model.transitions[k]
        if not model.is_enabled(k, m):
            sched[k] = math.inf
        elif t.law.kind == EXP:
            sched[k] = when + t.law.sample(model.rate(k, m), rng)
        elif k == j or math.isinf(sched[k]):
            sched[k] = when + t.law.sample(0.0, rng)
    new = Configuration(m, when, sched)
    return new, TimedEvent(model.transitions[j].name, when, tuple(int(v) for v in m))


def simulate(
    model: GspnModel, rng: RandomSource, stop: StopCondition | None = None
) -> Iterator[TimedEvent]:
    """Lazily generate a trajectory from the initial marking at time 0.

    Ends on deadlock, when ``stop`` is reached, or when the consumer stops.
    Events later than ``stop.horizon`` are not emitted.
    """
    stop = stop or StopCondition()
    config = initial_configuration(model, rng)
    count = 0
    while stop.max_events is None or count < stop.max_events:
        if stop.horizon is not None and config.schedule.min() > stop.horizon:
            return
        try:
            config, ev = step(config, model, rng)
        except Deadlock:
            return
        count += 1
        yield ev


def validate_invariants(
    model: GspnModel, marking: Union[Mapping[str, int], Sequence[int]]
) -> list[str]:
    """Declared P-invariants violated by ``marking``; an empty list means all hold."""
    env = model.marking_dict(model.marking_vector(marking))
    return [
        text
        for text, atom in zip(model.invariant_text, model.invariants)
        if not expr.holds_all([atom], env)
    ]


# ---------------------------------------------------------------------------
# Model files


def model_to_dict(model: GspnModel) -> dict:
    ts = []
    for t in model.transitions:
        d = {
            "name": t.name,
            "in": dict(t.inputs),
            "out": dict(t.outputs),
            "law": t.law.kind,
            "rate": expr.to_text(t.rate),
        }
        if t.guard:
            d["guard"] = expr.condition_text(t.guard)
        if t.law.kind == DET:
            d["delay"] = t.law.duration
        elif t.law.kind == UNIF:
            d["lo"], d["hi"] = t.law.lo, t.law.hi
        ts.append(d)
    return {
        "name": model.name,
        "places": list(model.places),
        "initial_marking": model.marking_dict(model.initial_marking),
        "transitions": ts,
        "invariants": list(model.invariant_text),
    }


def model_from_dict(data: Mapping) -> GspnModel:
    try:
        ts = []
        for d in data["transitions"]:
            kind = d.get("law", EXP)
            if kind == DET:
                law = DelayLaw(DET, duration=float(d.get("delay", d.get("rate", 0.0))))
            elif kind == UNIF:
                law = DelayLaw(UNIF, lo=float(d["lo"]), hi=float(d["hi"]))
            else:
                law = DelayLaw(kind)
            ts.append(
                Transition.make(
                    d["name"], d.get("in", {}), d.get("out", {}), str(d.get("rate", "1")), law,
                    d.get("guard", "true"),
                )
            )
        return GspnModel(
            data["places"],
            ts,
            data.get("initial_marking", {}),
            data.get("invariants", ()),
            name=data.get("name", "model"),
        )
    except KeyError as e:
        raise ModelError(f"model file is missing key {e.args[0]!r}") from None


def load_model(path: Union[str, Path]) -> GspnModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: GspnModel, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
