"""Built-in models: the circadian oscillator and the gene-expression toy net."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping, Sequence

from . import expr
from .desp import GspnModel, ModelError, Transition
from .lha import AUTONOMOUS, Edge, EventSet, Lha, Location, Update


@dataclass(frozen=True)
class CircadianRates:
    """Reaction constants of the circadian oscillator (per hour, unit volume)."""

    alpha_A: float = 50.0
    alpha_A_prime: float = 500.0
    alpha_R: float = 0.01
    alpha_R_prime: float = 50.0
    beta_A: float = 50.0
    beta_R: float = 5.0
    delta_MA: float = 10.0
    delta_MR: float = 0.5
    delta_A: float = 1.0
    delta_R: float = 0.2
    gamma_A: float = 1.0
    gamma_R: float = 1.0
    gamma_C: float = 2.0
    theta_A: float = 50.0
    theta_R: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value > 0:
                raise ModelError(f"rate {f.name} must be > 0, got {value}")

    def with_overrides(self, **overrides: float) -> "CircadianRates":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ModelError(f"unknown circadian rate(s) {sorted(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


CIRCADIAN_PLACES = ("D_A", "D'_A", "D_R", "D'_R", "M_A", "M_R", "A", "R", "C")


def _num(x: float) -> str:
    return repr(float(x))


def circadian(rates: CircadianRates | None = None) -> GspnModel:
    """Reactions R1-R16 with mass-action rates; one copy of each gene."""
    k = rates or CircadianRates()
    # (name, inputs, outputs, rate constant); the propensity multiplies in the input counts
    reactions = [
        ("R1", ("A", "D_A"), ("D'_A",), k.gamma_A),
        ("R2", ("D'_A",), ("A", "D_A"), k.theta_A),
        ("R3", ("A", "D_R"), ("D'_R",), k.gamma_R),
        ("R4", ("D'_R",), ("D_R", "A"), k.theta_R),
        ("R5", ("D'_A",), ("M_A", "D'_A"), k.alpha_A_prime),
        ("R6", ("D_A",), ("M_A", "D_A"), k.alpha_A),
        ("R7", ("D'_R",), ("M_R", "D'_R"), k.alpha_R_prime),
        ("R8", ("D_R",), ("M_R", "D_R"), k.alpha_R),
        ("R9", ("M_A",), ("M_A", "A"), k.beta_A),
        ("R10", ("M_R",), ("M_R", "R"), k.beta_R),
        ("R11", ("A", "R"), ("C",), k.gamma_C),
        ("R12", ("C",), ("R",), k.delta_A),
        ("R13", ("A",), (), k.delta_A),
        ("R14", ("R",), (), k.delta_R),
        ("R15", ("M_A",), (), k.delta_MA),
        ("R16", ("M_R",), (), k.delta_MR),
    ]
    ts = []
    for name, ins, outs, c in reactions:
        rate = " * ".join([_num(c), *ins])
        ts.append(Transition.make(name, {p: 1 for p in ins}, {p: 1 for p in outs}, rate))
    return GspnModel(
        CIRCADIAN_PLACES,
        ts,
        {"D_A": 1, "D_R": 1},
        invariants=("D_A + D'_A = 1", "D_R + D'_R = 1"),
        name="circadian",
    )


GENE_PLACES = ("protA", "geneA", "A_geneA", "mrnA")

GENE_DEFAULT_RATES = {
    "bind": 1.0,
    "unbind": 1.0,
    "transc": 1.0,
    "transc_bound": 1.0,
    "transl": 1.0,
    "degrade": 1.0,
}


def gene_expression(rates: Mapping[str, float] | None = None) -> GspnModel:
    """The five-event gene-expression net, initial marking (protA, geneA, A_geneA, mrnA) = (2, 1, 0, 0).

    ``transc`` may fire from either gene state: it has no input arcs and a
    marking guard ``geneA + A_geneA >= 1``. Its rate is
    ``transc * geneA + transc_bound * A_geneA``, so setting ``transc_bound``
    above ``transc`` makes transcription faster when the protein is bound.
    The other events fire at constant rates. Every constant defaults to 1, so
    with the defaults each enabled transition has rate 1.
    """
    k = dict(GENE_DEFAULT_RATES)
    if rates:
        unknown = set(rates) - set(k)
        if unknown:
            raise ModelError(f"unknown gene-expression rate(s) {sorted(unknown)}")
        k.update({name: float(v) for name, v in rates.items()})
    for name, v in k.items():
        if not v > 0:
            raise ModelError(f"rate {name} must be > 0, got {v}")
    ts = [
        Transition.make("bind", {"protA": 1, "geneA": 1}, {"A_geneA": 1},
                        _num(k["bind"])),
        Transition.make("unbind", {"A_geneA": 1}, {"protA": 1, "geneA": 1},
                        _num(k["unbind"])),
        Transition.make("degrade", {"protA": 1}, {}, _num(k["degrade"])),
        Transition.make("transc", {}, {"mrnA": 1},
                        f"{_num(k['transc'])} * geneA + {_num(k['transc_bound'])} * A_geneA",
                        guard="geneA + A_geneA >= 1"),
        Transition.make("transl", {"mrnA": 1}, {"mrnA": 1, "protA": 1},
                        _num(k["transl"])),
    ]
    return GspnModel(GENE_PLACES, ts, {"protA": 2, "geneA": 1}, name="gene_expression")


def transcription_counter(N: int, event: str = "transc", observed: str = "protA",
                          events: Sequence[str] | None = None) -> Lha:
    """Automaton accepting once ``event`` has occurred ``N`` times.

    ``n`` counts the occurrences, ``a`` follows ``observed`` and the clock
    ``t`` gives the completion time. Any other event only refreshes ``a``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    clock = (("t", expr.Num(1.0)),)
    cond = lambda s: tuple(expr.parse_condition(s))  # noqa: E731
    edges = [
        Edge("l0", "l0", EventSet(frozenset([event])), cond(f"n < {N}"),
             Update.make({"n": "n + 1", "a": observed})),
        Edge("l0", "l0", EventSet(None, frozenset([event])), cond(f"n < {N}"),
             Update.make({"a": observed})),
        Edge("l0", "l1", AUTONOMOUS, cond(f"n = {N}")),
    ]
    return Lha([Location("l0", (), clock), Location("l1", (), clock)], ["l0"], ["l1"],
               ["t", "n", "a"], edges, events=events, name=f"count({event}, N={N})")


def erlang(rate: float = 2.0) -> GspnModel:
    """One place, one exponential transition ``T`` that never disables."""
    if not rate > 0:
        raise ModelError(f"rate must be > 0, got {rate}")
    return GspnModel(["P"], [Transition.make("T", {"P": 1}, {"P": 1}, _num(rate))], {"P": 1},
                     name="erlang")
